//! Seeded synthetic walkers: grid flow generated straight from a gait model.
//!
//! Per frame, with gait phase `θ` advancing at the (slowly drifting) stride
//! frequency `f`:
//!
//! ```text
//! sway(θ) = a · Σ_h S_h sin(h·θ + φ_h^s)              lateral, fundamental f
//! bob(θ)  = a · Σ_h B_h sin(2h·θ + φ_h^b)             vertical, fundamental 2f
//! roll(θ) = R · a · Σ_h (S_h / ΣS) sin(h·(θ − λ) + φ_h^s)
//! u(cell) = sway + n_u,   v(cell) = bob + roll · x_offset(cell)/x_max + n_v
//! ```
//!
//! `a` is a slow amplitude modulation and `n` white noise. The roll term
//! follows the sway waveform (delayed by `λ`) and is antisymmetric across the
//! frame, so per-frame mean subtraction removes sway and bob but leaves the
//! roll untouched.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowgrid::{write_flow_cache, FlowField, FlowGridSpec, FlowSequence};
use crate::ingest::{DatasetManifest, Fps, GrayFrame, SequenceRecord, SubjectRecord};
use crate::seed;

pub const HARMONICS: usize = 4;
/// Human stride-frequency range used for profile sampling, Hz.
pub const STEP_FREQ_RANGE: (f64, f64) = (1.4, 2.3);
/// Preferred minimum step-frequency gap between subjects, Hz.
pub const PREFERRED_FREQ_SEPARATION: f64 = 0.04;
/// Time constant of the frequency and amplitude drift, seconds.
const DRIFT_TAU: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkerProfile {
    /// Hz.
    pub step_freq: f64,
    /// `(bob, sway)` amplitude per harmonic, px/frame.
    pub harmonic_amps: [[f64; 2]; HARMONICS],
    /// `(bob, sway)` phase per harmonic, radians.
    pub phase_offsets: [[f64; 2]; HARMONICS],
    /// Roll amplitude at the frame edge, px/frame.
    pub rotation_amp: f64,
    /// Gait-phase delay of the roll behind the sway, radians.
    pub roll_lag: f64,
    /// Relative standard deviation of the stride-frequency drift.
    pub freq_jitter: f64,
    /// Relative standard deviation of the amplitude drift.
    pub amp_jitter: f64,
    /// Independent per-cell flow noise, px/frame.
    pub noise_sigma: f64,
    /// Head shake: white translation noise shared by every cell of a frame,
    /// px/frame.
    #[serde(default)]
    pub shake_sigma: f64,
    /// Correlation time of the head shake, seconds; `0` makes it white.
    #[serde(default)]
    pub shake_tau: f64,
    /// Head shake about the optical axis: white roll noise, px/frame at the
    /// frame edge.
    #[serde(default)]
    pub roll_shake_sigma: f64,
    pub seed: u64,
}

impl WalkerProfile {
    pub fn validate(&self) -> Result<()> {
        let amps = self.harmonic_amps.iter().flatten();
        let scalars = [
            self.rotation_amp,
            self.freq_jitter,
            self.amp_jitter,
            self.noise_sigma,
            self.shake_sigma,
            self.roll_shake_sigma,
        ];
        if !(self.step_freq > 0.0 && self.step_freq.is_finite()) {
            return Err(Error::Invalid(format!("step_freq must be positive, got {}", self.step_freq)));
        }
        if amps.chain(&scalars).any(|&a| !(a >= 0.0 && a.is_finite())) {
            return Err(Error::Invalid("walker amplitudes must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Same walker with every amplitude scaled by its own factor in
    /// `1 ± spread`, drawn from `rng`, and the roll scaled once more within
    /// `1 ± roll_spread`.
    fn perturbed(&self, spread: f64, roll_spread: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut p = self.clone();
        let mut f = |x: &mut f64, s: f64| *x *= 1.0 + rng.random_range(-s..=s);
        for h in &mut p.harmonic_amps {
            f(&mut h[0], spread);
            f(&mut h[1], spread);
        }
        f(&mut p.rotation_amp, spread);
        f(&mut p.rotation_amp, roll_spread);
        p
    }
}

/// Translation and roll of one frame, before noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitSample {
    pub sway: f64,
    pub bob: f64,
    pub roll: f64,
}

struct Ou {
    rho: f64,
    x: f64,
}

impl Ou {
    fn new(dt: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            rho: (-dt / DRIFT_TAU).exp(),
            x: rng.sample(StandardNormal),
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.x = self.rho * self.x + (1.0 - self.rho * self.rho).sqrt() * z;
        self.x
    }
}

/// Deterministic gait signal for one session; also hands back the stream used
/// for per-cell noise.
fn gait(profile: &WalkerProfile, n: usize, fps: Fps, session_seed: u64) -> (Vec<GaitSample>, ChaCha8Rng) {
    let mut rng = seed::rng(profile.seed, &[session_seed]);
    let dt = 1.0 / fps.as_f64();
    let mut theta = rng.random_range(0.0..TAU);
    let mut freq = Ou::new(dt, &mut rng);
    let mut amp = Ou::new(dt, &mut rng);
    let sway_total: f64 = profile.harmonic_amps.iter().map(|h| h[1]).sum();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let a = (1.0 + profile.amp_jitter * amp.x).max(0.0);
        let mut s = GaitSample { sway: 0.0, bob: 0.0, roll: 0.0 };
        for (h, (amps, ph)) in profile.harmonic_amps.iter().zip(&profile.phase_offsets).enumerate() {
            let k = (h + 1) as f64;
            s.bob += amps[0] * (2.0 * k * theta + ph[0]).sin();
            s.sway += amps[1] * (k * theta + ph[1]).sin();
            if sway_total > 0.0 {
                s.roll += amps[1] / sway_total * (k * (theta - profile.roll_lag) + ph[1]).sin();
            }
        }
        s.bob *= a;
        s.sway *= a;
        s.roll *= a * profile.rotation_amp;
        out.push(s);
        let f = profile.step_freq * (1.0 + profile.freq_jitter * freq.x).max(0.0);
        theta = (theta + TAU * f * dt).rem_euclid(TAU);
        freq.step(&mut rng);
        amp.step(&mut rng);
    }
    (out, rng)
}

/// Signed horizontal offset of a column center over the half width.
fn x_offset(col: usize, m_x: usize) -> f64 {
    (col as f64 + 0.5) / m_x as f64 * 2.0 - 1.0
}

/// Grid flow for `duration` seconds of walking. Values are rounded to `f32`
/// so that sequences read back from a flow cache are identical.
pub fn gen_flow_sequence(
    profile: &WalkerProfile,
    duration: f64,
    fps: Fps,
    spec: &FlowGridSpec,
    session_seed: u64,
) -> Result<Vec<FlowField>> {
    profile.validate()?;
    let n = fps.frames_in(duration);
    if n == 0 {
        return Err(Error::Invalid(format!("{duration}s at {fps} fps is no frames")));
    }
    let (samples, mut rng) = gait(profile, n, fps, session_seed);
    let (m_x, m_y) = (spec.m_x, spec.m_y);
    let offsets: Vec<f64> = (0..m_x).map(|c| x_offset(c, m_x)).collect();
    let sigma = profile.noise_sigma;
    let mut fields = Vec::with_capacity(n);
    let dt = 1.0 / fps.as_f64();
    let rho = if profile.shake_tau > 0.0 { (-dt / profile.shake_tau).exp() } else { 0.0 };
    let mut shake = [Ou { rho, x: rng.sample(StandardNormal) }, Ou { rho, x: rng.sample(StandardNormal) }];
    for s in samples {
        let shake_u = profile.shake_sigma * shake[0].step(&mut rng);
        let shake_v = profile.shake_sigma * shake[1].step(&mut rng);
        let roll = s.roll + profile.roll_shake_sigma * rng.sample::<f64, _>(StandardNormal);
        let mut f = FlowField::zeros(m_x, m_y);
        for r in 0..m_y {
            for c in 0..m_x {
                let i = r * m_x + c;
                let nu: f64 = rng.sample(StandardNormal);
                let nv: f64 = rng.sample(StandardNormal);
                f.u[i] = (s.sway + shake_u + sigma * nu) as f32 as f64;
                f.v[i] = (s.bob + shake_v + roll * offsets[c] + sigma * nv) as f32 as f64;
            }
        }
        fields.push(f);
    }
    Ok(fields)
}

/// Distributions walker profiles are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfilePrior {
    /// Range of the first bob harmonic, px/frame.
    pub bob_amp: (f64, f64),
    /// Range of the first sway harmonic, px/frame.
    pub sway_amp: (f64, f64),
    /// Range of the ratio between consecutive harmonic amplitudes.
    pub harmonic_decay: (f64, f64),
    pub rotation_amp: (f64, f64),
    pub freq_jitter: f64,
    pub amp_jitter: f64,
    pub noise_sigma: f64,
    pub shake_sigma: f64,
    pub shake_tau: f64,
    pub roll_shake_sigma: f64,
}

/// The defaults make roll the dominant identity cue: translation is small
/// next to roll and to per-cell noise, so stabilizing it away costs some
/// accuracy but not most of it.
impl Default for ProfilePrior {
    fn default() -> Self {
        Self {
            bob_amp: (0.0375, 0.1),
            sway_amp: (0.025, 0.075),
            harmonic_decay: (0.15, 0.6),
            rotation_amp: (1.0, 2.5),
            freq_jitter: 0.03,
            amp_jitter: 0.15,
            noise_sigma: 0.8,
            shake_sigma: 0.0,
            shake_tau: 0.0,
            roll_shake_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub n_subjects: usize,
    /// One entry per session; session `k` is recorded on camera `D{k+1}`.
    pub session_durations: Vec<f64>,
    pub fps: Fps,
    pub m_x: usize,
    pub m_y: usize,
    pub master_seed: u64,
    /// Minimum pairwise step-frequency gap. `None` uses the preferred 0.04 Hz,
    /// shrunk to half the feasible spacing when the range cannot hold that
    /// many subjects.
    pub min_freq_separation: Option<f64>,
    /// Relative per-session amplitude perturbation.
    pub session_spread: f64,
    /// Extra relative per-session perturbation of the roll amplitude: the
    /// camera sits at a slightly different place on the head each session.
    pub session_roll_spread: f64,
    pub prior: ProfilePrior,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            n_subjects: 6,
            session_durations: vec![420.0, 180.0],
            fps: Fps::integer(15),
            m_x: 10,
            m_y: 5,
            master_seed: 0,
            min_freq_separation: None,
            session_spread: 0.05,
            session_roll_spread: 0.0,
            prior: ProfilePrior::default(),
        }
    }
}

impl PopulationConfig {
    pub fn separation(&self) -> Result<f64> {
        let (lo, hi) = STEP_FREQ_RANGE;
        let gaps = self.n_subjects.saturating_sub(1).max(1) as f64;
        match self.min_freq_separation {
            Some(s) if s < 0.0 || s * gaps > hi - lo => Err(Error::Invalid(format!(
                "{} subjects cannot be {s} Hz apart within {lo}–{hi} Hz",
                self.n_subjects
            ))),
            Some(s) => Ok(s),
            None => Ok(PREFERRED_FREQ_SEPARATION.min(0.5 * (hi - lo) / gaps)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSession {
    pub sequence_id: String,
    pub camera_id: String,
    pub session_tag: String,
    pub flows: Vec<FlowField>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSubject {
    pub subject_id: String,
    pub profile: WalkerProfile,
    pub sessions: Vec<SyntheticSession>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub config: PopulationConfig,
    pub grid: FlowGridSpec,
    pub subjects: Vec<SyntheticSubject>,
}

pub fn session_names(k: usize) -> (String, String, String) {
    let tag = match k {
        0 => "train".to_string(),
        1 => "same-day".to_string(),
        2 => "week-later".to_string(),
        _ => format!("session{}", k + 1),
    };
    (format!("walk{}", k + 1), format!("D{}", k + 1), tag)
}

/// Step frequencies with a guaranteed minimum gap: uniform over the feasible
/// configurations, assigned to subjects in random order.
fn draw_frequencies(n: usize, sep: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (lo, hi) = STEP_FREQ_RANGE;
    let slack = (hi - lo) - sep * n.saturating_sub(1) as f64;
    let mut u: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=slack)).collect();
    u.sort_by(f64::total_cmp);
    let mut f: Vec<f64> = u.iter().enumerate().map(|(i, x)| lo + x + i as f64 * sep).collect();
    f.shuffle(rng);
    f
}

/// Profiles only, without generating any flow.
pub fn draw_profiles(cfg: &PopulationConfig) -> Result<Vec<WalkerProfile>> {
    if cfg.n_subjects < 2 {
        return Err(Error::Invalid("a population needs at least two subjects".into()));
    }
    let sep = cfg.separation()?;
    let freqs = draw_frequencies(cfg.n_subjects, sep, &mut seed::rng(cfg.master_seed, &[0]));
    let p = &cfg.prior;
    let range = |rng: &mut ChaCha8Rng, (a, b): (f64, f64)| if b > a { rng.random_range(a..b) } else { a };
    let profiles = freqs
        .into_iter()
        .enumerate()
        .map(|(i, step_freq)| {
            let mut rng = seed::rng(cfg.master_seed, &[1, i as u64]);
            let mut harmonic_amps = [[0.0; 2]; HARMONICS];
            let mut phase_offsets = [[0.0; 2]; HARMONICS];
            let mut level = [range(&mut rng, p.bob_amp), range(&mut rng, p.sway_amp)];
            for h in 0..HARMONICS {
                for c in 0..2 {
                    harmonic_amps[h][c] = level[c];
                    phase_offsets[h][c] = rng.random_range(0.0..TAU);
                    level[c] *= range(&mut rng, p.harmonic_decay);
                }
            }
            WalkerProfile {
                step_freq,
                harmonic_amps,
                phase_offsets,
                rotation_amp: range(&mut rng, p.rotation_amp),
                roll_lag: rng.random_range(0.0..TAU),
                freq_jitter: p.freq_jitter,
                amp_jitter: p.amp_jitter,
                noise_sigma: p.noise_sigma,
                shake_sigma: p.shake_sigma,
                shake_tau: p.shake_tau,
                roll_shake_sigma: p.roll_shake_sigma,
                seed: seed::derive(cfg.master_seed, &[2, i as u64]),
            }
        })
        .collect();
    Ok(profiles)
}

/// Profile of session `k` of a subject: the base walker with its per-session
/// amplitude perturbation applied.
pub fn session_profile(base: &WalkerProfile, k: usize, spread: f64, roll_spread: f64) -> WalkerProfile {
    base.perturbed(spread, roll_spread, &mut seed::rng(base.seed, &[u64::MAX, k as u64]))
}

pub fn gen_population(cfg: &PopulationConfig) -> Result<SyntheticDataset> {
    if cfg.session_durations.is_empty() {
        return Err(Error::Invalid("a population needs at least one session".into()));
    }
    let grid = FlowGridSpec {
        m_x: cfg.m_x,
        m_y: cfg.m_y,
        ..FlowGridSpec::default()
    };
    let width = (cfg.n_subjects as f64).log10().floor() as usize + 1;
    let subjects = draw_profiles(cfg)?
        .into_iter()
        .enumerate()
        .map(|(i, profile)| {
            let sessions = cfg
                .session_durations
                .iter()
                .enumerate()
                .map(|(k, &d)| {
                    let p = session_profile(&profile, k, cfg.session_spread, cfg.session_roll_spread);
                    let (sequence_id, camera_id, session_tag) = session_names(k);
                    Ok(SyntheticSession {
                        sequence_id,
                        camera_id,
                        session_tag,
                        flows: gen_flow_sequence(&p, d, cfg.fps, &grid, k as u64)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SyntheticSubject {
                subject_id: format!("p{:0width$}", i + 1),
                profile,
                sessions,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset {
        config: cfg.clone(),
        grid,
        subjects,
    })
}

impl SyntheticDataset {
    /// Manifest describing the dataset as [`write_dataset`] lays it out.
    pub fn manifest(&self, base_dir: &Path) -> DatasetManifest {
        let subjects = self
            .subjects
            .iter()
            .map(|s| SubjectRecord {
                subject_id: s.subject_id.clone(),
                sequences: s
                    .sessions
                    .iter()
                    .map(|q| SequenceRecord {
                        sequence_id: q.sequence_id.clone(),
                        camera_id: q.camera_id.clone(),
                        session_tag: q.session_tag.clone(),
                        fps: self.config.fps,
                        frame_dir: None,
                        frame_count: q.flows.len() + 1,
                        flow_cache: Some(cache_path(&s.subject_id, &q.sequence_id)),
                    })
                    .collect(),
            })
            .collect();
        DatasetManifest {
            subjects,
            base_dir: base_dir.to_path_buf(),
        }
    }
}

fn cache_path(subject_id: &str, sequence_id: &str) -> PathBuf {
    Path::new("flows").join(subject_id).join(format!("{sequence_id}.egfl"))
}

/// Writes one flow cache per session, `profiles.json` and `manifest.json`
/// into `dir`; returns the manifest.
pub fn write_dataset(ds: &SyntheticDataset, dir: &Path) -> Result<DatasetManifest> {
    for s in &ds.subjects {
        let sub = dir.join("flows").join(&s.subject_id);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for q in &s.sessions {
            let seq = FlowSequence {
                fps: ds.config.fps,
                m_x: ds.grid.m_x,
                m_y: ds.grid.m_y,
                fields: q.flows.clone(),
            };
            write_flow_cache(&dir.join(cache_path(&s.subject_id, &q.sequence_id)), &seq)?;
        }
    }
    let manifest = ds.manifest(dir);
    let profiles: Vec<(&str, &WalkerProfile)> =
        ds.subjects.iter().map(|s| (s.subject_id.as_str(), &s.profile)).collect();
    let table = serde_json::json!({ "config": ds.config, "profiles": profiles });
    crate::write_atomic(
        &dir.join("profiles.json"),
        &serde_json::to_vec_pretty(&table).expect("profiles serialize"),
    )?;
    manifest.write(&dir.join("manifest.json"))?;
    Ok(manifest)
}

fn texture(x: f64, y: f64) -> f64 {
    0.5 + 0.18 * (0.21 * x + 0.13 * y).sin()
        + 0.12 * (0.07 * x - 0.19 * y + 1.0).sin()
        + 0.08 * (0.29 * x + 0.05 * y + 2.0).sin()
        + 0.06 * (0.11 * x * 0.5 + 0.23 * y + 0.5).cos()
}

/// Renders `n_flows + 1` frames of an analytic texture moved by the walker's
/// noise-free motion, together with the exact grid flow between them.
///
/// Translation shifts the whole texture; roll shears it vertically in
/// proportion to the horizontal offset from the frame center.
pub fn render_walk(
    profile: &WalkerProfile,
    n_flows: usize,
    fps: Fps,
    width: usize,
    height: usize,
    spec: &FlowGridSpec,
    session_seed: u64,
) -> Result<(Vec<GrayFrame>, Vec<FlowField>)> {
    profile.validate()?;
    let (samples, _) = gait(profile, n_flows, fps, session_seed);
    let (mut dx, mut dy, mut droll) = (0.0, 0.0, 0.0);
    let mut frames = Vec::with_capacity(n_flows + 1);
    let mut flows = Vec::with_capacity(n_flows);
    let offsets: Vec<f64> = (0..width).map(|x| (x as f64 + 0.5) / width as f64 * 2.0 - 1.0).collect();
    for k in 0..=n_flows {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for (x, off) in offsets.iter().enumerate() {
                let sx = x as f64 - dx;
                let sy = y as f64 - dy - droll * off;
                data.push(texture(sx, sy) as f32);
            }
        }
        frames.push(GrayFrame::new(width, height, data));
        if k == n_flows {
            break;
        }
        let s = samples[k];
        let mut f = FlowField::zeros(spec.m_x, spec.m_y);
        for r in 0..spec.m_y {
            for c in 0..spec.m_x {
                f.u[r * spec.m_x + c] = s.sway;
                f.v[r * spec.m_x + c] = s.bob + s.roll * x_offset(c, spec.m_x);
            }
        }
        flows.push(f);
        dx += s.sway;
        dy += s.bob;
        droll += s.roll;
    }
    Ok((frames, flows))
}

/// Average magnitude spectrum of the mean vertical flow, over consecutive
/// non-overlapping segments of `seg` frames. Bin `j` is `j·fps/seg` Hz.
pub fn mean_spectrum(flows: &[FlowField], seg: usize) -> Vec<f64> {
    let series: Vec<f64> = flows.iter().map(|f| f.v.iter().sum::<f64>() / f.v.len() as f64).collect();
    let n_seg = series.len() / seg.max(1);
    let mut acc = vec![0.0; seg / 2 + 1];
    for s in 0..n_seg {
        let x = &series[s * seg..(s + 1) * seg];
        let mean = x.iter().sum::<f64>() / seg as f64;
        for (j, a) in acc.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let w = TAU * (j * t) as f64 / seg as f64;
                re += (v - mean) * w.cos();
                im -= (v - mean) * w.sin();
            }
            *a += (re * re + im * im).sqrt() / n_seg as f64;
        }
    }
    acc
}
