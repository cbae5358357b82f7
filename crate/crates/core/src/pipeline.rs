//! Protocol runners: windows from flow, model training for each back end,
//! identification over fused video segments, and target verification.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cnn::{self, CnnConfig, CnnModel};
use crate::error::{Error, Result};
use crate::eval::{self, CmcCurve, RocCurve};
use crate::flowgrid::{
    build_windows, compute_grid_flow, read_flow_cache, resample_indices, stabilize_field, FeatureWindow,
    FlowField, FlowGridSpec, FlowSequence, STRIDE_SECONDS, TARGET_FPS, WINDOW_SECONDS,
};
use crate::ingest::{DatasetManifest, Fps, FrameSequence, SeqRef, SplitPlan};
use crate::lpc::{lpc_descriptor, LpcConfig, NormStats};
use crate::svm::{self, SvmConfig, SvmModelFile};
use crate::synth::SyntheticDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    LpcSvm,
    RawSvm,
    Cnn,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::LpcSvm => "lpc-svm",
            Backend::RawSvm => "raw-svm",
            Backend::Cnn => "cnn",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lpc-svm" => Ok(Backend::LpcSvm),
            "raw-svm" => Ok(Backend::RawSvm),
            "cnn" => Ok(Backend::Cnn),
            _ => Err(Error::Invalid(format!(
                "unknown backend `{s}` (expected lpc-svm, raw-svm or cnn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fuse {
    Map,
    Mode,
}

impl FromStr for Fuse {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "map" => Ok(Fuse::Map),
            "mode" => Ok(Fuse::Mode),
            _ => Err(Error::Invalid(format!("unknown fusion `{s}` (expected map or mode)"))),
        }
    }
}

/// How windows were produced, stored inside every model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontEnd {
    pub backend: Backend,
    pub stabilize: bool,
    pub lpc: LpcConfig,
}

/// All windows of one sequence.
#[derive(Debug, Clone)]
pub struct SequenceWindows {
    pub subject_id: String,
    pub sequence_id: String,
    pub camera_id: String,
    pub windows: Vec<FeatureWindow>,
}

impl SequenceWindows {
    pub fn seq_ref(&self) -> SeqRef {
        SeqRef::new(&self.subject_id, &self.sequence_id)
    }
}

/// Grid flow of a frame sequence after nearest-frame resampling to 15 fps.
pub fn flow_from_frames(seq: &FrameSequence, spec: &FlowGridSpec) -> Result<FlowSequence> {
    let idx = resample_indices(seq.frames.len(), seq.fps, TARGET_FPS);
    if idx.len() < 2 {
        return Err(Error::TooShort(format!(
            "{} frames at {} fps leave fewer than 2 frames at {TARGET_FPS} fps",
            seq.frames.len(),
            seq.fps
        )));
    }
    let fields = idx
        .windows(2)
        .map(|p| compute_grid_flow(&seq.frames[p[0]], &seq.frames[p[1]], spec))
        .collect::<Result<Vec<_>>>()?;
    Ok(FlowSequence {
        fps: TARGET_FPS,
        m_x: spec.m_x,
        m_y: spec.m_y,
        fields,
    })
}

/// 4-second windows at 2-second stride from 15 fps grid flow, optionally
/// stabilized frame by frame.
pub fn windows_from_flows(
    flows: &[FlowField],
    fps: Fps,
    stabilize: bool,
    subject_id: &str,
) -> Result<Vec<FeatureWindow>> {
    if fps != TARGET_FPS {
        return Err(Error::Invalid(format!(
            "flow at {fps} fps; extract at {TARGET_FPS} fps first"
        )));
    }
    let stabilized;
    let flows = if stabilize {
        stabilized = flows.iter().map(stabilize_field).collect::<Vec<_>>();
        &stabilized[..]
    } else {
        flows
    };
    let mut ws = build_windows(flows, fps, WINDOW_SECONDS, STRIDE_SECONDS)?;
    for w in &mut ws {
        w.subject_id = Some(subject_id.to_string());
    }
    Ok(ws)
}

/// Windows of `refs` read from their flow caches.
pub fn load_corpus(manifest: &DatasetManifest, refs: &[SeqRef], stabilize: bool) -> Result<Vec<SequenceWindows>> {
    refs.iter()
        .map(|r| {
            let rec = manifest.sequence(&r.subject_id, &r.sequence_id)?;
            let cache = rec.flow_cache.as_ref().ok_or_else(|| {
                Error::Invalid(format!(
                    "sequence `{}/{}` has no flow cache; run extract first",
                    r.subject_id, r.sequence_id
                ))
            })?;
            let seq = read_flow_cache(&manifest.resolve(cache))?;
            Ok(SequenceWindows {
                subject_id: r.subject_id.clone(),
                sequence_id: r.sequence_id.clone(),
                camera_id: rec.camera_id.clone(),
                windows: windows_from_flows(&seq.fields, seq.fps, stabilize, &r.subject_id)?,
            })
        })
        .collect()
}

/// Windows of every session of an in-memory synthetic dataset.
pub fn synthetic_corpus(ds: &SyntheticDataset, stabilize: bool) -> Result<Vec<SequenceWindows>> {
    let mut out = Vec::new();
    for s in &ds.subjects {
        for q in &s.sessions {
            out.push(SequenceWindows {
                subject_id: s.subject_id.clone(),
                sequence_id: q.sequence_id.clone(),
                camera_id: q.camera_id.clone(),
                windows: windows_from_flows(&q.flows, ds.config.fps, stabilize, &s.subject_id)?,
            });
        }
    }
    Ok(out)
}

/// The sequences named by `refs`, in that order.
pub fn select<'a>(corpus: &'a [SequenceWindows], refs: &[SeqRef]) -> Result<Vec<&'a SequenceWindows>> {
    refs.iter()
        .map(|r| {
            corpus
                .iter()
                .find(|s| s.subject_id == r.subject_id && s.sequence_id == r.sequence_id)
                .ok_or_else(|| Error::UnknownId(format!("{}/{}", r.subject_id, r.sequence_id)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub backend: Backend,
    pub stabilize: bool,
    /// SVM settings; `None` picks the back end's defaults.
    pub svm: Option<SvmConfig>,
    pub cnn: CnnConfig,
    pub lpc: LpcConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            backend: Backend::LpcSvm,
            stabilize: false,
            svm: None,
            cnn: CnnConfig::default(),
            lpc: LpcConfig::default(),
        }
    }
}

impl TrainOptions {
    pub fn frontend(&self) -> FrontEnd {
        FrontEnd {
            backend: self.backend,
            stabilize: self.stabilize,
            lpc: self.lpc,
        }
    }

    pub fn svm_config(&self) -> SvmConfig {
        self.svm.unwrap_or(match self.backend {
            Backend::RawSvm => SvmConfig::raw(),
            _ => SvmConfig::lpc(),
        })
    }
}

/// Fixed-length vector a window contributes to an SVM, before z-scoring.
fn svm_features(frontend: &FrontEnd, w: &FeatureWindow) -> Result<Vec<f64>> {
    match frontend.backend {
        Backend::LpcSvm => Ok(lpc_descriptor(w, &frontend.lpc)?.coeffs),
        Backend::RawSvm => Ok(w.data.clone()),
        Backend::Cnn => Err(Error::Invalid("the CNN back end has no SVM features".into())),
    }
}

/// Z-scored LPC descriptors, the hand-designed counterpart of the CNN
/// descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct LpcFeaturizer {
    pub config: LpcConfig,
    pub norm: NormStats,
}

impl LpcFeaturizer {
    pub fn fit(windows: &[&FeatureWindow], config: LpcConfig) -> Result<Self> {
        let raw = windows
            .iter()
            .map(|w| Ok(lpc_descriptor(w, &config)?.coeffs))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            norm: NormStats::fit(&raw)?,
        })
    }

    pub fn apply(&self, w: &FeatureWindow) -> Result<Vec<f64>> {
        self.norm.apply(&lpc_descriptor(w, &self.config)?.coeffs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Svm { frontend: FrontEnd, file: SvmModelFile },
    Cnn { frontend: FrontEnd, model: CnnModel },
}

impl Model {
    pub fn train(
        windows: &[&FeatureWindow],
        labels: &[usize],
        classes: &[String],
        opts: &TrainOptions,
    ) -> Result<Model> {
        let frontend = opts.frontend();
        let meta = serde_json::to_value(frontend).expect("front end serializes");
        match opts.backend {
            Backend::Cnn => {
                let mut model = cnn::train(windows, labels, classes, &opts.cnn)?;
                model.frontend = meta;
                Ok(Model::Cnn { frontend, model })
            }
            Backend::LpcSvm | Backend::RawSvm => {
                let raw = windows
                    .iter()
                    .map(|w| svm_features(&frontend, w))
                    .collect::<Result<Vec<_>>>()?;
                let norm = NormStats::fit(&raw)?;
                let xs = raw.iter().map(|x| norm.apply(x)).collect::<Result<Vec<_>>>()?;
                let ensemble = svm::train_multiclass(&xs, labels, classes, &opts.svm_config())?;
                Ok(Model::Svm {
                    frontend,
                    file: SvmModelFile {
                        ensemble,
                        norm: Some(norm),
                        frontend: meta,
                    },
                })
            }
        }
    }

    pub fn frontend(&self) -> &FrontEnd {
        match self {
            Model::Svm { frontend, .. } | Model::Cnn { frontend, .. } => frontend,
        }
    }

    pub fn classes(&self) -> &[String] {
        match self {
            Model::Svm { file, .. } => &file.ensemble.classes,
            Model::Cnn { model, .. } => &model.classes,
        }
    }

    pub fn class_index(&self, id: &str) -> Option<usize> {
        self.classes().iter().position(|c| c == id)
    }

    pub fn window_probs(&self, w: &FeatureWindow) -> Result<Vec<f64>> {
        match self {
            Model::Cnn { model, .. } => model.predict_proba(w),
            Model::Svm { frontend, file } => {
                let x = svm_features(frontend, w)?;
                let x = match &file.norm {
                    Some(n) => n.apply(&x)?,
                    None => x,
                };
                file.ensemble.predict_proba(&x)
            }
        }
    }

    /// CNN hidden activation, or the normalized SVM input vector.
    pub fn descriptor(&self, w: &FeatureWindow) -> Result<Vec<f64>> {
        match self {
            Model::Cnn { model, .. } => model.extract_descriptor(w),
            Model::Svm { frontend, file } => {
                let x = svm_features(frontend, w)?;
                match &file.norm {
                    Some(n) => n.apply(&x),
                    None => Ok(x),
                }
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Model::Svm { file, .. } => svm::svm_model_bytes(file),
            Model::Cnn { model, .. } => cnn::cnn_model_bytes(model),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            Model::Svm { file, .. } => svm::write_svm_model(path, file),
            Model::Cnn { model, .. } => cnn::write_cnn_model(path, model),
        }
    }

    /// Reads either model format, telling them apart by magic.
    pub fn load(path: &Path) -> Result<Model> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let parse_frontend = |v: &serde_json::Value| -> Result<FrontEnd> {
            serde_json::from_value(v.clone())
                .map_err(|e| Error::Format(format!("{}: bad front-end metadata: {e}", path.display())))
        };
        match bytes.get(..4) {
            Some(m) if m == svm::SVM_MAGIC => {
                let file = svm::svm_model_from_bytes(&bytes)?;
                Ok(Model::Svm {
                    frontend: parse_frontend(&file.frontend)?,
                    file,
                })
            }
            Some(m) if m == cnn::CNN_MAGIC => {
                let model = cnn::cnn_model_from_bytes(&bytes)?;
                Ok(Model::Cnn {
                    frontend: parse_frontend(&model.frontend)?,
                    model,
                })
            }
            _ => Err(Error::Format(format!("{}: not a model file", path.display()))),
        }
    }
}

/// Per-window class distributions of one test sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceProbs {
    pub subject_id: String,
    pub sequence_id: String,
    pub t_starts: Vec<f64>,
    pub probs: Vec<Vec<f64>>,
}

pub fn predict_sequences(model: &Model, seqs: &[&SequenceWindows]) -> Result<Vec<SequenceProbs>> {
    seqs.iter()
        .map(|s| {
            Ok(SequenceProbs {
                subject_id: s.subject_id.clone(),
                sequence_id: s.sequence_id.clone(),
                t_starts: s.windows.iter().map(|w| w.t_start).collect(),
                probs: s
                    .windows
                    .iter()
                    .map(|w| model.window_probs(w))
                    .collect::<Result<Vec<_>>>()?,
            })
        })
        .collect()
}

/// Windows per evaluation segment of `seconds`.
pub fn group_size(seconds: f64) -> usize {
    eval::windows_for_duration(seconds, WINDOW_SECONDS, STRIDE_SECONDS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdTrial {
    pub subject_id: String,
    pub sequence_id: String,
    pub t_start: f64,
    pub predicted: String,
    pub correct: bool,
    /// 1-based rank of the true subject.
    pub truth_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyReport {
    pub classes: Vec<String>,
    pub duration_s: f64,
    pub fuse: Fuse,
    pub group_windows: usize,
    pub top1: f64,
    pub top2: f64,
    pub cmc: CmcCurve,
    pub trials: Vec<IdTrial>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Non-overlapping segments of `duration_s`, each classified by fusing its
/// windows.
pub fn identify(probs: &[SequenceProbs], classes: &[String], duration_s: f64, fuse: Fuse) -> Result<IdentifyReport> {
    let g = group_size(duration_s);
    let mut trials = Vec::new();
    let mut rankings = Vec::new();
    let mut truths = Vec::new();
    let mut warnings = Vec::new();
    for sp in probs {
        let truth = classes
            .iter()
            .position(|c| *c == sp.subject_id)
            .ok_or_else(|| Error::UnknownId(format!("test subject `{}` is not a model class", sp.subject_id)))?;
        let groups = eval::window_groups(sp.probs.len(), g);
        if groups.is_empty() {
            warnings.push(format!(
                "{}/{}: {} windows, shorter than one {duration_s}s segment",
                sp.subject_id,
                sp.sequence_id,
                sp.probs.len()
            ));
        }
        for r in groups {
            let window_probs = &sp.probs[r.clone()];
            let scores = match fuse {
                Fuse::Map => eval::log_posterior_sums(window_probs)?,
                Fuse::Mode => {
                    let mut votes = vec![0.0; classes.len()];
                    for p in window_probs {
                        votes[eval::argmax(p)] += 1.0;
                    }
                    votes
                }
            };
            let ranking = eval::ranking(&scores);
            let pred = ranking[0];
            trials.push(IdTrial {
                subject_id: sp.subject_id.clone(),
                sequence_id: sp.sequence_id.clone(),
                t_start: sp.t_starts[r.start],
                predicted: classes[pred].clone(),
                correct: pred == truth,
                truth_rank: ranking.iter().position(|&c| c == truth).unwrap() + 1,
            });
            rankings.push(ranking);
            truths.push(truth);
        }
    }
    if trials.is_empty() {
        return Err(Error::Invalid(format!("no test segment of {duration_s}s")));
    }
    let cmc = eval::cmc(&rankings, &truths)?;
    Ok(IdentifyReport {
        classes: classes.to_vec(),
        duration_s,
        fuse,
        group_windows: g,
        top1: cmc.top_k[0],
        top2: cmc.top_k.get(1).copied().unwrap_or(1.0),
        cmc,
        trials,
        warnings,
    })
}

/// Training windows for a target-vs-rest verifier; label 0 is the target.
/// Target windows are repeated cyclically until both sides are the same size.
pub fn verification_training<'a>(
    target: &[&'a SequenceWindows],
    others: &[&'a SequenceWindows],
) -> Result<(Vec<&'a FeatureWindow>, Vec<usize>)> {
    let pos: Vec<&FeatureWindow> = target.iter().flat_map(|s| &s.windows).collect();
    let neg: Vec<&FeatureWindow> = others.iter().flat_map(|s| &s.windows).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Protocol("verification needs target and non-target windows".into()));
    }
    let n_pos = pos.len().max(neg.len());
    let mut windows: Vec<&FeatureWindow> = pos.iter().cycle().take(n_pos).copied().collect();
    let mut labels = vec![0; n_pos];
    windows.extend(&neg);
    labels.extend(std::iter::repeat_n(1, neg.len()));
    Ok((windows, labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyTrial {
    pub subject_id: String,
    pub sequence_id: String,
    pub t_start: f64,
    pub is_target: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub target: String,
    pub method: String,
    pub duration_s: f64,
    pub group_windows: usize,
    pub eer: f64,
    pub roc: RocCurve,
    pub trials: Vec<VerifyTrial>,
}

fn verify_report(target: &str, method: &str, duration_s: f64, trials: Vec<VerifyTrial>) -> Result<VerifyReport> {
    let scores: Vec<f64> = trials.iter().map(|t| t.score).collect();
    let labels: Vec<bool> = trials.iter().map(|t| t.is_target).collect();
    let roc = eval::roc_and_eer(&scores, &labels)?;
    Ok(VerifyReport {
        target: target.to_string(),
        method: method.to_string(),
        duration_s,
        group_windows: group_size(duration_s),
        eer: roc.eer,
        roc,
        trials,
    })
}

/// Segment score `Σ_t log P_t(target) − log P_t(rest)` from a verifier
/// whose class `positive` is the target.
pub fn classifier_verification(
    probs: &[SequenceProbs],
    positive: usize,
    target: &str,
    method: &str,
    duration_s: f64,
) -> Result<VerifyReport> {
    let g = group_size(duration_s);
    let mut trials = Vec::new();
    for sp in probs {
        for r in eval::window_groups(sp.probs.len(), g) {
            let score = sp.probs[r.clone()]
                .iter()
                .map(|p| {
                    let q = p[positive];
                    q.max(eval::LOG_FLOOR).ln() - (1.0 - q).max(eval::LOG_FLOOR).ln()
                })
                .sum();
            trials.push(VerifyTrial {
                subject_id: sp.subject_id.clone(),
                sequence_id: sp.sequence_id.clone(),
                t_start: sp.t_starts[r.start],
                is_target: sp.subject_id == target,
                score,
            });
        }
    }
    verify_report(target, method, duration_s, trials)
}

/// Per-window descriptors of one probe sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDescriptors {
    pub subject_id: String,
    pub sequence_id: String,
    pub t_starts: Vec<f64>,
    pub descriptors: Vec<Vec<f64>>,
}

/// Nearest-neighbour verification against a gallery of target descriptors:
/// segments are scored by [`eval::nn_video_score`], so a threshold sweep
/// over the scores reproduces majority voting at every threshold.
pub fn nn_verification(
    gallery: &[Vec<f64>],
    probes: &[ProbeDescriptors],
    target: &str,
    method: &str,
    duration_s: f64,
) -> Result<VerifyReport> {
    let g = group_size(duration_s);
    let mut trials = Vec::new();
    for p in probes {
        for r in eval::window_groups(p.descriptors.len(), g) {
            trials.push(VerifyTrial {
                subject_id: p.subject_id.clone(),
                sequence_id: p.sequence_id.clone(),
                t_start: p.t_starts[r.start],
                is_target: p.subject_id == target,
                score: eval::nn_video_score(gallery, &p.descriptors[r])?,
            });
        }
    }
    verify_report(target, method, duration_s, trials)
}

pub fn describe(
    seqs: &[&SequenceWindows],
    f: impl Fn(&FeatureWindow) -> Result<Vec<f64>>,
) -> Result<Vec<ProbeDescriptors>> {
    seqs.iter()
        .map(|s| {
            Ok(ProbeDescriptors {
                subject_id: s.subject_id.clone(),
                sequence_id: s.sequence_id.clone(),
                t_starts: s.windows.iter().map(|w| w.t_start).collect(),
                descriptors: s.windows.iter().map(&f).collect::<Result<Vec<_>>>()?,
            })
        })
        .collect()
}

/// Trains the target's verifier on `plan.train` and scores `plan.test` at
/// each duration.
pub fn run_verification(
    corpus: &[SequenceWindows],
    plan: &SplitPlan,
    opts: &TrainOptions,
    durations: &[f64],
) -> Result<(Model, Vec<VerifyReport>)> {
    let target = plan
        .target
        .as_deref()
        .ok_or_else(|| Error::Protocol("verification plan has no target".into()))?;
    let train = select(corpus, &plan.train)?;
    let (pos, neg): (Vec<_>, Vec<_>) = train.into_iter().partition(|s| s.subject_id == target);
    let (windows, labels) = verification_training(&pos, &neg)?;
    let classes = vec![target.to_string(), "non-target".to_string()];
    let model = Model::train(&windows, &labels, &classes, opts)?;
    let test = select(corpus, &plan.test)?;
    let probs = predict_sequences(&model, &test)?;
    let method = opts.backend.to_string();
    let reports = durations
        .iter()
        .map(|&d| classifier_verification(&probs, 0, target, &method, d))
        .collect::<Result<Vec<_>>>()?;
    Ok((model, reports))
}

/// Mean EER and vertically averaged ROC over several targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub method: String,
    pub duration_s: f64,
    pub mean_eer: f64,
    pub per_target: Vec<(String, f64)>,
    pub mean_roc: Vec<(f64, f64)>,
}

pub fn summarize_verification(reports: &[&VerifyReport]) -> Result<VerificationSummary> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Invalid("no verification reports to summarize".into()))?;
    let curves: Vec<RocCurve> = reports.iter().map(|r| r.roc.clone()).collect();
    Ok(VerificationSummary {
        method: first.method.clone(),
        duration_s: first.duration_s,
        mean_eer: reports.iter().map(|r| r.eer).sum::<f64>() / reports.len() as f64,
        per_target: reports.iter().map(|r| (r.target.clone(), r.eer)).collect(),
        mean_roc: eval::mean_roc(&curves, 101),
    })
}
