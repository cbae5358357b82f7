//! Dataset manifests, grayscale frame loading and train/test split protocols.
//!
//! A manifest is a single JSON document:
//!
//! ```json
//! {
//!   "subjects": [
//!     { "subject_id": "s01",
//!       "sequences": [
//!         { "sequence_id": "walk1", "camera_id": "D1", "session_tag": "same-day",
//!           "fps": "15", "frame_dir": "frames/s01/walk1", "frame_count": 6300 } ] } ]
//! }
//! ```
//!
//! Relative paths resolve against the manifest's directory. A sequence may carry a
//! `flow_cache` path instead of (or in addition to) `frame_dir`; synthetic datasets
//! have no frames and point straight at their flow caches.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positive rational frame rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Fps {
    pub num: u32,
    pub den: u32,
}

impl Fps {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::Invalid(format!("fps must be positive, got {num}/{den}")));
        }
        Ok(Self { num, den })
    }

    pub const fn integer(num: u32) -> Self {
        Self { num, den: 1 }
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Number of frames spanning `seconds`, rounded to nearest.
    pub fn frames_in(self, seconds: f64) -> usize {
        (seconds * self.as_f64()).round() as usize
    }
}

impl fmt::Display for Fps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Fps {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(format!("bad fps `{s}`"));
        let (n, d) = match s.split_once('/') {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s.trim(), "1"),
        };
        Fps::new(n.parse().map_err(|_| bad())?, d.parse().map_err(|_| bad())?)
    }
}

impl TryFrom<String> for Fps {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Fps> for String {
    fn from(f: Fps) -> String {
        f.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub sequence_id: String,
    pub camera_id: String,
    pub session_tag: String,
    pub fps: Fps,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_dir: Option<PathBuf>,
    #[serde(default)]
    pub frame_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_cache: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub sequences: Vec<SequenceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub subjects: Vec<SubjectRecord>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn subject(&self, subject_id: &str) -> Result<&SubjectRecord> {
        self.subjects
            .iter()
            .find(|s| s.subject_id == subject_id)
            .ok_or_else(|| Error::UnknownId(subject_id.to_string()))
    }

    pub fn sequence(&self, subject_id: &str, sequence_id: &str) -> Result<&SequenceRecord> {
        self.subject(subject_id)?
            .sequences
            .iter()
            .find(|q| q.sequence_id == sequence_id)
            .ok_or_else(|| Error::UnknownId(format!("{subject_id}/{sequence_id}")))
    }

    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.subject_id.clone()).collect()
    }

    /// Checks id uniqueness, fps, and frame directories against their declared counts.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for subj in &self.subjects {
            if !seen.insert(subj.subject_id.as_str()) {
                return Err(Error::DuplicateSubject(subj.subject_id.clone()));
            }
            let mut seqs = HashSet::new();
            for seq in &subj.sequences {
                if !seqs.insert(seq.sequence_id.as_str()) {
                    return Err(Error::DuplicateSequence {
                        subject: subj.subject_id.clone(),
                        sequence: seq.sequence_id.clone(),
                    });
                }
                let name = format!("{}/{}", subj.subject_id, seq.sequence_id);
                match &seq.frame_dir {
                    Some(dir) => {
                        let dir = self.resolve(dir);
                        if !dir.is_dir() {
                            return Err(Error::Manifest {
                                path: dir,
                                msg: format!("frame_dir of sequence `{name}` does not exist"),
                            });
                        }
                        let found = list_frame_files(&dir)?.len();
                        if found != seq.frame_count {
                            return Err(Error::FrameCountMismatch {
                                sequence: name,
                                dir,
                                declared: seq.frame_count,
                                found,
                            });
                        }
                    }
                    None if seq.flow_cache.is_none() => {
                        return Err(Error::Manifest {
                            path: self.base_dir.clone(),
                            msg: format!("sequence `{name}` has neither frame_dir nor flow_cache"),
                        });
                    }
                    None => {}
                }
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Reads and validates a manifest file.
pub fn parse_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
    manifest.base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    manifest.validate()?;
    Ok(manifest)
}

const FRAME_EXTENSIONS: &[&str] = &["png", "pgm", "ppm", "pnm"];

/// Frame files of a directory in lexicographic filename order.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let is_frame = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if is_frame && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// A grayscale image with intensities in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayFrame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayFrame {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Decodes one frame file to grayscale.
pub fn load_frame(path: &Path) -> Result<GrayFrame> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = if img.color().has_color() {
        let rgb = img.to_rgb32f();
        rgb.pixels()
            .map(|p| (LUMA[0] * p[0] as f64 + LUMA[1] * p[1] as f64 + LUMA[2] * p[2] as f64) as f32)
            .collect()
    } else {
        img.to_luma32f().into_raw()
    };
    Ok(GrayFrame::new(w, h, data))
}

#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub frames: Vec<GrayFrame>,
    pub fps: Fps,
}

/// Loads every frame of one sequence. Frames must share one size.
pub fn load_sequence(
    manifest: &DatasetManifest,
    subject_id: &str,
    sequence_id: &str,
) -> Result<FrameSequence> {
    let rec = manifest.sequence(subject_id, sequence_id)?;
    let dir = rec.frame_dir.as_ref().ok_or_else(|| {
        Error::Invalid(format!("sequence `{subject_id}/{sequence_id}` has no frame_dir"))
    })?;
    let files = list_frame_files(&manifest.resolve(dir))?;
    if files.len() < 2 {
        return Err(Error::TooShort(format!(
            "sequence `{subject_id}/{sequence_id}` has {} frame(s), need at least 2",
            files.len()
        )));
    }
    let mut frames: Vec<GrayFrame> = Vec::with_capacity(files.len());
    for f in &files {
        let frame = load_frame(f)?;
        if let Some(first) = frames.first() {
            if (frame.width, frame.height) != (first.width, first.height) {
                return Err(Error::Image {
                    path: f.clone(),
                    msg: format!(
                        "frame is {}x{}, sequence is {}x{}",
                        frame.width, frame.height, first.width, first.height
                    ),
                });
            }
        }
        frames.push(frame);
    }
    Ok(FrameSequence {
        frames,
        fps: rec.fps,
    })
}

/// Sequence reference: (subject_id, sequence_id).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeqRef {
    pub subject_id: String,
    pub sequence_id: String,
}

impl SeqRef {
    pub fn new(subject_id: impl Into<String>, sequence_id: impl Into<String>) -> Self {
        Self {
            subject_id: subject_id.into(),
            sequence_id: sequence_id.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// First 80% of each subject's sequences train, the rest test.
    FpsiIdentification,
    /// Camera D1 trains, cameras D2/D3 test.
    EvprIdentification,
    /// One target against disjoint train/test non-target pools.
    EvprVerification,
}

impl FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fpsi-identification" => Ok(Protocol::FpsiIdentification),
            "evpr-identification" => Ok(Protocol::EvprIdentification),
            "evpr-verification" => Ok(Protocol::EvprVerification),
            other => Err(Error::Protocol(format!("unknown protocol `{other}`"))),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::FpsiIdentification => "fpsi-identification",
            Protocol::EvprIdentification => "evpr-identification",
            Protocol::EvprVerification => "evpr-verification",
        })
    }
}

pub const TRAIN_CAMERA: &str = "D1";
pub const SAME_DAY_CAMERA: &str = "D2";
pub const WEEK_LATER_CAMERA: &str = "D3";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitOptions {
    /// Target subject, required by the verification protocol.
    pub target: Option<String>,
    pub seed: u64,
    /// Non-target subjects drawn into training (verification only).
    pub train_nontargets: usize,
    /// Restrict test sequences to this camera (EVPR protocols only).
    pub test_camera: Option<String>,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            target: None,
            seed: 0,
            train_nontargets: 15,
            test_camera: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub protocol_name: String,
    pub train: Vec<SeqRef>,
    pub test: Vec<SeqRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SplitPlan {
    pub fn train_subjects(&self) -> Vec<String> {
        unique_subjects(&self.train)
    }

    pub fn test_subjects(&self) -> Vec<String> {
        unique_subjects(&self.test)
    }
}

fn unique_subjects(refs: &[SeqRef]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in refs {
        if !out.contains(&r.subject_id) {
            out.push(r.subject_id.clone());
        }
    }
    out
}

pub fn make_split(
    manifest: &DatasetManifest,
    protocol: Protocol,
    opts: &SplitOptions,
) -> Result<SplitPlan> {
    let mut plan = SplitPlan {
        protocol_name: protocol.to_string(),
        train: Vec::new(),
        test: Vec::new(),
        target: None,
        warnings: Vec::new(),
    };
    match protocol {
        Protocol::FpsiIdentification => {
            for subj in &manifest.subjects {
                let n = subj.sequences.len();
                let n_train = if n >= 2 { ((n * 4) / 5).clamp(1, n - 1) } else { n };
                if n < 2 {
                    plan.warnings.push(format!(
                        "subject `{}` has {n} sequence(s); excluded from test",
                        subj.subject_id
                    ));
                }
                for (i, seq) in subj.sequences.iter().enumerate() {
                    let r = SeqRef::new(&subj.subject_id, &seq.sequence_id);
                    if i < n_train {
                        plan.train.push(r);
                    } else {
                        plan.test.push(r);
                    }
                }
            }
        }
        Protocol::EvprIdentification => {
            let test_ok = |cam: &str| match &opts.test_camera {
                Some(c) => cam == c,
                None => cam == SAME_DAY_CAMERA || cam == WEEK_LATER_CAMERA,
            };
            for subj in &manifest.subjects {
                let train: Vec<_> = subj
                    .sequences
                    .iter()
                    .filter(|q| q.camera_id == TRAIN_CAMERA)
                    .map(|q| SeqRef::new(&subj.subject_id, &q.sequence_id))
                    .collect();
                let test: Vec<_> = subj
                    .sequences
                    .iter()
                    .filter(|q| test_ok(&q.camera_id))
                    .map(|q| SeqRef::new(&subj.subject_id, &q.sequence_id))
                    .collect();
                if train.is_empty() {
                    plan.warnings.push(format!(
                        "subject `{}` has no {TRAIN_CAMERA} sequence; excluded",
                        subj.subject_id
                    ));
                    continue;
                }
                if test.is_empty() {
                    plan.warnings.push(format!(
                        "subject `{}` has no test sequence; excluded from test",
                        subj.subject_id
                    ));
                }
                plan.train.extend(train);
                plan.test.extend(test);
            }
            if plan.train.is_empty() {
                return Err(Error::Protocol(format!(
                    "{protocol}: no sequence with camera_id {TRAIN_CAMERA}"
                )));
            }
        }
        Protocol::EvprVerification => {
            let target = opts
                .target
                .as_deref()
                .ok_or_else(|| Error::Protocol(format!("{protocol} needs a target subject")))?;
            manifest.subject(target)?;
            let mut others: Vec<&SubjectRecord> = manifest
                .subjects
                .iter()
                .filter(|s| s.subject_id != target)
                .collect();
            if others.len() < opts.train_nontargets + 1 {
                return Err(Error::Protocol(format!(
                    "{protocol}: {} non-target subjects cannot supply {} training and at least one test subject",
                    others.len(),
                    opts.train_nontargets
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            others.shuffle(&mut rng);
            let (train_nt, test_nt) = others.split_at(opts.train_nontargets);
            let test_cam = opts.test_camera.as_deref().unwrap_or(SAME_DAY_CAMERA);
            let pick = |s: &SubjectRecord, cam: &str| -> Vec<SeqRef> {
                s.sequences
                    .iter()
                    .filter(|q| q.camera_id == cam)
                    .map(|q| SeqRef::new(&s.subject_id, &q.sequence_id))
                    .collect()
            };
            let tgt = manifest.subject(target)?;
            plan.train.extend(pick(tgt, TRAIN_CAMERA));
            plan.test.extend(pick(tgt, test_cam));
            if plan.train.is_empty() || plan.test.is_empty() {
                return Err(Error::Protocol(format!(
                    "{protocol}: target `{target}` needs {TRAIN_CAMERA} and {test_cam} sequences"
                )));
            }
            // Keep manifest order inside each pool so the plan reads naturally.
            let mut train_nt: Vec<_> = train_nt.to_vec();
            let mut test_nt: Vec<_> = test_nt.to_vec();
            let pos = |s: &&SubjectRecord| {
                manifest
                    .subjects
                    .iter()
                    .position(|x| x.subject_id == s.subject_id)
            };
            train_nt.sort_by_key(pos);
            test_nt.sort_by_key(pos);
            for s in train_nt {
                plan.train.extend(pick(s, TRAIN_CAMERA));
            }
            for s in test_nt {
                plan.test.extend(pick(s, test_cam));
            }
            plan.target = Some(target.to_string());
        }
    }
    Ok(plan)
}
