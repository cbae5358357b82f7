use std::fs;
use std::path::{Path, PathBuf};

use egoid::cnn;
use egoid::flowgrid::{write_flow_cache, FeatureWindow};
use egoid::ingest::{
    list_frame_files, load_sequence, make_split, parse_manifest, DatasetManifest, Protocol, SeqRef,
    SAME_DAY_CAMERA, TRAIN_CAMERA,
};
use egoid::lpc::{descriptor_csv, lpc_descriptor, DescriptorRow};
use egoid::pipeline::{
    self, classifier_verification, describe, flow_from_frames, load_corpus, nn_verification,
    predict_sequences, verification_training, IdentifyReport, LpcFeaturizer, Model, SequenceWindows,
    VerifyReport,
};
use egoid::synth::{gen_population, write_dataset};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::plot;
use crate::report::Report;

/// What identify and verify reports carry; `eval` reads it back.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Identification {
        backend: String,
        stabilize: bool,
        warnings: Vec<String>,
        results: Vec<IdentifyReport>,
    },
    Verification {
        target: String,
        method: String,
        results: Vec<VerifyReport>,
    },
}

/// Every sequence of the manifest that has a flow cache.
fn cached_refs(manifest: &DatasetManifest) -> Vec<SeqRef> {
    manifest
        .subjects
        .iter()
        .flat_map(|s| {
            s.sequences
                .iter()
                .filter(|q| q.flow_cache.is_some())
                .map(move |q| SeqRef::new(&s.subject_id, &q.sequence_id))
        })
        .collect()
}

/// Hash of everything a flow cache depends on: grid settings, frame rate and
/// every frame file.
fn extraction_key(cfg: &RunConfig, manifest: &DatasetManifest, subject: &str, sequence: &str) -> Result<String, CliError> {
    let rec = manifest.sequence(subject, sequence)?;
    let dir = manifest.resolve(rec.frame_dir.as_ref().expect("caller checked frame_dir"));
    let mut h = Sha256::new();
    h.update(serde_json::to_string(&cfg.flowgrid).expect("spec serializes"));
    h.update(rec.fps.to_string());
    for f in list_frame_files(&dir)? {
        h.update(f.file_name().unwrap_or_default().as_encoded_bytes());
        h.update([0]);
        h.update(fs::read(&f).map_err(|e| CliError::io(&f, e))?);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn extract(cfg: &RunConfig, manifest_path: &Path, out_dir: &Path) -> Result<(), CliError> {
    let manifest = parse_manifest(manifest_path)?;
    cfg.flowgrid.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut out = manifest.clone();
    out.base_dir = out_dir.to_path_buf();
    let (mut computed, mut fresh) = (0, 0);
    for subj in &mut out.subjects {
        for seq in &mut subj.sequences {
            if let Some(dir) = &seq.frame_dir {
                seq.frame_dir = Some(absolute(&manifest.resolve(dir))?);
            } else {
                if let Some(c) = &seq.flow_cache {
                    seq.flow_cache = Some(absolute(&manifest.resolve(c))?);
                }
                continue;
            }
            let name = format!("{}/{}", subj.subject_id, seq.sequence_id);
            let rel = PathBuf::from(&subj.subject_id).join(format!("{}.egfl", seq.sequence_id));
            let cache = out_dir.join(&rel);
            let stamp = sidecar(&cache, "sha256");
            let key = extraction_key(cfg, &manifest, &subj.subject_id, &seq.sequence_id)
                .map_err(|e| CliError { msg: format!("sequence `{name}`: {e}"), ..e })?;
            seq.flow_cache = Some(rel);
            if cache.is_file() && fs::read_to_string(&stamp).is_ok_and(|s| s.trim() == key) {
                log::info!("{name}: up to date");
                fresh += 1;
                continue;
            }
            log::info!("{name}: computing flow");
            let frames = load_sequence(&manifest, &subj.subject_id, &seq.sequence_id)
                .map_err(|e| with_context(e, &name))?;
            let flow = flow_from_frames(&frames, &cfg.flowgrid).map_err(|e| with_context(e, &name))?;
            if let Some(parent) = cache.parent() {
                fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
            }
            write_flow_cache(&cache, &flow)?;
            egoid::write_atomic(&stamp, format!("{key}\n").as_bytes())?;
            computed += 1;
        }
    }
    out.write(&out_dir.join("manifest.json"))?;
    println!("extracted {computed} sequence(s), {fresh} already up to date");
    Ok(())
}

fn with_context(e: egoid::Error, name: &str) -> CliError {
    let e = CliError::from(e);
    CliError {
        msg: format!("sequence `{name}`: {}", e.msg),
        ..e
    }
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(p).map_err(|e| CliError::io(p, e))
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn featurize(cfg: &RunConfig, manifest_path: &Path, out: &Path, model: Option<&Path>) -> Result<(), CliError> {
    let manifest = parse_manifest(manifest_path)?;
    let model = model.map(Model::load).transpose()?;
    let stabilize = model.as_ref().map_or(cfg.stabilize, |m| m.frontend().stabilize);
    let corpus = load_corpus(&manifest, &cached_refs(&manifest), stabilize)?;
    let mut rows = Vec::new();
    for s in &corpus {
        for w in &s.windows {
            let values = match &model {
                Some(m) => m.descriptor(w)?,
                None => lpc_descriptor(w, &cfg.lpc)?.coeffs,
            };
            rows.push(DescriptorRow {
                subject_id: s.subject_id.clone(),
                sequence_id: s.sequence_id.clone(),
                t_start: w.t_start,
                values,
            });
        }
    }
    if rows.is_empty() {
        return Err(CliError::data("no sequence with a flow cache; run extract first"));
    }
    egoid::write_atomic(out, descriptor_csv(&rows).as_bytes())?;
    println!("wrote {} descriptor(s) to {}", rows.len(), out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    backend: String,
    classes: Vec<String>,
    train: Vec<SeqRef>,
    n_windows: usize,
    warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cnn_report: Option<cnn::TrainReport>,
}

pub fn train(cfg: &RunConfig, manifest_path: &Path, out: &Path, report: Option<&Path>) -> Result<(), CliError> {
    let manifest = parse_manifest(manifest_path)?;
    let plan = make_split(&manifest, cfg.split.protocol, &cfg.split.options())?;
    let corpus = load_corpus(&manifest, &plan.train, cfg.stabilize)?;
    let (windows, labels, classes) = if cfg.split.protocol == Protocol::EvprVerification {
        let target = plan.target.clone().expect("verification plans carry a target");
        let (pos, neg): (Vec<&SequenceWindows>, Vec<&SequenceWindows>) =
            corpus.iter().partition(|s| s.subject_id == target);
        let (w, l) = verification_training(&pos, &neg)?;
        (w, l, vec![target, "non-target".to_string()])
    } else {
        let classes = plan.train_subjects();
        let mut windows: Vec<&FeatureWindow> = Vec::new();
        let mut labels = Vec::new();
        for s in &corpus {
            let c = classes.iter().position(|x| *x == s.subject_id).expect("train subject");
            windows.extend(&s.windows);
            labels.extend(std::iter::repeat_n(c, s.windows.len()));
        }
        (windows, labels, classes)
    };
    let model = Model::train(&windows, &labels, &classes, &cfg.train_options())?;
    model.save(out)?;
    println!("trained {} on {} windows of {} classes -> {}", cfg.backend, windows.len(), classes.len(), out.display());
    if let Some(path) = report {
        let summary = TrainSummary {
            backend: cfg.backend.to_string(),
            classes,
            train: plan.train.clone(),
            n_windows: windows.len(),
            warnings: plan.warnings.clone(),
            cnn_report: match &model {
                Model::Cnn { model, .. } => Some(model.report.clone()),
                Model::Svm { .. } => None,
            },
        };
        Report::new("train", cfg, summary)
            .input("manifest", manifest_path)?
            .input("model", out)?
            .write(path)?;
    }
    Ok(())
}

pub fn identify(cfg: &RunConfig, model_path: &Path, manifest_path: &Path, out: &Path) -> Result<(), CliError> {
    let model = Model::load(model_path)?;
    let manifest = parse_manifest(manifest_path)?;
    if cfg.split.protocol == Protocol::EvprVerification {
        return Err(CliError::usage("identify needs an identification protocol"));
    }
    let plan = make_split(&manifest, cfg.split.protocol, &cfg.split.options())?;
    let corpus = load_corpus(&manifest, &plan.test, model.frontend().stabilize)?;
    let seqs: Vec<&SequenceWindows> = corpus.iter().collect();
    let probs = predict_sequences(&model, &seqs)?;
    let results = cfg
        .eval
        .durations
        .iter()
        .map(|&d| pipeline::identify(&probs, model.classes(), d, cfg.eval.fuse))
        .collect::<egoid::Result<Vec<_>>>()?;
    for r in &results {
        println!(
            "{:>5}s {:?}: top-1 {:.3}, top-2 {:.3} over {} trial(s)",
            r.duration_s,
            r.fuse,
            r.top1,
            r.top2,
            r.trials.len()
        );
    }
    let outcome = Outcome::Identification {
        backend: model.frontend().backend.to_string(),
        stabilize: model.frontend().stabilize,
        warnings: plan.warnings,
        results,
    };
    Report::new("identify", cfg, outcome)
        .input("model", model_path)?
        .input("manifest", manifest_path)?
        .write(out)
}

pub fn verify(cfg: &RunConfig, model_path: &Path, manifest_path: &Path, out: &Path) -> Result<(), CliError> {
    let model = Model::load(model_path)?;
    let manifest = parse_manifest(manifest_path)?;
    let classes = model.classes();
    if classes.len() != 2 {
        return Err(CliError::data(format!(
            "verification needs a target-vs-rest model; this one has {} classes",
            classes.len()
        )));
    }
    let target = classes[0].clone();
    let mut opts = cfg.split.options();
    opts.target = Some(target.clone());
    let plan = make_split(&manifest, Protocol::EvprVerification, &opts)?;
    let corpus = load_corpus(&manifest, &plan.test, model.frontend().stabilize)?;
    let seqs: Vec<&SequenceWindows> = corpus.iter().collect();
    let probs = predict_sequences(&model, &seqs)?;
    let method = model.frontend().backend.to_string();
    let results = cfg
        .eval
        .durations
        .iter()
        .map(|&d| classifier_verification(&probs, 0, &target, &method, d))
        .collect::<egoid::Result<Vec<_>>>()?;
    print_eers(&results);
    Report::new("verify", cfg, Outcome::Verification { target, method, results })
        .input("model", model_path)?
        .input("manifest", manifest_path)?
        .write(out)
}

fn print_eers(results: &[VerifyReport]) {
    for r in results {
        println!("{:>5}s: EER {:.4} over {} trial(s)", r.duration_s, r.eer, r.trials.len());
    }
}

pub fn verify_nn(cfg: &RunConfig, model_path: &Path, manifest_path: &Path, out: &Path, lpc: bool) -> Result<(), CliError> {
    let model = Model::load(model_path)?;
    let manifest = parse_manifest(manifest_path)?;
    let target = cfg
        .split
        .target
        .clone()
        .ok_or_else(|| CliError::usage("--nn needs --target"))?;
    let pool = model.classes();
    if pool.contains(&target) {
        return Err(CliError::data(format!("target `{target}` was used to train the model")));
    }
    let stabilize = model.frontend().stabilize;
    let test_cam = cfg.split.test_camera.as_deref().unwrap_or(SAME_DAY_CAMERA);
    let refs_with = |keep: &dyn Fn(&str) -> bool, cam: &str| -> Vec<SeqRef> {
        manifest
            .subjects
            .iter()
            .filter(|s| keep(&s.subject_id))
            .flat_map(|s| {
                s.sequences
                    .iter()
                    .filter(|q| q.camera_id == cam)
                    .map(|q| SeqRef::new(&s.subject_id, &q.sequence_id))
            })
            .collect()
    };
    let gallery_refs = refs_with(&|s| s == target, TRAIN_CAMERA);
    let probe_refs = refs_with(&|s| !pool.iter().any(|p| p == s), test_cam);
    if gallery_refs.is_empty() || probe_refs.is_empty() {
        return Err(CliError::data(format!(
            "target `{target}` needs {TRAIN_CAMERA} and {test_cam} sequences"
        )));
    }
    let gallery_seqs = load_corpus(&manifest, &gallery_refs, stabilize)?;
    let probe_seqs = load_corpus(&manifest, &probe_refs, stabilize)?;
    let gallery_windows: Vec<&FeatureWindow> = gallery_seqs.iter().flat_map(|s| &s.windows).collect();
    let probe_list: Vec<&SequenceWindows> = probe_seqs.iter().collect();
    let (method, gallery, probes) = if lpc {
        let pool_refs = refs_with(&|s| pool.iter().any(|p| p == s), TRAIN_CAMERA);
        let pool_seqs = load_corpus(&manifest, &pool_refs, stabilize)?;
        let pool_windows: Vec<&FeatureWindow> = pool_seqs.iter().flat_map(|s| &s.windows).collect();
        let f = LpcFeaturizer::fit(&pool_windows, cfg.lpc)?;
        let gallery = gallery_windows.iter().map(|w| f.apply(w)).collect::<egoid::Result<Vec<_>>>()?;
        ("nn-lpc", gallery, describe(&probe_list, |w| f.apply(w))?)
    } else {
        let gallery = gallery_windows
            .iter()
            .map(|w| model.descriptor(w))
            .collect::<egoid::Result<Vec<_>>>()?;
        ("nn-cnn", gallery, describe(&probe_list, |w| model.descriptor(w))?)
    };
    let results = cfg
        .eval
        .durations
        .iter()
        .map(|&d| nn_verification(&gallery, &probes, &target, method, d))
        .collect::<egoid::Result<Vec<_>>>()?;
    print_eers(&results);
    let outcome = Outcome::Verification {
        target,
        method: method.to_string(),
        results,
    };
    Report::new("verify", cfg, outcome)
        .input("model", model_path)?
        .input("manifest", manifest_path)?
        .write(out)
}

pub fn synth(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let ds = gen_population(&cfg.synth)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let manifest = write_dataset(&ds, out_dir)?;
    let n_seq: usize = manifest.subjects.iter().map(|s| s.sequences.len()).sum();
    Report::new("synth", cfg, serde_json::json!({ "subjects": ds.subjects.len(), "sequences": n_seq }))
        .write(&out_dir.join("synth_report.json"))?;
    println!("wrote {} subject(s), {n_seq} sequence(s) to {}", ds.subjects.len(), out_dir.display());
    Ok(())
}

pub fn eval(reports: &[PathBuf], out_dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut id_rows = Vec::new();
    let mut ver_rows = Vec::new();
    let mut cmc_series = Vec::new();
    let mut roc_series = Vec::new();
    let mut acc_series = Vec::new();
    for path in reports {
        let rep = Report::read(path)?;
        let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let outcome: Outcome = serde_json::from_value(rep.result.clone()).map_err(|_| {
            CliError::format(format!("{}: `{}` report has no identify/verify results", path.display(), rep.command))
        })?;
        match outcome {
            Outcome::Identification { backend, stabilize, results, .. } => {
                let label = format!("{name} ({backend}{})", if stabilize { ", stab" } else { "" });
                let mut acc = Vec::new();
                for r in &results {
                    id_rows.push(serde_json::json!({
                        "report": name, "backend": backend, "stabilize": stabilize,
                        "duration_s": r.duration_s, "fuse": r.fuse, "trials": r.trials.len(),
                        "top1": r.top1, "top2": r.top2,
                    }));
                    let pts = r.cmc.top_k.iter().enumerate().map(|(k, &a)| ((k + 1) as f64, a)).collect();
                    cmc_series.push((format!("{label} {}s", r.duration_s), pts));
                    acc.push((r.duration_s, r.top1));
                }
                acc_series.push((label, acc));
            }
            Outcome::Verification { target, method, results } => {
                for r in &results {
                    ver_rows.push(serde_json::json!({
                        "report": name, "target": target, "method": method,
                        "duration_s": r.duration_s, "trials": r.trials.len(), "eer": r.eer,
                    }));
                    let pts = r.roc.points.iter().map(|p| (p.far, p.tpr)).collect();
                    roc_series.push((format!("{name} {method} {}s", r.duration_s), pts));
                }
            }
        }
    }
    let mut csv = String::from("report,kind,method,stabilize,target,duration_s,trials,top1,top2,eer\n");
    for r in &id_rows {
        csv += &format!(
            "{},identification,{},{},,{},{},{},{},\n",
            r["report"].as_str().unwrap(),
            r["backend"].as_str().unwrap(),
            r["stabilize"],
            r["duration_s"],
            r["trials"],
            r["top1"],
            r["top2"]
        );
    }
    for r in &ver_rows {
        csv += &format!(
            "{},verification,{},,{},{},{},,,{}\n",
            r["report"].as_str().unwrap(),
            r["method"].as_str().unwrap(),
            r["target"].as_str().unwrap(),
            r["duration_s"],
            r["trials"],
            r["eer"]
        );
    }
    egoid::write_atomic(&out_dir.join("summary.csv"), csv.as_bytes())?;
    let summary = serde_json::json!({ "identification": id_rows, "verification": ver_rows });
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    egoid::write_atomic(&out_dir.join("summary.json"), text.as_bytes())?;
    if !cmc_series.is_empty() {
        let svg = plot::line_chart("Cumulative match characteristic", "rank", "identification rate", &cmc_series, Some((0.0, 1.0)));
        egoid::write_atomic(&out_dir.join("cmc.svg"), svg.as_bytes())?;
        let svg = plot::line_chart("Accuracy vs video length", "video length (s)", "top-1 accuracy", &acc_series, Some((0.0, 1.0)));
        egoid::write_atomic(&out_dir.join("accuracy_vs_length.svg"), svg.as_bytes())?;
    }
    if !roc_series.is_empty() {
        let svg = plot::line_chart("ROC", "false acceptance rate", "true positive rate", &roc_series, Some((0.0, 1.0)));
        egoid::write_atomic(&out_dir.join("roc.svg"), svg.as_bytes())?;
    }
    println!(
        "summarized {} identification and {} verification result(s) in {}",
        id_rows.len(),
        ver_rows.len(),
        out_dir.display()
    );
    Ok(())
}

pub fn visualize_filters(model_path: &Path, out_dir: &Path, kernels: &[usize]) -> Result<(), CliError> {
    let Model::Cnn { model, .. } = Model::load(model_path)? else {
        return Err(CliError::data(format!("{} is not a CNN model", model_path.display())));
    };
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let all: Vec<usize> = (0..model.config.m).collect();
    let kernels = if kernels.is_empty() { &all } else { kernels };
    for &m in kernels {
        if m >= model.config.m {
            return Err(CliError::data(format!("kernel {m} out of range (model has {})", model.config.m)));
        }
        cnn::write_filter_pngs(&model, m, out_dir)?;
    }
    println!("wrote {} filter image(s) to {}", 2 * kernels.len(), out_dir.display());
    Ok(())
}
