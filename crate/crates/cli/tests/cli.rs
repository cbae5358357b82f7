use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn egoid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_egoid"))
        .args(args)
        .output()
        .expect("spawn egoid")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn texture(x: f64, y: f64) -> u8 {
    let v = 0.5 + 0.2 * (0.31 * x + 0.17 * y).sin() + 0.15 * (0.11 * x - 0.27 * y + 1.0).cos() + 0.1 * (0.07 * x + 0.23 * y + 2.0).sin();
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `n` PNG frames of a texture drifting right by `dx` px per frame.
fn write_frames(dir: &Path, n: usize, dx: f64) {
    fs::create_dir_all(dir).unwrap();
    for k in 0..n {
        let img = image::GrayImage::from_fn(224, 112, |x, y| image::Luma([texture(x as f64 - dx * k as f64, y as f64)]));
        img.save(dir.join(format!("{k:04}.png"))).unwrap();
    }
}

fn frame_manifest(root: &Path, seqs: &[(&str, &str, &str)], frame_count: usize) -> PathBuf {
    let subjects: Vec<Value> = seqs
        .iter()
        .map(|(subj, seq, dir)| {
            serde_json::json!({
                "subject_id": subj,
                "sequences": [{
                    "sequence_id": seq, "camera_id": "D1", "session_tag": "train",
                    "fps": "15", "frame_dir": dir, "frame_count": frame_count,
                }],
            })
        })
        .collect();
    let path = root.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&serde_json::json!({ "subjects": subjects })).unwrap()).unwrap();
    path
}

#[test]
fn extract_writes_one_cache_per_sequence_and_skips_up_to_date_ones() {
    let tmp = TempDir::new().unwrap();
    write_frames(&tmp.path().join("a"), 5, 1.0);
    write_frames(&tmp.path().join("b"), 5, -0.5);
    let manifest = frame_manifest(tmp.path(), &[("s1", "walk1", "a"), ("s2", "walk1", "b")], 5);
    let out = tmp.path().join("flow");

    let o = egoid(&["extract", "--manifest", p(&manifest), "--out-dir", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let caches = [out.join("s1/walk1.egfl"), out.join("s2/walk1.egfl")];
    for c in &caches {
        let bytes = fs::read(c).unwrap();
        assert_eq!(&bytes[..4], b"EGFL");
        let flow = egoid::flowgrid::read_flow_cache(c).unwrap();
        assert_eq!((flow.m_x, flow.m_y, flow.fields.len()), (10, 5, 4));
    }
    let mean_u = |c: &Path| {
        let f = egoid::flowgrid::read_flow_cache(c).unwrap();
        f.fields.iter().flat_map(|x| x.u.iter()).sum::<f64>() / (4.0 * 50.0)
    };
    assert!((mean_u(&caches[0]) - 1.0).abs() < 0.1);
    assert!((mean_u(&caches[1]) + 0.5).abs() < 0.1, "{}", mean_u(&caches[1]));

    let before: Vec<_> = caches.iter().map(|c| fs::metadata(c).unwrap().modified().unwrap()).collect();
    let o = egoid(&["extract", "--manifest", p(&manifest), "--out-dir", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("extracted 0 sequence(s), 2 already up to date"));
    let after: Vec<_> = caches.iter().map(|c| fs::metadata(c).unwrap().modified().unwrap()).collect();
    assert_eq!(before, after);

    // A changed frame invalidates only its own sequence.
    write_frames(&tmp.path().join("b"), 5, 0.5);
    let o = egoid(&["extract", "--manifest", p(&manifest), "--out-dir", p(&out)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("extracted 1 sequence(s), 1 already up to date"));

    // The written manifest points at the caches.
    let m = egoid::ingest::parse_manifest(&out.join("manifest.json")).unwrap();
    assert_eq!(m.resolve(m.sequence("s2", "walk1").unwrap().flow_cache.as_ref().unwrap()), caches[1]);
}

#[test]
fn extract_names_the_sequence_whose_frames_are_missing() {
    let tmp = TempDir::new().unwrap();
    write_frames(&tmp.path().join("a"), 3, 1.0);
    let manifest = frame_manifest(tmp.path(), &[("s1", "walk1", "a"), ("s2", "walk7", "nowhere")], 3);
    let o = egoid(&["extract", "--manifest", p(&manifest), "--out-dir", p(&tmp.path().join("flow"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("s2/walk7"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_2() {
    let tmp = TempDir::new().unwrap();
    let m = tmp.path().join("manifest.json");
    let o = egoid(&["train", "--manifest", p(&m), "--out", "x", "--backend", "svm-deluxe"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("svm-deluxe"));
    let o = egoid(&["identify", "--model", "m", "--manifest", "m", "--out", "o", "--fuse", "vote"]);
    assert_eq!(o.status.code(), Some(2));
    let o = egoid(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_config_and_missing_files_have_distinct_codes() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"cnn": {"epochz": 3}}"#).unwrap();
    let o = egoid(&["--config", p(&cfg), "synth", "--out-dir", p(tmp.path())]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let o = egoid(&["train", "--manifest", p(&tmp.path().join("absent.json")), "--out", "m"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

/// Two subjects, a 1-minute training session and a 7-minute test session.
fn synth_pair(root: &Path) -> (PathBuf, PathBuf) {
    let cfg = root.join("cfg.json");
    fs::write(
        &cfg,
        r#"{"synth": {"n_subjects": 2, "session_durations": [60.0, 420.0], "master_seed": 3},
            "eval": {"durations": [4.0, 12.0]}}"#,
    )
    .unwrap();
    let data = root.join("data");
    let o = egoid(&["--config", p(&cfg), "synth", "--out-dir", p(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    (cfg, data.join("manifest.json"))
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn identify_groups_windows_by_video_length_and_reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let (cfg, manifest) = synth_pair(tmp.path());
    let train = |dir: &str| {
        let d = tmp.path().join(dir);
        fs::create_dir_all(&d).unwrap();
        let (model, report) = (d.join("model.bin"), d.join("train.json"));
        let o = egoid(&[
            "--config", p(&cfg), "train", "--manifest", p(&manifest), "--out", p(&model), "--report", p(&report),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let out = d.join("identify.json");
        let o = egoid(&[
            "--config", p(&cfg), "identify", "--model", p(&model), "--manifest", p(&manifest), "--out", p(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        [model, report, out]
    };
    let first = train("run1");
    let second = train("run2");
    for (a, b) in first.iter().zip(&second) {
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{} differs", a.display());
    }

    let report = read_json(&first[2]);
    assert_eq!(report["command"], "identify");
    assert_eq!(report["config"]["synth"]["n_subjects"], 2);
    assert_eq!(report["config_sha256"].as_str().unwrap().len(), 64);
    let results = report["result"]["results"].as_array().unwrap();
    let per_sequence = |r: &Value| {
        r["trials"].as_array().unwrap().iter().filter(|t| t["subject_id"].as_str().unwrap().ends_with('1')).count()
    };
    assert_eq!(results[0]["duration_s"], 4.0);
    assert_eq!(results[0]["group_windows"], 1);
    assert_eq!(per_sequence(&results[0]), 209);
    assert_eq!(results[1]["group_windows"], 5);
    assert_eq!(per_sequence(&results[1]), 209 / 5);

    let o = egoid(&["eval", p(&first[2]), "--out-dir", p(&tmp.path().join("eval"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("eval/summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    for svg in ["cmc.svg", "accuracy_vs_length.svg"] {
        assert!(fs::read_to_string(tmp.path().join("eval").join(svg)).unwrap().starts_with("<svg"));
    }
}

#[test]
fn unsupported_model_versions_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let (cfg, manifest) = synth_pair(tmp.path());
    let model = tmp.path().join("model.bin");
    let o = egoid(&["--config", p(&cfg), "train", "--manifest", p(&manifest), "--out", p(&model)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut bytes = fs::read(&model).unwrap();
    bytes[4..6].copy_from_slice(&99u16.to_le_bytes());
    fs::write(&model, bytes).unwrap();
    let o = egoid(&["identify", "--model", p(&model), "--manifest", p(&manifest), "--out", p(&tmp.path().join("r.json"))]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn cnn_kernels_render_to_png() {
    let tmp = TempDir::new().unwrap();
    let (cfg, manifest) = synth_pair(tmp.path());
    let model = tmp.path().join("cnn.bin");
    let o = egoid(&[
        "--config", p(&cfg), "train", "--manifest", p(&manifest), "--out", p(&model), "--backend", "cnn", "--epochs", "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = tmp.path().join("filters");
    let o = egoid(&["visualize-filters", "--model", p(&model), "--out-dir", p(&out), "--kernel", "0", "--kernel", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_dir(&out).unwrap().count(), 4);
    let o = egoid(&["visualize-filters", "--model", p(&model), "--out-dir", p(&out), "--kernel", "500"]);
    assert_eq!(o.status.code(), Some(6));

    let csv = tmp.path().join("desc.csv");
    let o = egoid(&["featurize", "--manifest", p(&manifest), "--out", p(&csv), "--model", p(&model)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    let row = text.lines().nth(1).unwrap();
    assert_eq!(row.split(',').count(), 3 + 128);
}
