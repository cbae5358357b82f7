use egoid::flowgrid::{compute_grid_flow, FlowGridSpec};
use egoid::ingest::{load_frame, load_sequence, parse_manifest, Fps, GrayFrame};
use egoid::pipeline::{flow_from_frames, windows_from_flows};
use egoid::synth::{draw_profiles, render_walk, PopulationConfig, ProfilePrior};
use tempfile::TempDir;

const W: usize = 240;
const H: usize = 128;

fn texture(x: f64, y: f64) -> f64 {
    0.5 + 0.2 * (0.23 * x + 0.11 * y).sin() + 0.15 * (0.09 * x - 0.21 * y + 1.0).cos() + 0.1 * (0.31 * y + 0.05 * x + 2.0).sin()
}

/// The texture translated by `(dx, dy)`.
fn shifted(dx: f64, dy: f64) -> GrayFrame {
    let data = (0..H)
        .flat_map(|y| (0..W).map(move |x| texture(x as f64 - dx, y as f64 - dy) as f32))
        .collect();
    GrayFrame::new(W, H, data)
}

#[test]
fn png_frames_decode_to_unit_gray() {
    let tmp = TempDir::new().unwrap();
    let gray = image::GrayImage::from_fn(4, 3, |x, y| image::Luma([(x * 60 + y * 5) as u8]));
    let path = tmp.path().join("g.png");
    gray.save(&path).unwrap();
    let f = load_frame(&path).unwrap();
    assert_eq!((f.width, f.height), (4, 3));
    assert!((f.at(3, 2) - 190.0 / 255.0).abs() < 1e-6);

    let rgb = image::RgbImage::from_pixel(2, 2, image::Rgb([255, 0, 0]));
    let path = tmp.path().join("c.png");
    rgb.save(&path).unwrap();
    assert!((load_frame(&path).unwrap().at(1, 1) - 0.299).abs() < 1e-6);

    std::fs::write(tmp.path().join("bad.png"), b"not an image").unwrap();
    assert!(matches!(load_frame(&tmp.path().join("bad.png")), Err(egoid::Error::Image { .. })));
}

#[test]
fn manifest_sequences_load_in_filename_order() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("frames");
    std::fs::create_dir(&dir).unwrap();
    for (name, v) in [("0002.png", 20u8), ("0000.png", 0), ("0001.png", 10)] {
        image::GrayImage::from_pixel(3, 3, image::Luma([v])).save(dir.join(name)).unwrap();
    }
    std::fs::write(dir.join("notes.txt"), "ignored").unwrap();
    let manifest = r#"{"subjects": [{"subject_id": "a", "sequences": [
        {"sequence_id": "s", "camera_id": "D1", "session_tag": "train", "fps": "30000/1001",
         "frame_dir": "frames", "frame_count": 3}]}]}"#;
    std::fs::write(tmp.path().join("m.json"), manifest).unwrap();
    let m = parse_manifest(&tmp.path().join("m.json")).unwrap();
    let seq = load_sequence(&m, "a", "s").unwrap();
    assert_eq!(seq.fps, Fps::new(30000, 1001).unwrap());
    let firsts: Vec<f32> = seq.frames.iter().map(|f| (f.at(0, 0) * 255.0).round()).collect();
    assert_eq!(firsts, [0.0, 10.0, 20.0]);
}

#[test]
fn lucas_kanade_recovers_translations() {
    let spec = FlowGridSpec::default();
    let base = shifted(0.0, 0.0);
    for (dx, dy) in [(2.0, 0.0), (0.0, -2.0), (1.3, 0.7), (-2.5, 1.5)] {
        let f = compute_grid_flow(&base, &shifted(dx, dy), &spec).unwrap();
        assert!(f.valid.iter().all(|&v| v));
        for i in 0..f.cells() {
            assert!((f.u[i] - dx).abs() < 0.1, "cell {i}: u {} vs {dx}", f.u[i]);
            assert!((f.v[i] - dy).abs() < 0.1, "cell {i}: v {} vs {dy}", f.v[i]);
        }
    }
}

#[test]
fn identical_and_featureless_frames_give_zero_flow() {
    let spec = FlowGridSpec::default();
    let f = compute_grid_flow(&shifted(0.0, 0.0), &shifted(0.0, 0.0), &spec).unwrap();
    assert!(f.u.iter().chain(&f.v).all(|x| x.abs() < 1e-9));
    let flat = GrayFrame::filled(W, H, 0.4);
    let f = compute_grid_flow(&flat, &flat, &spec).unwrap();
    assert!(f.valid.iter().all(|&v| !v));
    assert!(f.u.iter().chain(&f.v).all(|&x| x == 0.0));
}

#[test]
fn rendered_walk_flow_matches_its_ground_truth() {
    let cfg = PopulationConfig {
        n_subjects: 2,
        prior: ProfilePrior {
            bob_amp: (0.8, 1.0),
            sway_amp: (0.5, 0.7),
            rotation_amp: (0.4, 0.6),
            ..ProfilePrior::default()
        },
        ..PopulationConfig::default()
    };
    let profile = &draw_profiles(&cfg).unwrap()[0];
    let spec = FlowGridSpec::default();
    let fps = Fps::integer(15);
    let (frames, truth) = render_walk(profile, 70, fps, W, H, &spec, 1).unwrap();
    let seq = egoid::ingest::FrameSequence { frames, fps };
    let flow = flow_from_frames(&seq, &spec).unwrap();
    assert_eq!(flow.fields.len(), truth.len());
    let mut worst: f64 = 0.0;
    for (got, want) in flow.fields.iter().zip(&truth) {
        for i in 0..got.cells() {
            worst = worst.max((got.u[i] - want.u[i]).abs()).max((got.v[i] - want.v[i]).abs());
        }
    }
    assert!(worst < 0.15, "worst cell error {worst}");

    let windows = windows_from_flows(&flow.fields, fps, false, "p1").unwrap();
    assert_eq!(windows.len(), 1);
    assert_eq!((windows[0].frames, windows[0].cells()), (60, 50));
}
