use egoid::cnn::{self, cnn_model_bytes, CnnConfig};
use egoid::flowgrid::FeatureWindow;
use egoid::ingest::Fps;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Four classes of walkers, each bobbing at its own frequency with random
/// phase and additive noise.
fn separable_set(per_class: usize, seed: u64) -> (Vec<FeatureWindow>, Vec<usize>, Vec<String>) {
    let fps = Fps::integer(15);
    let freqs = [1.0, 1.6, 2.2, 3.0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut windows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..per_class {
        for (c, f) in freqs.iter().enumerate() {
            let mut w = FeatureWindow::zeros(4, 2, 60, fps);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            for cell in 0..w.cells() {
                for t in 0..w.frames {
                    let s = (std::f64::consts::TAU * f * t as f64 / 15.0 + phase).sin();
                    let i = w.index(1, cell, t);
                    w.data[i] = s + noise.sample(&mut rng);
                    let i = w.index(0, cell, t);
                    w.data[i] = noise.sample(&mut rng);
                }
            }
            windows.push(w);
            labels.push(c);
        }
    }
    (windows, labels, (0..4).map(|c| format!("c{c}")).collect())
}

fn small_config(seed: u64) -> CnnConfig {
    CnnConfig {
        m: 16,
        n_1: 32,
        batch: 20,
        epochs: 30,
        plateau_tol: 0.0,
        seed,
        ..CnnConfig::default()
    }
}

fn accuracy(model: &cnn::CnnModel, windows: &[FeatureWindow], labels: &[usize]) -> f64 {
    let hits = windows
        .iter()
        .zip(labels)
        .filter(|(w, &l)| {
            let p = model.predict_proba(w).unwrap();
            (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap() == l
        })
        .count();
    hits as f64 / labels.len() as f64
}

#[test]
fn learns_a_separable_problem_and_generalizes() {
    let (train, labels, classes) = separable_set(40, 1);
    let model = cnn::train(&train, &labels, &classes, &small_config(0)).unwrap();
    assert_eq!(model.report.epoch_losses.len(), 30);
    assert!(accuracy(&model, &train, &labels) >= 0.99);
    let (test, test_labels, _) = separable_set(25, 2);
    assert!(accuracy(&model, &test, &test_labels) >= 0.99);

    // Averaged over 5 epochs, the training loss never goes up.
    let avg: Vec<f64> = model.report.epoch_losses.chunks(5).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    assert!(avg.windows(2).all(|p| p[1] <= p[0]), "{avg:?}");
    assert!(avg[avg.len() - 1] < 0.2 * (4f64).ln());

    let d = model.extract_descriptor(&test[0]).unwrap();
    assert_eq!(d.len(), 32);
    assert!(d.iter().all(|&x| (0.0..=1.0).contains(&x)));
}

#[test]
fn training_is_deterministic_per_seed() {
    let (train, labels, classes) = separable_set(10, 3);
    let cfg = CnnConfig { epochs: 3, ..small_config(7) };
    let a = cnn_model_bytes(&cnn::train(&train, &labels, &classes, &cfg).unwrap());
    let b = cnn_model_bytes(&cnn::train(&train, &labels, &classes, &cfg).unwrap());
    assert_eq!(a, b);
    let other = CnnConfig { seed: 8, ..cfg };
    let c = cnn_model_bytes(&cnn::train(&train, &labels, &classes, &other).unwrap());
    assert_ne!(a, c);
}

#[test]
fn early_stopping_ends_on_a_plateau() {
    let (train, labels, classes) = separable_set(10, 4);
    let cfg = CnnConfig {
        epochs: 200,
        plateau_tol: 0.5,
        plateau_epochs: 3,
        ..small_config(0)
    };
    let model = cnn::train(&train, &labels, &classes, &cfg).unwrap();
    assert!(model.report.stopped_early);
    assert!(model.report.epoch_losses.len() < 200);
}

#[test]
fn rejects_inconsistent_training_data() {
    let (mut train, labels, classes) = separable_set(2, 5);
    let cfg = small_config(0);
    assert!(cnn::train(&train, &labels[..3], &classes, &cfg).is_err());
    assert!(cnn::train(&train, &vec![0; labels.len()], &classes, &cfg).is_err());
    train[1] = FeatureWindow::zeros(4, 2, 45, Fps::integer(15));
    assert!(matches!(cnn::train(&train, &labels, &classes, &cfg), Err(egoid::Error::Shape(_))));
}
