mod common;

use dimp::autograd::Graph;
use dimp::model::Component;
use dimp::rng;
use dimp::synthdata::Split;
use dimp::training::{
    extract_features, linear_probe, load_checkpoint, probe_accuracy, sample_losses, save_checkpoint, Checkpoint, ProbeConfig,
    Trainer,
};
use dimp::verify::center_head_gradients;
use dimp::DimpError;
use ndarray::Array2;
use rand::Rng as _;

use common::{small_config, small_dataset};

#[test]
fn identical_seeds_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path(), 16, 1);
    let cfg = small_config(dir.path());
    let a = Trainer::new(cfg.clone()).unwrap().run(&ds, 5, None, None).unwrap();
    let b = Trainer::new(cfg.clone()).unwrap().run(&ds, 5, None, None).unwrap();
    assert_eq!(a, b);
    let mut other = cfg;
    other.seed += 1;
    let c = Trainer::new(other).unwrap().run(&ds, 5, None, None).unwrap();
    assert_ne!(a, c);
}

#[test]
fn report_decomposes_on_every_step() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path(), 16, 2);
    let cfg = small_config(dir.path());
    let m = cfg.model.clone();
    for r in Trainer::new(cfg).unwrap().run(&ds, 6, None, None).unwrap() {
        assert!(r.decomposition_error(m.gamma_cen, m.lambda_mot) < 1e-12);
        assert_eq!(r.per_interval_mot.len(), m.h);
        assert!(r.l_cen >= 0.0 && r.l_geo >= 0.0 && r.l_mot >= 0.0);
    }
}

#[test]
fn zero_weights_leave_center_and_motion_heads_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path(), 16, 3);
    let mut cfg = small_config(dir.path());
    cfg.model.gamma_cen = 0.0;
    cfg.model.lambda_mot = 0.0;
    let mut t = Trainer::new(cfg).unwrap();
    let heads: Vec<_> = [Component::CenterPredictor, Component::MotionHead]
        .iter()
        .flat_map(|&c| t.state.component_params(c))
        .collect();
    let before: Vec<_> = heads.iter().map(|&id| t.state.store().value(id).clone()).collect();
    let decoder_before = t.state.store().value(t.state.component_params(Component::Decoder)[0]).clone();
    let reports = t.run(&ds, 4, None, None).unwrap();
    for (id, b) in heads.iter().zip(&before) {
        assert_eq!(t.state.store().value(*id), b, "{}", t.state.store().get(*id).name);
        assert!(t.state.store().get(*id).grad.iter().all(|&g| g == 0.0));
        assert!(t.opt.m[id.0].iter().all(|&m| m == 0.0));
    }
    assert_ne!(t.state.store().value(t.state.component_params(Component::Decoder)[0]), &decoder_before);
    assert!(reports.iter().all(|r| r.l_mot == 0.0 && r.per_interval_mot.is_empty()));
}

#[test]
fn center_head_gradient_audit_during_training() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path(), 16, 4);
    let mut t = Trainer::new(small_config(dir.path())).unwrap();
    t.run(&ds, 3, None, None).unwrap();
    for s in t.prepare(&ds, t.step).unwrap() {
        let (routed, direct) = center_head_gradients(&t.state, &s).unwrap();
        assert_eq!(routed, 0.0);
        assert!(direct > 0.0);
        let mut open = t.state.clone();
        open.set_stop_gradients(false, true);
        assert!(center_head_gradients(&open, &s).unwrap().0 > 0.0);
        let mut open = t.state.clone();
        open.set_stop_gradients(true, false);
        assert!(center_head_gradients(&open, &s).unwrap().0 > 0.0);
    }
}

#[test]
fn every_motion_interval_reaches_the_encoder() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path(), 16, 5);
    let mut t = Trainer::new(small_config(dir.path())).unwrap();
    // the motion head starts with a zero output layer; a few steps open it
    t.run(&ds, 3, None, None).unwrap();
    let sample = &t.prepare(&ds, t.step).unwrap()[0];
    let enc = t.state.component_params(Component::Encoder);
    let h = t.state.config().h;
    let mut per_term = Vec::new();
    for i in 0..h {
        let mut g = Graph::new();
        let l = sample_losses(&mut g, &t.state, sample, t.motion_schedule()).unwrap();
        assert_eq!(l.per_interval.len(), h);
        let grads = g.backward(l.per_interval[i]);
        let norm: f64 = enc
            .iter()
            .filter_map(|&id| g.param_var(id).and_then(|v| grads.get(v)))
            .map(|t| t.iter().map(|x| x * x).sum::<f64>())
            .sum();
        assert!(norm > 0.0, "interval {i} sends no gradient to the encoder");
        per_term.push(norm);
    }
    assert_eq!(per_term.len(), h);
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path(), 16, 6);
    let mut t = Trainer::new(small_config(dir.path())).unwrap();
    t.run(&ds, 2, None, None).unwrap();
    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    save_checkpoint(&t.checkpoint(), &p1).unwrap();
    let loaded = load_checkpoint(&p1).unwrap();
    save_checkpoint(&loaded, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    let state = loaded.state().unwrap();
    for (a, b) in t.state.store().iter().zip(state.store().iter()) {
        assert_eq!(a.name, b.name);
        assert!(a.value.iter().zip(b.value.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn damaged_checkpoints_are_rejected_with_distinct_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path(), 16, 7);
    let mut t = Trainer::new(small_config(dir.path())).unwrap();
    t.run(&ds, 1, None, None).unwrap();
    let ckpt = t.checkpoint();
    let bytes = ckpt.to_bytes();
    let p = dir.path().join("x.ckpt");

    std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
    let truncated = load_checkpoint(&p).unwrap_err();
    assert!(matches!(truncated, DimpError::CorruptFile { .. }), "{truncated}");

    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    assert!(matches!(Checkpoint::from_bytes(&flipped, &p).unwrap_err(), DimpError::CorruptFile { .. }));

    let mut versioned = bytes.clone();
    versioned[8..12].copy_from_slice(&99u32.to_le_bytes());
    let version = Checkpoint::from_bytes(&versioned, &p).unwrap_err();
    assert!(matches!(version, DimpError::VersionMismatch { .. }), "{version}");

    let mut missing = ckpt.clone();
    let dropped = missing.params.remove(3).0;
    let absent = missing.state().unwrap_err();
    assert!(matches!(&absent, DimpError::MissingParameter(n) if *n == dropped), "{absent}");

    assert_eq!(truncated.exit_code(), 1);
    assert_eq!(version.exit_code(), 4);
    assert_eq!(absent.exit_code(), 4);
    assert!(!matches!(version, DimpError::MissingParameter(_)));
}

#[test]
fn resumed_run_matches_unbroken_run() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path(), 16, 8);
    let cfg = small_config(dir.path());
    let mut whole = Trainer::new(cfg.clone()).unwrap();
    let unbroken = whole.run(&ds, 10, None, None).unwrap();

    let mut first = Trainer::new(cfg).unwrap();
    let mut reports = first.run(&ds, 5, None, None).unwrap();
    let p = dir.path().join("mid.ckpt");
    save_checkpoint(&first.checkpoint(), &p).unwrap();
    drop(first);
    let mut resumed = Trainer::from_checkpoint(&load_checkpoint(&p).unwrap()).unwrap();
    reports.extend(resumed.run(&ds, 10, None, None).unwrap());
    assert_eq!(reports, unbroken);
    for (a, b) in whole.state.store().iter().zip(resumed.state.store().iter()) {
        assert_eq!(a.value, b.value);
    }
}

#[test]
fn probe_reads_only_the_encoder() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path(), 16, 9);
    let mut t = Trainer::new(small_config(dir.path())).unwrap();
    t.run(&ds, 2, None, None).unwrap();
    let full = extract_features(&t.state, &ds).unwrap();
    let stripped = t.state.encoder_only();
    assert_eq!(full, extract_features(&stripped, &ds).unwrap());
    assert!(stripped.store().get(stripped.component_params(Component::Decoder)[0]).value.is_empty());
    let mut scrambled = t.state.clone();
    scrambled.randomize_all(77);
    let enc_changed = extract_features(&scrambled, &ds).unwrap();
    assert_ne!(full, enc_changed);
}

#[test]
fn raw_mean_coordinates_cannot_separate_the_shared_mean_pair() {
    let dir = tempfile::tempdir().unwrap();
    let params = dimp::synthdata::GeneratorParams::default();
    dimp::synthdata::gen_dataset(&params, 512, (0.8, 0.2), 11, dir.path()).unwrap();
    let ds = dimp::synthdata::Dataset::load(dir.path()).unwrap();
    let l = params.seq_len;
    // per-frame centroids
    let mut x = Array2::zeros((ds.items.len(), 3 * l));
    for (i, it) in ds.items.iter().enumerate() {
        for (f, frame) in it.sequence.frames().enumerate() {
            for a in 0..3 {
                x[[i, 3 * f + a]] = frame.iter().map(|p| p[a]).sum::<f64>() / frame.len() as f64;
            }
        }
    }
    let labels: Vec<usize> = ds.items.iter().map(|i| i.label).collect();
    let splits: Vec<Split> = ds.items.iter().map(|i| i.split).collect();
    let cfg = ProbeConfig::default();
    let acc = probe_accuracy(&x, &labels, &splits, &[0, 1], &cfg).unwrap();
    let n = ds.items.iter().filter(|i| i.split == Split::Test && i.label < 2).count() as f64;
    let band = 3.0 * (0.25 / n).sqrt();
    assert!((acc - 0.5).abs() <= band, "accuracy {acc} outside 0.5 +- {band}");
}

#[test]
fn random_labels_give_chance_accuracy() {
    let mut r = rng::seeded(12);
    let n = 2000;
    let x = Array2::from_shape_fn((n, 8), |_| r.random::<f64>());
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..4)).collect();
    let splits: Vec<Split> = (0..n).map(|i| if i % 5 == 0 { Split::Test } else { Split::Train }).collect();
    let acc = probe_accuracy(&x, &labels, &splits, &[0, 1, 2, 3], &ProbeConfig::default()).unwrap();
    let band = 3.0 * (0.25 * 0.75 / (n / 5) as f64).sqrt();
    assert!((acc - 0.25).abs() <= band, "accuracy {acc}");
}

#[test]
fn probe_is_deterministic_and_rejects_one_class() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path(), 32, 13);
    let t = Trainer::new(small_config(dir.path())).unwrap();
    let cfg = ProbeConfig::default();
    assert_eq!(linear_probe(&t.state, &ds, &cfg).unwrap(), linear_probe(&t.state, &ds, &cfg).unwrap());
    let x = Array2::zeros((4, 2));
    let err = probe_accuracy(&x, &[1, 1, 1, 1], &[Split::Train, Split::Train, Split::Test, Split::Test], &[1], &cfg);
    assert!(matches!(err, Err(DimpError::InvalidArgument(_))));
}
