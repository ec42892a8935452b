use margin_core::mnist::{load_idx, pilot_config, prepare, write_idx, MnistConfig, PIXELS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Crude digits: a ring for 0, a vertical bar for 1, plus pixel noise.
fn synthetic_digits(n: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px = Vec::with_capacity(n * PIXELS);
    let mut digits = Vec::with_capacity(n);
    for i in 0..n {
        let digit = match i % 7 {
            0..=2 => 0,
            3..=5 => 1,
            _ => 5,
        };
        let shift = rng.random_range(-2..=2) as f64;
        for r in 0..28 {
            for c in 0..28 {
                let (y, x) = (r as f64 - 13.5, c as f64 - 13.5 - shift);
                let on = match digit {
                    0 => ((x * x + y * y).sqrt() - 8.0).abs() < 2.0,
                    1 => x.abs() < 1.5 && y.abs() < 10.0,
                    _ => y.abs() < 1.5,
                };
                let base = if on { 220.0 } else { 10.0 };
                px.push((base + rng.random_range(-10.0..35.0f64)).clamp(0.0, 255.0) as u8);
            }
        }
        digits.push(digit);
    }
    (px, digits)
}

#[test]
fn pipeline_on_synthetic_digits() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s);
    let (px, dg) = synthetic_digits(1400, 1);
    write_idx(p("tr-img"), p("tr-lab"), 28, 28, &px, &dg).unwrap();
    let (px, dg) = synthetic_digits(350, 2);
    write_idx(p("te-img"), p("te-lab"), 28, 28, &px, &dg).unwrap();
    let train = load_idx(p("tr-img"), p("tr-lab")).unwrap();
    let test = load_idx(p("te-img"), p("te-lab")).unwrap();
    assert_eq!(train.len(), 1200);
    assert_eq!(train.d, PIXELS);

    let mut cfg = MnistConfig::new(3);
    cfg.pilot = pilot_config(3);
    cfg.pilot.max_epochs = 30;
    let out = prepare(&train, &test, &cfg).unwrap();
    let r = &out.report;
    assert_eq!(r.train.smote, [1170, 1170]);
    assert!(r.pilot_train_accuracy >= 0.99, "{}", r.pilot_train_accuracy);
    let k = (0.001 * r.train.calibrated as f64).ceil() as usize;
    assert_eq!(r.train.trimmed, k);
    for ds in [&out.train, &out.test] {
        let c = ds.class_counts();
        assert_eq!(c[0], c[1]);
        let dist = ds.distances.as_ref().unwrap();
        assert!(dist.iter().all(|&v| v > 0.0 && v <= 0.5));
        ds.validate().unwrap();
    }
    assert!(out.model.ell <= out.model.u);
}
