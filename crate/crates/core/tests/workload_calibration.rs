use moebal_core::workload::{extreme_shares, generate_trace, GeneratorConfig, Trace, CALIBRATED_SKEW};

fn trace(experts: usize, drift: f64, seed: u64) -> Trace {
    let cfg = GeneratorConfig {
        devices: experts,
        experts,
        inputs_per_iteration: 1024 * experts as u64,
        top_k: 1,
        skew: CALIBRATED_SKEW,
        drift,
        seed,
    };
    Trace::from_records(generate_trace(&cfg, 100, 1).unwrap()).unwrap()
}

#[test]
fn sixteen_experts_are_heavily_skewed() {
    for seed in 0..5 {
        let t = trace(16, 0.05, seed);
        let (top, bottom) = (0..100)
            .map(|i| extreme_shares(t.get(i, 0), 3))
            .fold((0.0, 0.0), |(a, b), (x, y)| (a + x / 100.0, b + y / 100.0));
        assert!(top > 0.5, "seed {seed}: top-3 share {top}");
        assert!(bottom < 0.05, "seed {seed}: bottom-3 share {bottom}");
        assert!(t.mean_adjacent_locality() >= 0.9);
    }
}

#[test]
fn locality_falls_as_drift_grows() {
    let drifts = [0.0, 0.05, 0.3, 0.7, 1.0];
    let mean = |drift: f64| (0..20).map(|s| trace(8, drift, s).mean_adjacent_locality()).sum::<f64>() / 20.0;
    let scores: Vec<f64> = drifts.iter().map(|&d| mean(d)).collect();
    approx::assert_relative_eq!(scores[0], 1.0, max_relative = 1e-12);
    for w in scores.windows(2) {
        assert!(w[1] < w[0], "{scores:?}");
    }
}
