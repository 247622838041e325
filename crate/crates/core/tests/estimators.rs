use adqc_core::metrics::{gamma_cost, joint_pmf, mutual_information};
use adqc_core::optimizer::{objective, optimize_eve, OptimizerConfig, ThresholdVector};
use adqc_core::protocol::SchemeSpec;
use adqc_core::source::{sample_dataset, CorrelationConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn independent_uniform_symbols_stay_within_binomial_error() {
    let n = 1_000_000;
    for m in [2usize, 4, 8] {
        let mut rng = ChaCha8Rng::seed_from_u64(m as u64);
        let p = joint_pmf((0..n).map(|_| (rng.random_range(0..m), rng.random_range(0..m))), m).unwrap();
        let bound = 5.0 * m as f64 / (n as f64).sqrt();
        for i in 0..m {
            for j in 0..m {
                assert!((p.probability(i, j) - 1.0 / (m * m) as f64).abs() <= bound);
            }
        }
        let mi = mutual_information(&p);
        let (ha, hb) = p.marginal_entropies();
        assert!(mi >= 0.0 && mi <= ha.min(hb) && ha <= (m as f64).log2() + 1e-12);
    }
}

#[test]
fn gamma_matches_bit_count_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let (ca, cn) = (rng.random_range(0.0..1.0), rng.random_range(0.0..0.99));
        let beta = rng.random_range(0.0..1.0);
        let n = rng.random_range(1.0..1e6);
        let (ka, kn) = (n * ca, n * cn);
        let counted = (n - ka + beta * n) / (n - kn);
        assert!((gamma_cost(ca, cn, beta).unwrap() - counted).abs() <= 1e-9 * counted.abs().max(1.0));
    }
}

/// With Alice and Bob splitting at zero, Eve's best single threshold is the
/// symmetric point; compare the search against an exhaustive scan.
#[test]
fn one_bit_eve_threshold_is_symmetric() {
    let ds = sample_dataset(&CorrelationConfig::with_eve_at(0.95, 0.8), 200_000, 41).unwrap();
    let scheme = SchemeSpec::nec(1);
    let cfg = OptimizerConfig::new(scheme);
    let t = |v: f64| ThresholdVector::new(vec![v], &cfg.bounds).unwrap();
    let zero = t(0.0);
    let (best_t, _) = (-150..=150)
        .map(|i| i as f64 * 0.01)
        .map(|v| (v, objective(&zero, &zero, &t(v), &scheme, &ds).unwrap()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    assert!(best_t.abs() <= 0.1, "grid minimum at {best_t}");

    for start in [0.0, 0.8, -1.2] {
        let r = optimize_eve(&zero, &zero, &t(start), &ds, &cfg).unwrap();
        let found = r.best.interior()[0];
        assert!((found - best_t).abs() <= 0.1, "start {start}: {found} vs {best_t}");
    }
}
