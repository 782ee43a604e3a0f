//! Fixtures shared by the benchmarks under `benches/`.

use devmix_core::harness::scenarios;
use devmix_core::{Atom, DeviatedMixture, EmConfig, KnownDensity, MixingMeasure, Points};

/// A pair of location measures with `k` and `k + 1` atoms on a line.
pub fn measure_pair(k: usize) -> (MixingMeasure, MixingMeasure) {
    let make = |m: usize, shift: f64| {
        let atoms = (0..m).map(|i| Atom::location(vec![i as f64 + shift, 0.5 * i as f64])).collect();
        MixingMeasure::new(atoms, vec![1.0 / m as f64; m]).expect("uniform weights")
    };
    (make(k, 0.0), make(k + 1, 0.3))
}

/// The exact-fit half-circle truth, a sample of size `n` from it, and its
/// EM settings with a single restart.
pub fn half_circle_fit(n: usize) -> (KnownDensity, Points, EmConfig) {
    let sc = scenarios::half_circle_exact();
    let data = sc.truth().expect("valid truth").sample(n, 1).expect("positive n");
    let mut cfg = sc.fit.em_config(&sc.family, 1);
    cfg.restarts = 1;
    (sc.h0, data, cfg)
}

/// The half-circle truth and a nearby model.
pub fn half_circle_pair() -> (DeviatedMixture, DeviatedMixture) {
    let truth = scenarios::half_circle_exact().truth().expect("valid truth");
    let g = truth.mixing();
    let moved = MixingMeasure::new(
        g.atoms().iter().map(|a| Atom::location(vec![a.location[0] + 0.05, a.location[1]])).collect(),
        g.weights().to_vec(),
    )
    .expect("same weights");
    let other = truth.with_parameters(0.45, moved).expect("valid parameters");
    (truth, other)
}
