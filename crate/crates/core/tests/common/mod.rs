#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use svpinn::basis::PointSet;
use svpinn::net::Network;

pub fn random_points(d: usize, count: usize, seed: u64) -> PointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointSet::new(d, (0..d * count).map(|_| rng.random_range(0.02..0.98)).collect()).unwrap()
}

/// Fourth-order (Richardson) central differences along axis `j` with base
/// steps `h1` (first derivative) and `h2` (second derivative).
pub fn richardson(f: impl Fn(f64) -> f64, h1: f64, h2: f64) -> (f64, f64) {
    let c = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    let s = |h: f64| (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h);
    ((4.0 * c(h1) - c(2.0 * h1)) / 3.0, (4.0 * s(h2) - s(2.0 * h2)) / 3.0)
}

/// Relative errors of the network jet against difference quotients over a
/// point sample, gradient then second derivatives: `max |fd - jet|` divided
/// by `max |jet|`, both maxima taken over all points and axes.
pub fn jet_vs_differences(net: &Network, points: &PointSet) -> (f64, f64) {
    let d = net.dim();
    let (mut err_g, mut err_s, mut max_g, mut max_s) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for x in points.iter() {
        let jet = net.eval_jet(x).unwrap();
        for j in 0..d {
            let along = |h: f64| {
                let mut y = x.to_vec();
                y[j] += h;
                net.forward(&y).unwrap()
            };
            let (g, s) = richardson(along, 1e-5, 1e-4);
            err_g = err_g.max((g - jet.gradient[j]).abs());
            err_s = err_s.max((s - jet.second[j]).abs());
            max_g = max_g.max(jet.gradient[j].abs());
            max_s = max_s.max(jet.second[j].abs());
        }
    }
    (err_g / max_g, err_s / max_s)
}
