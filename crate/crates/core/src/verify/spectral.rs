//! Spectral studies: the `H^{-1}` / `Phi` norm equivalence and the Sobolev
//! regularity of Whittle-Matern trajectories.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{num, sorted_mean, Check, StudyOptions, StudyReport, Table};
use crate::basis::{check_dim, EigenBasis};
use crate::error::{Error, Result};
use crate::norms::{equivalence_ratio_bounds, SpectralCoefficients};
use crate::sampler::stream_rng;

const EQUIVALENCE_HEADER: [&str; 8] = ["d", "tau", "trial", "active_modes", "ratio", "lower", "upper", "inside"];

/// Random coefficient sets on the `modes` lowest eigenpairs: a random number
/// of active modes, Gaussian amplitudes spread over six decades. Records
/// `||R||_{-1}^2 / ||R||_Phi^2` against the constants of the active set.
pub fn study_equivalence(d: usize, modes: usize, trials: usize, tau: f64, opts: StudyOptions) -> Result<StudyReport> {
    check_dim(d)?;
    if modes == 0 || trials == 0 {
        return Err(Error::InvalidParameter(
            "equivalence study needs modes and trials".into(),
        ));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    let basis = EigenBasis::lowest(d, modes, modes)?;
    let eigs = basis.eigenvalues();
    let stream_base = ((d as u64) << 40) ^ tau.to_bits().rotate_left(7);
    let rows: Vec<(usize, f64, f64, f64, bool)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(opts.seed, stream_base.wrapping_add(t as u64));
            let active = rng.random_range(1..=modes);
            let picks = sample(&mut rng, modes, active);
            let pairs: Vec<(f64, f64)> = picks
                .iter()
                .map(|i| {
                    let z: f64 = rng.sample(StandardNormal);
                    let scale = 10f64.powf(rng.random_range(-3.0..3.0));
                    (eigs[i], z * scale)
                })
                .collect();
            let b = equivalence_ratio_bounds(&SpectralCoefficients::new(pairs)?, tau)?;
            Ok((active, b.ratio, b.lower, b.upper, b.contains_ratio()))
        })
        .collect::<Result<_>>()?;

    let mut table = Table::new(&EQUIVALENCE_HEADER);
    for (t, (active, ratio, lower, upper, inside)) in rows.iter().enumerate() {
        table.push(vec![
            d.to_string(),
            num(tau),
            t.to_string(),
            active.to_string(),
            num(*ratio),
            num(*lower),
            num(*upper),
            inside.to_string(),
        ]);
    }
    let violations = rows.iter().filter(|r| !r.4).count();
    let min = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let max = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let mut report = StudyReport::new(&format!("equivalence_d{d}_tau{tau}"), opts.quick, table);
    report.param("d", d);
    report.param("tau", tau);
    report.param("modes", modes);
    report.param("trials", trials);
    report.param("seed", opts.seed);
    report.values.insert("min_ratio".into(), min);
    report.values.insert("max_ratio".into(), max);
    report.values.insert("violations".into(), violations as f64);
    // Global constants over the whole mode set.
    let tau2 = tau * tau;
    report.values.insert(
        "c_global".into(),
        (1.0 + eigs[eigs.len() - 1]) / (tau2 * eigs[eigs.len() - 1]),
    );
    report
        .values
        .insert("C_global".into(), (1.0 + eigs[0]) / (tau2 * eigs[0]));
    report.check(Check::below("violations", violations as f64, 0.0));
    Ok(report)
}

/// [`study_equivalence`] over `d in {1,2,3}` and `tau in {0.1, 1, 10}`,
/// merged into one report. Quick mode halves the trials.
pub fn equivalence_suite(trials: usize, modes: usize, opts: StudyOptions) -> Result<StudyReport> {
    let trials = if opts.quick { trials.div_ceil(2) } else { trials };
    let mut merged = StudyReport::new("equivalence", opts.quick, Table::new(&EQUIVALENCE_HEADER));
    merged.param("trials", trials);
    merged.param("modes", modes);
    merged.param("seed", opts.seed);
    for d in 1..=3 {
        for tau in [0.1, 1.0, 10.0] {
            let r = study_equivalence(d, modes, trials, tau, opts)?;
            let tag = format!("d{d}_tau{tau}");
            merged.table.rows.extend(r.table.rows);
            for (k, v) in r.values {
                merged.values.insert(format!("{k}_{tag}"), v);
            }
            for c in r.checks {
                merged.check(Check {
                    name: format!("{}_{tag}", c.name),
                    ..c
                });
            }
        }
    }
    Ok(merged)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegularityOptions {
    pub d: usize,
    pub tau: f64,
    /// Square truncations: all modes with every component `<= K`.
    pub truncations: Vec<usize>,
    pub orders: Vec<f64>,
    pub draws: usize,
    pub seed: u64,
    pub quick: bool,
}

impl RegularityOptions {
    /// Orders `1 - d/2 - 0.1`, `1 - d/2 + 0.1` and `1`; truncations doubling
    /// from 16 per axis up to about `2^24` modes.
    pub fn defaults(d: usize, opts: StudyOptions) -> Self {
        let budget: usize = if opts.quick { 1 << 20 } else { 1 << 24 };
        let mut truncations = vec![16usize];
        while (truncations[truncations.len() - 1] * 2).pow(d as u32) <= budget {
            truncations.push(truncations[truncations.len() - 1] * 2);
        }
        let base = 1.0 - d as f64 / 2.0;
        Self {
            d,
            tau: 1.0,
            truncations,
            orders: vec![base - 0.1, base + 0.1, 1.0],
            draws: if opts.quick { 50 } else { 100 },
            seed: opts.seed,
            quick: opts.quick,
        }
    }
}

const BLOCK: usize = 1 << 16;

fn check_regularity(opts: &RegularityOptions) -> Result<()> {
    check_dim(opts.d)?;
    let t = &opts.truncations;
    if t.is_empty() || t[0] == 0 || t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "truncations must be positive and increasing".into(),
        ));
    }
    if opts.orders.is_empty() || opts.draws == 0 {
        return Err(Error::InvalidParameter(
            "regularity study needs orders and draws".into(),
        ));
    }
    Ok(())
}

/// Per-block walk over the modes of the largest truncation: level of each
/// mode and its weights `tau^2 lambda^t / (1 + lambda)` per order.
fn for_each_mode(opts: &RegularityOptions, block: usize, mut f: impl FnMut(usize, &[f64])) {
    let d = opts.d;
    let kmax = opts.truncations[opts.truncations.len() - 1];
    let total = kmax.pow(d as u32);
    let mut level_of = vec![0usize; kmax + 1];
    for (k, lv) in level_of.iter_mut().enumerate().skip(1) {
        *lv = opts.truncations.iter().position(|&t| t >= k).unwrap();
    }
    let tau2 = opts.tau * opts.tau;
    let mut weights = vec![0.0; opts.orders.len()];
    let start = block * BLOCK;
    for flat in start..(start + BLOCK).min(total) {
        let mut rest = flat;
        let mut sq = 0usize;
        let mut top = 0usize;
        for _ in 0..d {
            let k = rest % kmax + 1;
            rest /= kmax;
            sq += k * k;
            top = top.max(k);
        }
        let lambda = PI * PI * sq as f64;
        let ln = lambda.ln();
        for (w, t) in weights.iter_mut().zip(&opts.orders) {
            *w = tau2 * (t * ln).exp() / (1.0 + lambda);
        }
        f(level_of[top], &weights);
    }
}

fn block_count(opts: &RegularityOptions) -> usize {
    let kmax = opts.truncations[opts.truncations.len() - 1];
    kmax.pow(opts.d as u32).div_ceil(BLOCK)
}

fn cumulate(v: &mut [f64]) {
    for i in 1..v.len() {
        v[i] += v[i - 1];
    }
}

/// `sum_{|k|_inf <= K} lambda_k^t |c_k|^2` for every draw, order and
/// truncation `K`, indexed `[draw][order][level]`. Coefficients are
/// `c_k = tau (1 + lambda_k)^{-1/2} w_k` with standard Gaussian `w_k`.
pub fn regularity_partial_sums(opts: &RegularityOptions) -> Result<Vec<Vec<Vec<f64>>>> {
    check_regularity(opts)?;
    let (draws, orders, levels) = (opts.draws, opts.orders.len(), opts.truncations.len());
    let blocks = block_count(opts) as u64;
    let per_block: Vec<Vec<f64>> = (0..blocks as usize)
        .into_par_iter()
        .map(|b| {
            let mut modes: Vec<(usize, Vec<f64>)> = Vec::new();
            for_each_mode(opts, b, |lv, w| modes.push((lv, w.to_vec())));
            let mut acc = vec![0.0; draws * orders * levels];
            for draw in 0..draws {
                let mut rng = stream_rng(opts.seed, draw as u64 * blocks + b as u64);
                let slot = &mut acc[draw * orders * levels..(draw + 1) * orders * levels];
                for (lv, w) in &modes {
                    let z: f64 = rng.sample(StandardNormal);
                    let z2 = z * z;
                    for (o, wo) in w.iter().enumerate() {
                        slot[o * levels + lv] += wo * z2;
                    }
                }
            }
            acc
        })
        .collect();
    let mut out = vec![vec![vec![0.0; levels]; orders]; draws];
    for acc in &per_block {
        for (draw, per_order) in out.iter_mut().enumerate() {
            for (o, sums) in per_order.iter_mut().enumerate() {
                for (lv, s) in sums.iter_mut().enumerate() {
                    *s += acc[(draw * orders + o) * levels + lv];
                }
            }
        }
    }
    for per_order in &mut out {
        for sums in per_order {
            cumulate(sums);
        }
    }
    Ok(out)
}

/// Expectation of the partial sums: `tau^2 sum lambda^t / (1 + lambda)`,
/// indexed `[order][level]`.
pub fn expected_partial_sums(opts: &RegularityOptions) -> Result<Vec<Vec<f64>>> {
    check_regularity(opts)?;
    let levels = opts.truncations.len();
    let per_block: Vec<Vec<Vec<f64>>> = (0..block_count(opts))
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![vec![0.0; levels]; opts.orders.len()];
            for_each_mode(opts, b, |lv, w| {
                for (o, wo) in w.iter().enumerate() {
                    acc[o][lv] += wo;
                }
            });
            acc
        })
        .collect();
    let mut out = vec![vec![0.0; levels]; opts.orders.len()];
    for acc in &per_block {
        for (o, sums) in out.iter_mut().enumerate() {
            for (lv, s) in sums.iter_mut().enumerate() {
                *s += acc[o][lv];
            }
        }
    }
    for sums in &mut out {
        cumulate(sums);
    }
    Ok(out)
}

/// Mean partial-sum `H^t` norms of Whittle-Matern draws across growing
/// truncations. The first order is checked for boundedness (consecutive
/// ratio at the two largest truncations below 1.05), the others for growth
/// (last / first above 10).
pub fn study_regularity(opts: &RegularityOptions) -> Result<StudyReport> {
    let sums = regularity_partial_sums(opts)?;
    let expected = expected_partial_sums(opts)?;
    let levels = opts.truncations.len();
    let mut table = Table::new(&["d", "order", "truncation", "modes", "mean", "expected"]);
    let mut means = vec![vec![0.0; levels]; opts.orders.len()];
    for (o, &t) in opts.orders.iter().enumerate() {
        for lv in 0..levels {
            let vals: Vec<f64> = sums.iter().map(|d| d[o][lv]).collect();
            means[o][lv] = sorted_mean(&vals);
            let k = opts.truncations[lv];
            table.push(vec![
                opts.d.to_string(),
                num(t),
                k.to_string(),
                k.pow(opts.d as u32).to_string(),
                num(means[o][lv]),
                num(expected[o][lv]),
            ]);
        }
    }
    let mut report = StudyReport::new(&format!("regularity_d{}", opts.d), opts.quick, table);
    report.param("d", opts.d);
    report.param("tau", opts.tau);
    report.param("truncations", &opts.truncations);
    report.param("orders", &opts.orders);
    report.param("draws", opts.draws);
    report.param("seed", opts.seed);
    for (o, &t) in opts.orders.iter().enumerate() {
        let m = &means[o];
        let e = &expected[o];
        let growth = m[levels - 1] / m[0];
        report.values.insert(format!("growth_t{t}"), growth);
        report
            .values
            .insert(format!("expected_growth_t{t}"), e[levels - 1] / e[0]);
        if levels > 1 {
            let step = m[levels - 1] / m[levels - 2];
            report.values.insert(format!("last_step_ratio_t{t}"), step);
            if o == 0 {
                report.check(Check::below(format!("bounded_t{t}"), step, 1.05).enforced(!opts.quick));
            } else {
                report.check(Check::within(format!("divergent_t{t}"), growth, Some(10.0), None).enforced(!opts.quick));
            }
        }
    }
    Ok(report)
}
