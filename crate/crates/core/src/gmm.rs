//! Two-component one-dimensional Gaussian mixture fit by EM.
//!
//! The mixture is fit on the set of embedding distances of all training
//! pairs; its posterior for the high-mean component is the soft label used
//! in place of ground truth. Components are always reported ordered so that
//! `mean_high >= mean_low`, and the high-mean component is the "abnormal"
//! one by convention.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Variance floor preventing singular collapse on near-duplicate values.
pub const VAR_FLOOR: f64 = 1e-6;

pub const DEFAULT_MAX_ITERS: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct GmmParams {
    pub weight_low: f64,
    pub weight_high: f64,
    pub mean_low: f64,
    pub mean_high: f64,
    pub var_low: f64,
    pub var_high: f64,
}

impl GmmParams {
    pub fn validate(&self) -> Result<()> {
        let wsum = self.weight_low + self.weight_high;
        if self.weight_low <= 0.0 || self.weight_high <= 0.0 || (wsum - 1.0).abs() > 1e-9 {
            return Err(Error::numeric(
                "gmm",
                format!("weights must be positive and sum to 1, got {self:?}"),
            ));
        }
        if self.var_low < VAR_FLOOR || self.var_high < VAR_FLOOR {
            return Err(Error::numeric("gmm", "variance below floor"));
        }
        if self.mean_high < self.mean_low {
            return Err(Error::numeric("gmm", "components not ordered by mean"));
        }
        Ok(())
    }
}

/// Validated collection of non-negative distances.
#[derive(Debug, Clone)]
pub struct DistanceSet {
    values: Vec<f64>,
}

impl DistanceSet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 4 {
            return Err(Error::InsufficientData(format!(
                "mixture fit needs at least 4 values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::data("distances must be finite and non-negative"));
        }
        Ok(DistanceSet { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Component {
    weight: f64,
    mean: f64,
    var: f64,
}

fn log_gauss(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (std::f64::consts::TAU * var).ln() - d * d / (2.0 * var)
}

/// Fit by EM from a deterministic median-split initialization.
pub fn fit_gmm(set: &DistanceSet, max_iters: usize, tol: f64) -> Result<GmmParams> {
    fit_gmm_trace(set, max_iters, tol).map(|(p, _)| p)
}

/// As `fit_gmm`, also returning the per-iteration log-likelihood trace.
pub fn fit_gmm_trace(
    set: &DistanceSet,
    max_iters: usize,
    tol: f64,
) -> Result<(GmmParams, Vec<f64>)> {
    fit_values(set.values(), max_iters, tol)
}

/// Fit on raw values without the non-negativity requirement (the head's
/// pre-activation outputs are signed). Values must be finite, N >= 4.
pub fn fit_values(values: &[f64], max_iters: usize, tol: f64) -> Result<(GmmParams, Vec<f64>)> {
    if values.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "mixture fit needs at least 4 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("mixture fit requires finite values"));
    }
    let init = median_split_init(values);
    fit_from_init(values, init, max_iters, tol)
}

fn median_split_init(values: &[f64]) -> [Component; 2] {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = sorted.len() / 2;
    let (lo, hi) = sorted.split_at(mid);
    [half_component(lo, values.len()), half_component(hi, values.len())]
}

fn half_component(xs: &[f64], total: usize) -> Component {
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Component {
        weight: xs.len() as f64 / total as f64,
        mean,
        var: var.max(VAR_FLOOR),
    }
}

/// EM from an explicit initialization. Exposed so relabeling invariance can
/// be probed with permuted starts; library users go through `fit_gmm`.
pub(crate) fn fit_from_init(
    values: &[f64],
    mut comps: [Component; 2],
    max_iters: usize,
    tol: f64,
) -> Result<(GmmParams, Vec<f64>)> {
    let n = values.len();
    let mut resp_hi = vec![0.0f64; n];
    let mut ll_trace = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..max_iters {
        // E step
        let mut ll = 0.0;
        for (i, &x) in values.iter().enumerate() {
            let l0 = comps[0].weight.ln() + log_gauss(x, comps[0].mean, comps[0].var);
            let l1 = comps[1].weight.ln() + log_gauss(x, comps[1].mean, comps[1].var);
            let m = l0.max(l1);
            let s0 = (l0 - m).exp();
            let s1 = (l1 - m).exp();
            resp_hi[i] = s1 / (s0 + s1);
            ll += m + (s0 + s1).ln();
        }
        ll_trace.push(ll);
        // M step
        let r1: f64 = resp_hi.iter().sum();
        let r0 = n as f64 - r1;
        for (k, rk) in [(0usize, r0), (1usize, r1)] {
            if rk <= 0.0 {
                // empty component: keep parameters, floor the weight
                comps[k].weight = 1e-12;
                continue;
            }
            let mean = values
                .iter()
                .zip(&resp_hi)
                .map(|(&x, &r)| x * if k == 1 { r } else { 1.0 - r })
                .sum::<f64>()
                / rk;
            let var = values
                .iter()
                .zip(&resp_hi)
                .map(|(&x, &r)| {
                    let rr = if k == 1 { r } else { 1.0 - r };
                    rr * (x - mean) * (x - mean)
                })
                .sum::<f64>()
                / rk;
            comps[k].weight = rk / n as f64;
            comps[k].mean = mean;
            comps[k].var = var.max(VAR_FLOOR);
        }
        let wsum = comps[0].weight + comps[1].weight;
        comps[0].weight /= wsum;
        comps[1].weight /= wsum;

        if (ll - prev_ll).abs() < tol {
            break;
        }
        prev_ll = ll;
    }

    // Order so the high-mean ("abnormal") component comes second.
    if comps[0].mean > comps[1].mean {
        comps.swap(0, 1);
    }
    let params = GmmParams {
        weight_low: comps[0].weight,
        weight_high: comps[1].weight,
        mean_low: comps[0].mean,
        mean_high: comps[1].mean,
        var_low: comps[0].var,
        var_high: comps[1].var,
    };
    params.validate()?;
    Ok((params, ll_trace))
}

/// Posterior probability that a value belongs to the high-mean component:
/// `w_h * phi(d; mean_h, var_h) / sum_k w_k * phi(d; mean_k, var_k)`.
///
/// Computed in log space; if both densities degenerate the value is
/// hard-assigned to the nearer mean.
pub fn posterior_abnormal(params: &GmmParams, d: f64) -> f64 {
    let l_lo = params.weight_low.ln() + log_gauss(d, params.mean_low, params.var_low);
    let l_hi = params.weight_high.ln() + log_gauss(d, params.mean_high, params.var_high);
    if !l_lo.is_finite() && !l_hi.is_finite() {
        let d_lo = (d - params.mean_low).abs();
        let d_hi = (d - params.mean_high).abs();
        return if d_hi <= d_lo { 1.0 } else { 0.0 };
    }
    let m = l_lo.max(l_hi);
    let s_lo = (l_lo - m).exp();
    let s_hi = (l_hi - m).exp();
    s_hi / (s_lo + s_hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn planted_sample(n: usize, seed: u64) -> Vec<f64> {
        // 0.8 * N(2, 0.25) + 0.2 * N(8, 1.0)
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|_| {
                if rng.chance(0.8) {
                    2.0 + 0.5 * rng.normal()
                } else {
                    8.0 + rng.normal()
                }
            })
            .map(|v| v.max(0.0))
            .collect()
    }

    #[test]
    fn rejects_insufficient_data() {
        assert!(matches!(
            DistanceSet::new(vec![1.0, 2.0, 3.0]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn degenerate_identical_values_clamp_to_floor() {
        let set = DistanceSet::new(vec![5.0; 32]).unwrap();
        let p = fit_gmm(&set, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        assert!((p.mean_low - 5.0).abs() < 1e-9);
        assert!((p.mean_high - 5.0).abs() < 1e-9);
        assert_eq!(p.var_low, VAR_FLOOR);
        assert_eq!(p.var_high, VAR_FLOOR);
    }

    #[test]
    fn recovers_planted_mixture() {
        let values = planted_sample(500, 11);
        let set = DistanceSet::new(values).unwrap();
        let p = fit_gmm(&set, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        assert!((p.mean_low - 2.0).abs() < 0.3, "mean_low {}", p.mean_low);
        assert!((p.mean_high - 8.0).abs() < 0.3, "mean_high {}", p.mean_high);
        assert!((p.weight_low - 0.8).abs() < 0.05, "weight_low {}", p.weight_low);
        assert!((p.weight_high - 0.2).abs() < 0.05);
    }

    #[test]
    fn heavy_right_tail_puts_less_weight_on_high_component() {
        let values = planted_sample(1000, 13);
        let set = DistanceSet::new(values).unwrap();
        let p = fit_gmm(&set, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        assert!(p.weight_high < p.weight_low);
        assert!(p.mean_high > p.mean_low);
    }

    #[test]
    fn posterior_half_at_midpoint_of_symmetric_mixture() {
        let p = GmmParams {
            weight_low: 0.5,
            weight_high: 0.5,
            mean_low: 1.0,
            mean_high: 3.0,
            var_low: 0.5,
            var_high: 0.5,
        };
        assert!((posterior_abnormal(&p, 2.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn posterior_tends_to_one_in_right_tail() {
        let p = GmmParams {
            weight_low: 0.9,
            weight_high: 0.1,
            mean_low: 2.0,
            mean_high: 6.0,
            var_low: 0.5,
            var_high: 1.0,
        };
        assert!(posterior_abnormal(&p, 50.0) > 1.0 - 1e-9);
        assert!(posterior_abnormal(&p, 1e6) == 1.0 || posterior_abnormal(&p, 1e6) > 1.0 - 1e-12);
    }

    #[test]
    fn posterior_matches_direct_bayes_rule() {
        let values = planted_sample(500, 11);
        let set = DistanceSet::new(values).unwrap();
        let p = fit_gmm(&set, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        let d = 8.0;
        // independent direct evaluation of Bayes' rule in linear space
        let phi = |x: f64, m: f64, v: f64| (-(x - m) * (x - m) / (2.0 * v)).exp()
            / (std::f64::consts::TAU * v).sqrt();
        let hi = p.weight_high * phi(d, p.mean_high, p.var_high);
        let lo = p.weight_low * phi(d, p.mean_low, p.var_low);
        let expected = hi / (hi + lo);
        assert!((posterior_abnormal(&p, d) - expected).abs() < 1e-12);
    }

    #[test]
    fn relabeling_invariance_under_swapped_init() {
        let values = planted_sample(400, 19);
        let init = super::median_split_init(&values);
        let swapped = [init[1], init[0]];
        let (a, _) = super::fit_from_init(&values, init, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        let (b, _) = super::fit_from_init(&values, swapped, DEFAULT_MAX_ITERS, DEFAULT_TOL).unwrap();
        assert!((a.mean_low - b.mean_low).abs() < 1e-6);
        assert!((a.mean_high - b.mean_high).abs() < 1e-6);
        assert!((a.weight_low - b.weight_low).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn log_likelihood_non_decreasing(seed in 0u64..500, n in 8usize..120) {
            let mut rng = Rng::new(seed);
            let values: Vec<f64> = (0..n)
                .map(|_| (rng.range(0.0, 6.0) + rng.normal().abs()).max(0.0))
                .collect();
            let set = DistanceSet::new(values).unwrap();
            let (_, trace) = fit_gmm_trace(&set, 100, 0.0).unwrap();
            for w in trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9, "ll decreased: {} -> {}", w[0], w[1]);
            }
        }

        #[test]
        fn responsibilities_sum_to_one(d in 0.0f64..30.0) {
            let p = GmmParams {
                weight_low: 0.7, weight_high: 0.3,
                mean_low: 2.0, mean_high: 9.0,
                var_low: 0.8, var_high: 2.0,
            };
            let hi = posterior_abnormal(&p, d);
            prop_assert!((0.0..=1.0).contains(&hi));
            // complementary posterior computed directly
            let q = GmmParams {
                weight_low: p.weight_low, weight_high: p.weight_high,
                mean_low: p.mean_low, mean_high: p.mean_high,
                var_low: p.var_low, var_high: p.var_high,
            };
            let lo = 1.0 - posterior_abnormal(&q, d);
            prop_assert!((hi + lo - 1.0).abs() < 1e-12);
        }

        #[test]
        fn posterior_monotone_when_variances_equal(a in 0.0f64..10.0, b in 0.0f64..10.0) {
            let p = GmmParams {
                weight_low: 0.6, weight_high: 0.4,
                mean_low: 3.0, mean_high: 7.0,
                var_low: 1.5, var_high: 1.5,
            };
            let (x, y) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(posterior_abnormal(&p, x) <= posterior_abnormal(&p, y) + 1e-12);
        }
    }
}
