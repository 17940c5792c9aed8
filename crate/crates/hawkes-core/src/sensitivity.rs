//! Power-scaling sensitivity analysis: raise the prior or the likelihood to a
//! power delta, reweight the stored posterior draws by importance sampling,
//! and measure the induced posterior shift with a cumulative Jensen-Shannon
//! distance. Large shifts under prior scaling signal prior-data conflict or a
//! dominating prior.

use crate::draws::PosteriorDraws;
use crate::loo::psis_smooth;
use crate::model::{ModelKind, ModelSpec};
use crate::stats;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_DELTA_GRID: [f64; 4] = [0.5, 0.8, 1.25, 2.0];
pub const DEFAULT_TAU: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Diagnosis {
    Robust,
    PriorDataConflict,
    StrongPriorWeakLikelihood,
}

impl std::fmt::Display for Diagnosis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Diagnosis::Robust => "robust",
            Diagnosis::PriorDataConflict => "prior-data conflict",
            Diagnosis::StrongPriorWeakLikelihood => "strong prior / weak likelihood",
        })
    }
}

/// Threshold rule on the two distances: both above tau is prior-data
/// conflict; only the prior distance above tau means the prior dominates a
/// weak likelihood; anything else is robust.
pub fn diagnose(prior_dist: f64, lik_dist: f64, tau: f64) -> Diagnosis {
    if prior_dist >= tau && lik_dist >= tau {
        Diagnosis::PriorDataConflict
    } else if prior_dist >= tau {
        Diagnosis::StrongPriorWeakLikelihood
    } else {
        Diagnosis::Robust
    }
}

/// Self-normalized importance weights for scaling a log-density component by
/// `delta`, Pareto-smoothed.
#[derive(Debug, Clone)]
pub struct PowerScaleWeights {
    /// normalized to sum 1
    pub weights: Vec<f64>,
    pub khat: f64,
    /// false when the Pareto shape exceeds 0.7
    pub reliable: bool,
}

/// Weights proportional to `component(theta)^(delta-1)` given per-draw log
/// component values. At `delta = 1` the weights are exactly uniform.
pub fn power_scale_weights(log_component: &[f64], delta: f64) -> Result<PowerScaleWeights> {
    if !(delta > 0.0) {
        return Err(Error::Config(format!("power-scale delta must be positive, got {delta}")));
    }
    let s = log_component.len();
    if s == 0 {
        return Err(Error::Config("no draws".into()));
    }
    if delta == 1.0 {
        return Ok(PowerScaleWeights { weights: vec![1.0 / s as f64; s], khat: f64::NEG_INFINITY, reliable: true });
    }
    if log_component.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numerical("non-finite log component in power scaling".into()));
    }
    let mut logw: Vec<f64> = log_component.iter().map(|l| (delta - 1.0) * l).collect();
    let khat = psis_smooth(&mut logw);
    let lse = stats::log_sum_exp(&logw);
    let weights: Vec<f64> = logw.iter().map(|l| (l - lse).exp()).collect();
    Ok(PowerScaleWeights { weights, khat, reliable: !(khat > 0.7) })
}

/// Symmetrized cumulative Jensen-Shannon distance between two weighted
/// empirical distributions over the same support values, normalized by its
/// upper bound (the sum of the two ECDF integrals) so that identical
/// distributions give 0, disjoint ones give 1, and the value is invariant
/// under affine maps of the support.
pub fn cjs_distance_weighted(xs: &[f64], wp: &[f64], wq: &[f64]) -> f64 {
    assert_eq!(xs.len(), wp.len());
    assert_eq!(xs.len(), wq.len());
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let sp: f64 = wp.iter().sum();
    let sq: f64 = wq.iter().sum();
    let range = xs[order[xs.len() - 1]] - xs[order[0]];
    if !(range > 0.0) {
        return 0.0;
    }
    let mut cjs_pq = 0.0;
    let mut cjs_qp = 0.0;
    let mut p_int = 0.0;
    let mut q_int = 0.0;
    let mut p = 0.0;
    let mut q = 0.0;
    for w in order.windows(2) {
        p += wp[w[0]] / sp;
        q += wq[w[0]] / sq;
        let dx = xs[w[1]] - xs[w[0]];
        if dx <= 0.0 {
            continue;
        }
        p_int += dx * p;
        q_int += dx * q;
        let m = 0.5 * (p + q);
        if p > 0.0 && m > 0.0 {
            cjs_pq += dx * (p * (p / m).log2() + (q - p) / (2.0 * std::f64::consts::LN_2));
        } else {
            cjs_pq += dx * (q - p) / (2.0 * std::f64::consts::LN_2);
        }
        if q > 0.0 && m > 0.0 {
            cjs_qp += dx * (q * (q / m).log2() + (p - q) / (2.0 * std::f64::consts::LN_2));
        } else {
            cjs_qp += dx * (p - q) / (2.0 * std::f64::consts::LN_2);
        }
    }
    let bound = p_int + q_int;
    if !(bound > 0.0) {
        return 0.0;
    }
    ((cjs_pq.max(0.0) + cjs_qp.max(0.0)) / bound).sqrt()
}

/// Distance between the plain empirical distribution of `xs` and its
/// reweighting by `weights`.
pub fn cjs_distance(xs: &[f64], weights: &[f64]) -> f64 {
    let uniform = vec![1.0; xs.len()];
    cjs_distance_weighted(xs, &uniform, weights)
}

/// One row of the sensitivity table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSensitivity {
    pub name: String,
    pub prior: f64,
    pub likelihood: f64,
    pub diagnosis: Diagnosis,
    /// worst Pareto shape across the delta grid, prior scaling
    pub prior_khat: f64,
    /// worst Pareto shape across the delta grid, likelihood scaling
    pub lik_khat: f64,
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub tau: f64,
    pub delta_grid: Vec<f64>,
    pub rows: Vec<ParamSensitivity>,
}

impl SensitivityTable {
    pub fn get(&self, name: &str) -> Option<&ParamSensitivity> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn format_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<18} {:>8} {:>11} {:>32}\n",
            "parameter", "prior", "likelihood", "diagnosis"
        ));
        for r in &self.rows {
            let mut diag = r.diagnosis.to_string();
            if !r.reliable {
                diag.push_str(" (unreliable)");
            }
            out.push_str(&format!(
                "{:<18} {:>8.3} {:>11.3} {:>32}\n",
                r.name, r.prior, r.likelihood, diag
            ));
        }
        out
    }
}

/// Person index owning each prior term, for scoping likelihood scaling in the
/// unpooled model (its posterior factorizes by person, so only that person's
/// sessions inform the parameter). `None` means the term is population-level.
fn person_of_term(spec: &ModelSpec, term_name: &str) -> Option<usize> {
    if spec.kind != ModelKind::Unpooled {
        return None;
    }
    let id = term_name.split('[').nth(1)?.trim_end_matches(']');
    spec.cohort.persons.iter().position(|p| p.id == id)
}

/// Per-draw log likelihood restricted to one person's sessions.
fn person_loglik(spec: &ModelSpec, draws: &PosteriorDraws, person: usize) -> Vec<f64> {
    let positions: Vec<usize> = spec
        .session_indices()
        .iter()
        .enumerate()
        .filter(|(_, idx)| idx.person == person)
        .map(|(i, _)| i)
        .collect();
    (0..draws.n_draws())
        .map(|d| {
            let row = draws.session_loglik_of_draw(d);
            positions.iter().map(|&i| row[i]).sum()
        })
        .collect()
}

/// Prior and likelihood sensitivity for every prior term, with the threshold
/// diagnosis. The reported value is the largest distance per unit of power
/// scaling across the delta grid.
pub fn sensitivity_table(
    spec: &ModelSpec,
    draws: &PosteriorDraws,
    delta_grid: &[f64],
    tau: f64,
) -> Result<SensitivityTable> {
    if draws.n_draws() < 100 {
        return Err(Error::Config("sensitivity analysis needs >= 100 draws".into()));
    }
    let names = draws.prior_term_names.clone();
    let rows: Vec<Result<ParamSensitivity>> = names
        .par_iter()
        .enumerate()
        .map(|(term, name)| {
            let col = draws
                .param_index(name)
                .ok_or_else(|| Error::Config(format!("prior term {name} has no parameter")))?;
            let xs = draws.flat_col(col);
            let term_lp: Vec<f64> =
                (0..draws.n_draws()).map(|d| draws.prior_terms_of_draw(d)[term]).collect();
            let lik: Vec<f64> = match person_of_term(spec, name) {
                Some(p) => person_loglik(spec, draws, p),
                None => draws.log_lik.clone(),
            };
            let mut prior_d: f64 = 0.0;
            let mut lik_d: f64 = 0.0;
            let mut prior_k = f64::NEG_INFINITY;
            let mut lik_k = f64::NEG_INFINITY;
            for &delta in delta_grid {
                // report the distance per unit of power scaling so the value
                // is comparable across grid points and approximates the
                // derivative of the distance at delta = 1
                let unit = (delta - 1.0).abs();
                if unit == 0.0 {
                    continue;
                }
                let wp = power_scale_weights(&term_lp, delta)?;
                prior_d = prior_d.max(cjs_distance(&xs, &wp.weights) / unit);
                prior_k = prior_k.max(wp.khat);
                let wl = power_scale_weights(&lik, delta)?;
                lik_d = lik_d.max(cjs_distance(&xs, &wl.weights) / unit);
                lik_k = lik_k.max(wl.khat);
            }
            Ok(ParamSensitivity {
                name: name.clone(),
                prior: prior_d,
                likelihood: lik_d,
                diagnosis: diagnose(prior_d, lik_d, tau),
                prior_khat: prior_k,
                lik_khat: lik_k,
                reliable: !(prior_k > 0.7) && !(lik_k > 0.7),
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SensitivityTable { tau, delta_grid: delta_grid.to_vec(), rows })
}

/// Branching-factor posterior summary under power-scaled branching-factor
/// priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub delta: f64,
    pub mean: f64,
    pub sd: f64,
    pub q5: f64,
    pub q95: f64,
    pub khat: f64,
    pub reliable: bool,
}

fn weighted_quantile(sorted_pairs: &[(f64, f64)], q: f64) -> f64 {
    let total: f64 = sorted_pairs.iter().map(|(_, w)| w).sum();
    let mut acc = 0.0;
    for (x, w) in sorted_pairs {
        acc += w;
        if acc >= q * total {
            return *x;
        }
    }
    sorted_pairs.last().map(|(x, _)| *x).unwrap_or(f64::NAN)
}

/// Reweighted mean / sd / 90% interval of the population branching factor
/// when only its prior terms are power-scaled over the delta grid.
pub fn branching_prior_sweep(
    spec: &ModelSpec,
    draws: &PosteriorDraws,
    delta_grid: &[f64],
) -> Result<Vec<SweepPoint>> {
    let bf = spec.population_branching_factor(draws);
    let term_idx = spec.alpha_prior_term_indices();
    let log_alpha_prior: Vec<f64> = (0..draws.n_draws())
        .map(|d| {
            let terms = draws.prior_terms_of_draw(d);
            term_idx.iter().map(|&t| terms[t]).sum()
        })
        .collect();
    delta_grid
        .iter()
        .map(|&delta| {
            let w = power_scale_weights(&log_alpha_prior, delta)?;
            let mean = stats::weighted_mean(&bf, &w.weights);
            let sd = stats::weighted_variance(&bf, &w.weights).sqrt();
            let mut pairs: Vec<(f64, f64)> =
                bf.iter().cloned().zip(w.weights.iter().cloned()).collect();
            pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            Ok(SweepPoint {
                delta,
                mean,
                sd,
                q5: weighted_quantile(&pairs, 0.05),
                q95: weighted_quantile(&pairs, 0.95),
                khat: w.khat,
                reliable: w.reliable,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn delta_one_gives_exactly_uniform_weights() {
        let lp: Vec<f64> = (0..500).map(|i| -(i as f64) * 0.01).collect();
        let w = power_scale_weights(&lp, 1.0).unwrap();
        assert!(w.weights.iter().all(|x| (*x - 1.0 / 500.0).abs() == 0.0));
        assert!(w.reliable);
    }

    #[test]
    fn delta_two_weight_ratio_is_density_ratio() {
        // without smoothing kicking in (small spread), the weight ratio of two
        // draws equals their prior-density ratio
        let lp = vec![-1.0; 200].into_iter().chain(vec![-1.2; 200]).collect::<Vec<_>>();
        let w = power_scale_weights(&lp, 2.0).unwrap();
        let ratio = w.weights[0] / w.weights[399];
        assert!((ratio - (0.2f64).exp()).abs() < 1e-9, "ratio {ratio}");
    }

    #[test]
    fn rejects_bad_delta() {
        assert!(power_scale_weights(&[0.0; 10], 0.0).is_err());
        assert!(power_scale_weights(&[0.0; 10], -1.0).is_err());
        assert!(power_scale_weights(&[f64::NAN; 10], 2.0).is_err());
    }

    #[test]
    fn likelihood_tempering_matches_conjugate_oracle() {
        // theta ~ N(0, tau2); y | theta ~ N(theta, sigma2), n observations.
        // scaling the likelihood by delta gives a conjugate posterior with
        // precision 1/tau2 + delta*n/sigma2 and matching mean
        let tau2: f64 = 4.0;
        let sigma2: f64 = 1.0;
        let ys = [1.2, 0.4, 2.1, 0.9];
        let n = ys.len() as f64;
        let sum_y: f64 = ys.iter().sum();
        let prec = 1.0 / tau2 + n / sigma2;
        let post_m = (sum_y / sigma2) / prec;
        let post_sd = (1.0 / prec).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s = 60_000;
        let thetas: Vec<f64> =
            (0..s).map(|_| post_m + post_sd * rng.sample::<f64, _>(StandardNormal)).collect();
        let loglik: Vec<f64> = thetas
            .iter()
            .map(|t| ys.iter().map(|y| -0.5 * (y - t) * (y - t) / sigma2).sum::<f64>())
            .collect();
        let delta = 0.5;
        let w = power_scale_weights(&loglik, delta).unwrap();
        let est = stats::weighted_mean(&thetas, &w.weights);
        let prec_t = 1.0 / tau2 + delta * n / sigma2;
        let expect = (delta * sum_y / sigma2) / prec_t;
        assert!((est - expect).abs() < 0.01, "tempered mean {est} vs {expect}");
        assert!(w.khat < 0.7);
    }

    #[test]
    fn cjs_identity_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..5000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let uniform = vec![1.0; xs.len()];
        assert_eq!(cjs_distance(&xs, &uniform), 0.0);
        let wq: Vec<f64> = xs.iter().map(|x| (0.3 * x).exp()).collect();
        let d1 = cjs_distance_weighted(&xs, &uniform, &wq);
        let d2 = cjs_distance_weighted(&xs, &wq, &uniform);
        assert!((d1 - d2).abs() < 1e-12);
        assert!(d1 > 0.0);
    }

    #[test]
    fn cjs_degenerate_support_is_zero() {
        assert_eq!(cjs_distance(&[2.0; 50], &[1.0; 50]), 0.0);
    }

    #[test]
    fn cjs_normal_shift_regression_value() {
        // N(0,1) vs N(1,1) via two-sample weighting: stable across seeds
        let mut values = Vec::new();
        for seed in 0..4 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 10_000;
            let mut xs: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            xs.extend((0..n).map(|_| 1.0 + rng.sample::<f64, _>(StandardNormal)));
            let mut wp = vec![1.0; n];
            wp.extend(vec![0.0; n]);
            let mut wq = vec![0.0; n];
            wq.extend(vec![1.0; n]);
            values.push(cjs_distance_weighted(&xs, &wp, &wq));
        }
        let m = stats::mean(&values);
        for v in &values {
            assert!((v - m).abs() / m < 0.05, "value {v} vs mean {m}");
        }
        assert!(m > 0.1 && m < 0.5, "mean distance {m}");
    }

    #[test]
    fn cjs_invariant_under_affine_support_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<f64> = (0..3000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let wq: Vec<f64> = xs.iter().map(|x| (0.5 * x).exp()).collect();
        let d = cjs_distance(&xs, &wq);
        let ys: Vec<f64> = xs.iter().map(|x| 7.0 * x - 3.0).collect();
        let d2 = cjs_distance(&ys, &wq);
        assert!((d - d2).abs() < 1e-12, "{d} vs {d2}");
    }

    #[test]
    fn diagnose_threshold_rule() {
        assert_eq!(diagnose(0.03, 0.01, 0.05), Diagnosis::Robust);
        assert_eq!(diagnose(0.74, 0.06, 0.05), Diagnosis::PriorDataConflict);
        assert_eq!(diagnose(0.00, 0.38, 0.05), Diagnosis::Robust);
        assert_eq!(diagnose(0.30, 0.01, 0.05), Diagnosis::StrongPriorWeakLikelihood);
    }

    #[test]
    fn weighted_quantile_matches_unweighted() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let pairs: Vec<(f64, f64)> = xs.iter().map(|x| (*x, 1.0)).collect();
        let q = weighted_quantile(&pairs, 0.5);
        assert!((q - 499.0).abs() <= 1.0);
    }
}
