//! MCMC convergence diagnostics: rank-normalized split R-hat, bulk and tail
//! effective sample sizes via Geyer's initial monotone sequence estimator,
//! Monte Carlo standard errors, and per-parameter summary tables.

use crate::draws::PosteriorDraws;
use crate::stats;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

/// Split each chain into two halves, dropping one draw from odd lengths.
pub fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Average ranks across the pooled sample (ties get the mean rank), mapped
/// through the normal quantile function with the (r - 3/8)/(S + 1/4) offset.
pub fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let s = pooled.len();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| pooled[a].partial_cmp(&pooled[b]).unwrap());
    let mut ranks = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0; // 1-based average rank
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    let norm = Normal::new(0.0, 1.0).unwrap();
    let z: Vec<f64> =
        ranks.iter().map(|r| norm.inverse_cdf((r - 0.375) / (s as f64 + 0.25))).collect();
    let mut out = Vec::with_capacity(chains.len());
    let mut off = 0;
    for c in chains {
        out.push(z[off..off + c.len()].to_vec());
        off += c.len();
    }
    out
}

fn chain_stats(chains: &[Vec<f64>]) -> (f64, f64) {
    // returns (within-chain variance W, var_plus)
    let n = chains[0].len() as f64;
    let vars: Vec<f64> = chains.iter().map(|c| stats::variance(c)).collect();
    let means: Vec<f64> = chains.iter().map(|c| stats::mean(c)).collect();
    let w = stats::mean(&vars);
    let b_over_n = if chains.len() > 1 { stats::variance(&means) } else { 0.0 };
    let var_plus = w * (n - 1.0) / n + b_over_n;
    (w, var_plus)
}

/// Classic potential scale reduction on the given (already split) chains.
fn rhat_of(chains: &[Vec<f64>]) -> f64 {
    let (w, var_plus) = chain_stats(chains);
    if var_plus < 1e-300 || w < 1e-300 {
        return 1.0;
    }
    (var_plus / w).sqrt()
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    let first = chains[0][0];
    chains.iter().all(|c| c.iter().all(|x| *x == first))
}

/// Rank-normalized split R-hat: the max over the bulk statistic and the
/// folded statistic (absolute deviations from the median), which is sensitive
/// to scale disagreement between chains.
pub fn rhat(chains: &[Vec<f64>]) -> f64 {
    let split = split_chains(chains);
    if is_constant(&split) {
        return 1.0;
    }
    let bulk = rhat_of(&rank_normalize(&split));
    let med = stats::median(&split.iter().flatten().copied().collect::<Vec<_>>());
    let folded: Vec<Vec<f64>> =
        split.iter().map(|c| c.iter().map(|x| (x - med).abs()).collect()).collect();
    let tail = rhat_of(&rank_normalize(&folded));
    bulk.max(tail)
}

fn autocovariance(chain: &[f64], mean: f64, lag: usize) -> f64 {
    let n = chain.len();
    let mut s = 0.0;
    for i in 0..n - lag {
        s += (chain[i] - mean) * (chain[i + lag] - mean);
    }
    s / n as f64
}

/// Effective sample size from Geyer's initial monotone positive sequence,
/// pooling autocorrelations across chains.
fn ess_of(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min().unwrap();
    if n < 4 {
        return f64::NAN;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let means: Vec<f64> = chains.iter().map(|c| stats::mean(c)).collect();
    let (w, var_plus) = chain_stats(&chains.iter().map(|c| c.to_vec()).collect::<Vec<_>>());
    if var_plus < 1e-300 {
        return (m * n) as f64;
    }
    let mean_acov = |lag: usize| -> f64 {
        let s: f64 = chains.iter().zip(&means).map(|(c, mu)| autocovariance(c, *mu, lag)).sum();
        s / m as f64
    };
    // rho_0 = 1 by construction of var_plus-normalized correlations
    let rho = |lag: usize| 1.0 - (w - mean_acov(lag)) / var_plus;
    // Geyer pairs: (rho_0 with rho_1), then (rho_2, rho_3), ...
    let mut sum_pairs = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0usize;
    loop {
        let r_even = if lag == 0 { 1.0 } else { rho(lag) };
        let r_odd = if lag + 1 < n { rho(lag + 1) } else { 0.0 };
        let mut pair = r_even + r_odd;
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev_pair); // initial monotone sequence
        sum_pairs += pair;
        prev_pair = pair;
        lag += 2;
        if lag >= n - 2 {
            break;
        }
    }
    let tau = (-1.0 + 2.0 * sum_pairs).max(1.0 / (m * n) as f64);
    let ess = (m * n) as f64 / tau;
    // antithetic chains can push ESS past the draw count, but cap the excess
    let total = (m * n) as f64;
    ess.min(total * total.log10())
}

/// Bulk ESS: ESS of the rank-normalized split chains.
pub fn ess_bulk(chains: &[Vec<f64>]) -> f64 {
    let split = split_chains(chains);
    if is_constant(&split) {
        return (split.len() * split[0].len()) as f64;
    }
    ess_of(&rank_normalize(&split))
}

/// Tail ESS: the smaller of the ESS values of the 5% and 95% exceedance
/// indicators, rank-normalized.
pub fn ess_tail(chains: &[Vec<f64>]) -> f64 {
    let split = split_chains(chains);
    if is_constant(&split) {
        return (split.len() * split[0].len()) as f64;
    }
    let pooled: Vec<f64> = split.iter().flatten().copied().collect();
    let q05 = stats::quantile(&pooled, 0.05);
    let q95 = stats::quantile(&pooled, 0.95);
    let ess_at = |q: f64, upper: bool| -> f64 {
        let ind: Vec<Vec<f64>> = split
            .iter()
            .map(|c| {
                c.iter()
                    .map(|x| if (upper && *x >= q) || (!upper && *x <= q) { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        if is_constant(&ind) {
            return (split.len() * split[0].len()) as f64;
        }
        ess_of(&rank_normalize(&ind))
    };
    ess_at(q05, false).min(ess_at(q95, true))
}

/// MCSE of the posterior sd given its sample estimate and an ESS.
pub fn mcse_sd(sd: f64, ess: f64) -> f64 {
    let fac = std::f64::consts::E * (1.0 - 1.0 / ess).powf(ess - 1.0) - 1.0;
    sd * fac.max(0.0).sqrt()
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub mcse_mean: f64,
    pub mcse_sd: f64,
    pub ess_bulk: f64,
    pub ess_tail: f64,
    pub r_hat: f64,
    pub q5: f64,
    pub median: f64,
    pub q95: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Diagnostics {
    pub params: Vec<ParamSummary>,
    pub n_divergent: usize,
    pub n_draws: usize,
}

impl Diagnostics {
    pub fn summarize(draws: &PosteriorDraws) -> Self {
        let params = (0..draws.n_params())
            .map(|col| {
                let chains = draws.col_chains(col);
                let flat = draws.flat_col(col);
                summarize_one(&draws.param_names[col], &chains, &flat)
            })
            .collect();
        Diagnostics { params, n_divergent: draws.n_divergent(), n_draws: draws.n_draws() }
    }

    pub fn get(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn max_rhat(&self) -> f64 {
        self.params.iter().map(|p| p.r_hat).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_ess_bulk(&self) -> f64 {
        self.params.iter().map(|p| p.ess_bulk).fold(f64::INFINITY, f64::min)
    }

    /// Parameters whose R-hat or bulk ESS fail the given thresholds; NaN
    /// statistics count as failures.
    pub fn failing_params(&self, rhat_max: f64, ess_min: f64) -> Vec<String> {
        self.params
            .iter()
            .filter(|p| !(p.r_hat < rhat_max) || !(p.ess_bulk >= ess_min))
            .map(|p| p.name.clone())
            .collect()
    }

    /// Fixed-width text table in posterior-summary layout.
    pub fn format_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<18} {:>10} {:>10} {:>10} {:>10} {:>9} {:>9} {:>7} {:>10} {:>10} {:>10}\n",
            "parameter", "mean", "sd", "mcse-mean", "mcse-sd", "ess-bulk", "ess-tail", "r-hat",
            "5%", "median", "95%"
        ));
        for p in &self.params {
            out.push_str(&format!(
                "{:<18} {:>10.4} {:>10.4} {:>10.6} {:>10.6} {:>9.0} {:>9.0} {:>7.3} {:>10.4} {:>10.4} {:>10.4}\n",
                p.name, p.mean, p.sd, p.mcse_mean, p.mcse_sd, p.ess_bulk, p.ess_tail, p.r_hat,
                p.q5, p.median, p.q95
            ));
        }
        out
    }
}

fn summarize_one(name: &str, chains: &[Vec<f64>], flat: &[f64]) -> ParamSummary {
    let mean = stats::mean(flat);
    let sd = stats::std_dev(flat);
    let eb = ess_bulk(chains);
    let et = ess_tail(chains);
    ParamSummary {
        name: name.to_string(),
        mean,
        sd,
        mcse_mean: sd / eb.sqrt(),
        mcse_sd: mcse_sd(sd, eb),
        ess_bulk: eb,
        ess_tail: et,
        r_hat: rhat(chains),
        q5: stats::quantile(flat, 0.05),
        median: stats::quantile(flat, 0.5),
        q95: stats::quantile(flat, 0.95),
    }
}

/// Per-chain rank histogram over the pooled ranks, for visual chain-mixing
/// checks: uniform bars indicate well-mixed chains.
pub fn rank_histogram(chains: &[Vec<f64>], bins: usize) -> Vec<Vec<usize>> {
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let s = pooled.len();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| pooled[a].partial_cmp(&pooled[b]).unwrap());
    let mut rank = vec![0usize; s];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let mut out = Vec::with_capacity(chains.len());
    let mut off = 0;
    for c in chains {
        let mut h = vec![0usize; bins];
        for k in 0..c.len() {
            h[rank[off + k] * bins / s] += 1;
        }
        out.push(h);
        off += c.len();
    }
    out
}

/// Welch's unequal-variance t-test; returns (t, degrees of freedom, two-sided
/// p-value).
pub fn welch_t_test(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let (ma, mb) = (stats::mean(a), stats::mean(b));
    let (va, vb) = (stats::variance(a), stats::variance(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).unwrap();
    let p = 2.0 * dist.cdf(-t.abs());
    (t, df, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn iid_chains(m: usize, n: usize, shift: f64, seed: u64) -> Vec<Vec<f64>> {
        (0..m)
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed + c as u64);
                (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) + shift * c as f64).collect()
            })
            .collect()
    }

    #[test]
    fn rhat_near_one_for_identical_distributions() {
        let chains = iid_chains(4, 1000, 0.0, 3);
        let r = rhat(&chains);
        assert!(r < 1.01, "r-hat {r}");
    }

    #[test]
    fn rhat_detects_location_shift() {
        let chains = iid_chains(4, 1000, 1.0, 3);
        assert!(rhat(&chains) > 1.2);
    }

    #[test]
    fn rhat_detects_scale_mismatch_via_folding() {
        // same location, different scales: folded statistic must flag it
        let mut chains = iid_chains(4, 1000, 0.0, 9);
        for x in chains[0].iter_mut() {
            *x *= 5.0;
        }
        assert!(rhat(&chains) > 1.1);
    }

    #[test]
    fn ess_of_iid_draws_near_sample_size() {
        let chains = iid_chains(4, 2000, 0.0, 17);
        let e = ess_bulk(&chains);
        let total = 8000.0;
        assert!((e - total).abs() / total < 0.25, "ess {e}");
        let et = ess_tail(&chains);
        assert!(et > 0.4 * total, "tail ess {et}");
    }

    #[test]
    fn ess_tracks_ar1_autocorrelation() {
        // AR(1) with coefficient 0.9 has integrated time (1+0.9)/(1-0.9) = 19
        let rho: f64 = 0.9;
        let m = 4;
        let n = 20_000;
        let chains: Vec<Vec<f64>> = (0..m)
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + c);
                let mut x = 0.0;
                (0..n)
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        x = rho * x + (1.0 - rho * rho).sqrt() * z;
                        x
                    })
                    .collect()
            })
            .collect();
        let e = ess_of(&chains);
        let expected = (m * n) as f64 / 19.0;
        assert!((e - expected).abs() / expected < 0.3, "ess {e} vs {expected}");
    }

    #[test]
    fn constant_chains_do_not_blow_up() {
        let chains = vec![vec![2.0; 100], vec![2.0; 100]];
        assert_eq!(rhat(&chains), 1.0);
        assert!(ess_bulk(&chains).is_finite());
    }

    #[test]
    fn mcse_formulas_match_reference_magnitudes() {
        // sd / sqrt(ess) for the mean; the sd formula behaves like
        // sd / sqrt(2 ess) for large ess
        let sd: f64 = 0.014843;
        let ess: f64 = 3894.887;
        assert!((sd / ess.sqrt() - 0.000238).abs() < 1e-6);
        let ms = mcse_sd(sd, ess);
        let approx = sd / (2.0 * ess).sqrt();
        assert!((ms - approx).abs() / approx < 0.01, "mcse_sd {ms} vs {approx}");
    }

    #[test]
    fn rank_normalization_centers_pooled_sample() {
        let chains = iid_chains(3, 500, 0.3, 5);
        let z = rank_normalize(&chains);
        let flat: Vec<f64> = z.iter().flatten().copied().collect();
        assert!(crate::stats::mean(&flat).abs() < 1e-3);
        assert!((crate::stats::variance(&flat) - 1.0).abs() < 0.05);
    }

    #[test]
    fn rank_histogram_is_uniform_for_mixed_chains() {
        let chains = iid_chains(4, 2000, 0.0, 77);
        let h = rank_histogram(&chains, 20);
        let expect = 2000.0 / 20.0;
        for ch in &h {
            for &b in ch {
                assert!((b as f64 - expect).abs() < 5.0 * expect.sqrt());
            }
        }
    }

    #[test]
    fn welch_test_hand_computed_case() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 4.0, 6.0, 8.0, 10.0];
        let (t, df, p) = welch_t_test(&a, &b);
        assert!((t + 1.897366596).abs() < 1e-6);
        assert!((df - 5.882352941).abs() < 1e-6);
        assert!(p > 0.10 && p < 0.12, "p {p}");
    }

    #[test]
    fn welch_test_same_sample_gives_t_zero() {
        let a = [1.0, 2.0, 3.0, 7.0];
        let (t, _, p) = welch_t_test(&a, &a);
        assert_eq!(t, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
    }
}
