//! Residual goodness-of-fit tests on random-time-change residuals: the
//! Lewis-Durbin uniformity test, a one-sample KS test against the unit
//! exponential, Ljung-Box independence checks, and a posterior-predictive
//! version of the Lewis test that propagates parameter uncertainty.

use crate::draws::PosteriorDraws;
use crate::fit::draw_session_params;
use crate::hawkes::{rtct_transform, RtctResiduals};
use crate::model::ModelSpec;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Sessions need at least this many events for the uniformity tests to have
/// any resolution.
pub const DEFAULT_MIN_EVENTS: usize = 5;

/// Outcome of one hypothesis test. `p_value` is meaningful only when
/// `skipped` is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_used: usize,
    pub skipped: Option<String>,
}

impl TestResult {
    fn skipped(n: usize, reason: impl Into<String>) -> Self {
        TestResult { statistic: f64::NAN, p_value: f64::NAN, n_used: n, skipped: Some(reason.into()) }
    }

    pub fn is_skipped(&self) -> bool {
        self.skipped.is_some()
    }

    /// True when the test ran and did not reject at `alpha`.
    pub fn non_rejected(&self, alpha: f64) -> Option<bool> {
        if self.is_skipped() {
            None
        } else {
            Some(self.p_value > alpha)
        }
    }
}

/// Durbin's spacings transformation: maps `n` uniform order statistics on
/// (0,1) to `n` new uniform order statistics whose KS test is sensitive to
/// clustering. Input need not be sorted.
pub fn durbin_transform(u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let mut sorted = u.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // n+1 spacings including the terminal one
    let mut c = Vec::with_capacity(n + 1);
    let mut prev = 0.0;
    for &ui in &sorted {
        c.push(ui - prev);
        prev = ui;
    }
    c.push(1.0 - prev);
    c.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut v = Vec::with_capacity(n);
    let mut acc = 0.0;
    let mut c_prev = 0.0;
    for (i, &ci) in c.iter().enumerate().take(n) {
        acc += (n + 1 - i) as f64 * (ci - c_prev);
        c_prev = ci;
        v.push(acc);
    }
    v
}

/// Lewis test of the transformed event times against a unit Poisson process:
/// conditional uniformity via `u_i = t*_i / Lambda(T)`, Durbin's spacings
/// transformation, then a finite-sample-corrected KS test against
/// Uniform(0,1).
pub fn lewis_durbin_test(res: &RtctResiduals, min_events: usize) -> Result<TestResult> {
    let n = res.transformed_times.len();
    if n < min_events {
        return Ok(TestResult::skipped(n, format!("fewer than {min_events} events")));
    }
    if !res.total_mass.is_finite()
        || res.total_mass <= 0.0
        || res.transformed_times.iter().any(|t| !t.is_finite())
    {
        return Err(Error::Numerical("non-finite residuals in Lewis-Durbin test".into()));
    }
    let u: Vec<f64> = res.transformed_times.iter().map(|t| t / res.total_mass).collect();
    if u.iter().any(|ui| !(0.0..=1.0).contains(ui)) {
        return Err(Error::Numerical("residuals outside the transformed window".into()));
    }
    let v = durbin_transform(&u);
    let d = crate::stats::ks_statistic(&v, |x| x.clamp(0.0, 1.0));
    let p = crate::stats::ks_one_sample_p(d, n);
    Ok(TestResult { statistic: d, p_value: p, n_used: n, skipped: None })
}

/// KS test of RTCT interarrivals against the unit-rate exponential.
pub fn ks_exponential_test(interarrivals: &[f64], min_n: usize) -> Result<TestResult> {
    let n = interarrivals.len();
    if n < min_n {
        return Ok(TestResult::skipped(n, format!("fewer than {min_n} interarrivals")));
    }
    if interarrivals.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::Numerical("interarrivals must be positive and finite".into()));
    }
    let d = crate::stats::ks_statistic(interarrivals, |x| 1.0 - (-x).exp());
    let p = crate::stats::ks_one_sample_p(d, n);
    Ok(TestResult { statistic: d, p_value: p, n_used: n, skipped: None })
}

/// Ljung-Box portmanteau test for autocorrelation up to `lag` on the
/// probability-integral transforms `U_k = 1 - exp(-tau_k)`.
pub fn ljung_box_test(xs: &[f64], lag: usize) -> TestResult {
    let n = xs.len();
    if lag == 0 || n < lag + 5 {
        return TestResult::skipped(n, format!("need at least {} points for lag {lag}", lag + 5));
    }
    let m = crate::stats::mean(xs);
    let denom: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    if denom < 1e-300 {
        return TestResult::skipped(n, "constant series");
    }
    let nf = n as f64;
    let mut q = 0.0;
    for k in 1..=lag {
        let num: f64 = (0..n - k).map(|i| (xs[i] - m) * (xs[i + k] - m)).sum();
        let r = num / denom;
        q += r * r / (nf - k as f64);
    }
    q *= nf * (nf + 2.0);
    let chi = ChiSquared::new(lag as f64).unwrap();
    TestResult { statistic: q, p_value: 1.0 - chi.cdf(q), n_used: n, skipped: None }
}

/// Posterior-predictive Lewis test: for every posterior draw, transform the
/// observed session with that draw's parameters and test. Returns the
/// resulting p-value sample, which represents the test outcome with
/// parameter uncertainty propagated.
pub fn ppc_lewis(
    spec: &ModelSpec,
    draws: &PosteriorDraws,
    session_pos: usize,
    min_events: usize,
) -> Result<Vec<f64>> {
    let idx = spec.session_indices()[session_pos];
    let session = spec.cohort.session(idx);
    if session.n_events() < min_events {
        return Ok(Vec::new());
    }
    (0..draws.n_draws())
        .into_par_iter()
        .map(|d| {
            let params = draw_session_params(spec, draws, d, session_pos);
            let res = rtct_transform(&params, session)?;
            Ok(lewis_durbin_test(&res, min_events)?.p_value)
        })
        .collect()
}

/// Share of sessions whose test did not reject at each significance level,
/// plus the person-level aggregate (mean of each person's session
/// indicators, then averaged over persons).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonRejection {
    pub alpha: f64,
    pub session_level: f64,
    pub person_level: f64,
    pub n_sessions_tested: usize,
}

/// Aggregate per-session test outcomes into non-rejection proportions at the
/// given levels. `person_of` maps the session position to its person index.
pub fn non_rejection_summary(
    results: &[TestResult],
    person_of: &[usize],
    n_persons: usize,
    alphas: &[f64],
) -> Vec<NonRejection> {
    alphas
        .iter()
        .map(|&alpha| {
            let mut kept = 0usize;
            let mut tested = 0usize;
            let mut per_person: Vec<(usize, usize)> = vec![(0, 0); n_persons];
            for (r, &p) in results.iter().zip(person_of) {
                if let Some(nr) = r.non_rejected(alpha) {
                    tested += 1;
                    kept += nr as usize;
                    per_person[p].1 += 1;
                    per_person[p].0 += nr as usize;
                }
            }
            let persons: Vec<f64> = per_person
                .iter()
                .filter(|(_, n)| *n > 0)
                .map(|(k, n)| *k as f64 / *n as f64)
                .collect();
            NonRejection {
                alpha,
                session_level: if tested > 0 { kept as f64 / tested as f64 } else { f64::NAN },
                person_level: crate::stats::mean(&persons),
                n_sessions_tested: tested,
            }
        })
        .collect()
}
