//! Closed-form intensity, cumulative intensity, log-likelihood, and the
//! random-time-change transform for the edge-corrected exponential-kernel
//! Hawkes process.
//!
//! The conditional intensity is
//!
//! ```text
//! lambda(t) = mu + (mu0 - mu) * beta * exp(-beta t)
//!              + alpha * beta * sum_{t_j < t} exp(-beta (t - t_j))
//! ```
//!
//! with the `(mu0 - mu)` term correcting for excitation left over from
//! unobserved events before the window start. All times are minutes.

use crate::data::Session;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Parameters of one edge-corrected exponential-kernel Hawkes process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HawkesParams {
    /// Baseline intensity, events/min.
    pub mu: f64,
    /// Branching factor (expected direct offspring per event).
    pub alpha: f64,
    /// Kernel decay rate, 1/min.
    pub beta: f64,
    /// Intensity at the window start; `mu0 >= mu`.
    pub mu0: f64,
}

impl HawkesParams {
    pub fn new(mu: f64, alpha: f64, beta: f64, mu0: f64) -> Result<Self> {
        let p = HawkesParams { mu, alpha, beta, mu0 };
        p.validate()?;
        Ok(p)
    }

    /// Parameters with the edge correction disabled (`mu0 = mu`).
    pub fn without_edge(mu: f64, alpha: f64, beta: f64) -> Result<Self> {
        Self::new(mu, alpha, beta, mu)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) || !(self.beta > 0.0) || !(self.alpha >= 0.0) || self.mu0 < self.mu {
            return Err(Error::Domain(format!(
                "invalid Hawkes parameters: mu={} alpha={} beta={} mu0={} \
                 (need mu>0, alpha>=0, beta>0, mu0>=mu)",
                self.mu, self.alpha, self.beta, self.mu0
            )));
        }
        Ok(())
    }

    /// Excess initial intensity `mu0 - mu`.
    pub fn delta_mu(&self) -> f64 {
        self.mu0 - self.mu
    }
}

fn check_time(t: f64, duration: f64) -> Result<()> {
    if !(0.0..=duration).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, {duration}]")));
    }
    Ok(())
}

/// Conditional intensity at time `t`, conditioning on events strictly before `t`.
pub fn intensity(params: &HawkesParams, history: &Session, t: f64) -> Result<f64> {
    check_time(t, history.duration)?;
    let excite: f64 = history
        .times()
        .iter()
        .take_while(|tj| **tj < t)
        .map(|tj| (-params.beta * (t - tj)).exp())
        .sum();
    Ok(params.mu
        + params.delta_mu() * params.beta * (-params.beta * t).exp()
        + params.alpha * params.beta * excite)
}

/// Expected event count on `[0, t]`: the exact antiderivative of the intensity.
pub fn cumulative_intensity(params: &HawkesParams, session: &Session, t: f64) -> Result<f64> {
    check_time(t, session.duration)?;
    let kernel_mass: f64 = session
        .times()
        .iter()
        .take_while(|tj| **tj < t)
        .map(|tj| 1.0 - (-params.beta * (t - tj)).exp())
        .sum();
    Ok(params.mu * t
        + params.delta_mu() * (1.0 - (-params.beta * t).exp())
        + params.alpha * kernel_mass)
}

/// Session log-likelihood via the O(n) recursion
/// `A_j = exp(-beta (t_j - t_{j-1})) * (1 + A_{j-1})`, `A_1 = 0`.
pub fn log_likelihood(params: &HawkesParams, session: &Session) -> f64 {
    let HawkesParams { mu, alpha, beta, .. } = *params;
    let dmu = params.delta_mu();
    let times = session.times();
    let t_end = session.duration;

    let mut sum_log = 0.0;
    let mut a = 0.0; // A_j
    let mut comp_kernel = 0.0; // sum_j (1 - exp(-beta (T - t_j)))
    let mut prev = f64::NAN;
    for &tj in times {
        if prev.is_finite() {
            a = (-beta * (tj - prev)).exp() * (1.0 + a);
        }
        let lam = mu + dmu * beta * (-beta * tj).exp() + alpha * beta * a;
        sum_log += lam.ln();
        comp_kernel += 1.0 - (-beta * (t_end - tj)).exp();
        prev = tj;
    }
    let compensator = mu * t_end + dmu * (1.0 - (-beta * t_end).exp()) + alpha * comp_kernel;
    sum_log - compensator
}

/// Gradient of the session log-likelihood with respect to
/// `(mu, alpha, beta, delta_mu)` where `delta_mu = mu0 - mu`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SessionGrad {
    pub d_mu: f64,
    pub d_alpha: f64,
    pub d_beta: f64,
    pub d_dmu: f64,
}

/// Log-likelihood and its analytic gradient in one pass. The extra recursion
/// `B_j = exp(-beta d) * (B_{j-1} + d (1 + A_{j-1}))` carries
/// `sum_{k<j} (t_j - t_k) exp(-beta (t_j - t_k))` for the beta derivative.
pub fn log_likelihood_grad(params: &HawkesParams, session: &Session) -> (f64, SessionGrad) {
    let HawkesParams { mu, alpha, beta, .. } = *params;
    let dmu = params.delta_mu();
    let times = session.times();
    let t_end = session.duration;

    let mut sum_log = 0.0;
    let mut g = SessionGrad::default();
    let mut a = 0.0;
    let mut b = 0.0;
    let mut comp_kernel = 0.0;
    let mut comp_kernel_dbeta = 0.0; // sum_j (T - t_j) exp(-beta (T - t_j))
    let mut prev = f64::NAN;
    for &tj in times {
        if prev.is_finite() {
            let d = tj - prev;
            let f = (-beta * d).exp();
            b = f * (b + d * (1.0 + a));
            a = f * (1.0 + a);
        }
        let e = (-beta * tj).exp();
        let lam = mu + dmu * beta * e + alpha * beta * a;
        sum_log += lam.ln();
        let inv = 1.0 / lam;
        g.d_mu += inv;
        g.d_dmu += beta * e * inv;
        g.d_alpha += beta * a * inv;
        g.d_beta += (dmu * e * (1.0 - beta * tj) + alpha * (a - beta * b)) * inv;

        let rem = t_end - tj;
        let er = (-beta * rem).exp();
        comp_kernel += 1.0 - er;
        comp_kernel_dbeta += rem * er;
        prev = tj;
    }
    let e_t = (-beta * t_end).exp();
    let compensator = mu * t_end + dmu * (1.0 - e_t) + alpha * comp_kernel;
    g.d_mu -= t_end;
    g.d_dmu -= 1.0 - e_t;
    g.d_alpha -= comp_kernel;
    g.d_beta -= dmu * t_end * e_t + alpha * comp_kernel_dbeta;
    (sum_log - compensator, g)
}

/// Random-time-change residuals of one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtctResiduals {
    /// Transformed event times `Lambda(t_j)`, strictly increasing.
    pub transformed_times: Vec<f64>,
    /// Interarrivals `tau_j = Lambda(t_j) - Lambda(t_{j-1})`; unit-rate
    /// exponential under a correctly specified model.
    pub interarrivals: Vec<f64>,
    /// `Lambda(T)` over the whole window.
    pub total_mass: f64,
}

/// Transform event times by the cumulative intensity.
pub fn rtct_transform(params: &HawkesParams, session: &Session) -> Result<RtctResiduals> {
    let mut transformed = Vec::with_capacity(session.n_events());
    for &tj in session.times() {
        transformed.push(cumulative_intensity(params, session, tj)?);
    }
    let mut interarrivals = Vec::with_capacity(transformed.len());
    let mut prev = 0.0;
    for &t in &transformed {
        interarrivals.push(t - prev);
        prev = t;
    }
    let total_mass = cumulative_intensity(params, session, session.duration)?;
    Ok(RtctResiduals { transformed_times: transformed, interarrivals, total_mass })
}
