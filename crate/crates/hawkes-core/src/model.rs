//! Pooled, unpooled, and partially pooled model specifications as
//! differentiable joint log-densities over unconstrained parameter vectors.
//!
//! Priors follow the generative processes of the three models:
//!
//! * pooled: `mu, alpha, beta ~ Uniform(0, 3)` shared across the cohort;
//! * unpooled: per person `mu_n ~ Half-Cauchy(0.1)`, `alpha_n ~ Gamma(2.5, 0.4)`
//!   (shape-scale; prior mean 1.0, median ~0.87), `beta_n ~ Half-Cauchy(1.5)`;
//! * partial: six population hyperpriors and mean-parameterized LogNormal
//!   person levels, `x_n ~ LogNormal(log(m_x) - s_x^2/2, s_x)`, written in a
//!   non-centered form with standard-normal offsets.
//!
//! Every session with at least one event carries an edge-correction excess
//! `delta_mu ~ Half-Cauchy(0.1)` with `mu0 = mu + delta_mu`; sessions without
//! events fix `mu0 = mu`.
//!
//! The log prior is split into a power-scalable component (the component
//! sensitivity analysis perturbs: person-level priors for the unpooled model,
//! hyperpriors for the partial model) and a fixed remainder (standard-normal
//! offsets and session-level `delta_mu` priors).

use crate::data::{Cohort, SessionIndex};
use crate::draws::PosteriorDraws;
use crate::hawkes::{log_likelihood, log_likelihood_grad, HawkesParams};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

pub const UNIFORM_HI: f64 = 3.0;
pub const GAMMA_SHAPE: f64 = 2.5;
pub const GAMMA_SCALE: f64 = 0.4;
pub const DMU_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Pooled,
    Unpooled,
    Partial,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Pooled => "pooled",
            ModelKind::Unpooled => "unpooled",
            ModelKind::Partial => "partial",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(ModelKind::Pooled),
            "unpooled" => Ok(ModelKind::Unpooled),
            "partial" | "partial-pooled" | "partial_pooled" => Ok(ModelKind::Partial),
            other => Err(Error::Config(format!("unknown model kind: {other}"))),
        }
    }
}

/// Joint log-density evaluation at one unconstrained point.
#[derive(Debug, Clone)]
pub struct DensityValue {
    /// Power-scalable prior component (constrained-scale densities).
    pub log_prior: f64,
    /// Non-scalable prior remainder (offsets, session-level `delta_mu`).
    pub log_prior_fixed: f64,
    pub log_likelihood: f64,
    pub log_jacobian: f64,
    /// Gradient of the delta-weighted total w.r.t. the unconstrained vector.
    pub gradient: Vec<f64>,
}

impl DensityValue {
    /// `delta_prior * log_prior + log_prior_fixed + delta_lik * log_likelihood
    /// + log_jacobian`.
    pub fn total(&self, delta_prior: f64, delta_lik: f64) -> f64 {
        delta_prior * self.log_prior
            + self.log_prior_fixed
            + delta_lik * self.log_likelihood
            + self.log_jacobian
    }
}

/// Column roles for reconstructing per-session Hawkes parameters from a
/// constrained draw.
#[derive(Debug, Clone, Copy)]
struct SessionCols {
    mu: usize,
    alpha: usize,
    beta: usize,
    dmu: Option<usize>,
}

/// One of the three model specifications bound to a cohort.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub cohort: Cohort,
    /// Power-scale exponent on the scalable prior component.
    pub delta_prior: f64,
    /// Power-scale exponent on the likelihood.
    pub delta_lik: f64,
    event_sessions: Vec<SessionIndex>,
    all_sessions: Vec<SessionIndex>,
    dim: usize,
    param_names: Vec<String>,
    prior_term_names: Vec<String>,
    session_cols: Vec<SessionCols>,
}

pub fn build_model(kind: ModelKind, cohort: Cohort) -> Result<ModelSpec> {
    if cohort.n_sessions() == 0 {
        return Err(Error::Config("cohort has no sessions".into()));
    }
    let event_sessions = cohort.event_session_indices();
    let all_sessions = cohort.session_indices();
    let n = cohort.n_persons();
    let e = event_sessions.len();

    let mut param_names = Vec::new();
    let mut prior_term_names = Vec::new();
    let dim = match kind {
        ModelKind::Pooled => {
            param_names.extend(["mu", "alpha", "beta"].map(String::from));
            prior_term_names.extend(["mu", "alpha", "beta"].map(String::from));
            3 + e
        }
        ModelKind::Unpooled => {
            for p in &cohort.persons {
                for base in ["mu", "alpha", "beta"] {
                    param_names.push(format!("{base}[{}]", p.id));
                    prior_term_names.push(format!("{base}[{}]", p.id));
                }
            }
            3 * n + e
        }
        ModelKind::Partial => {
            let hypers = ["mu_mu", "mu_alpha", "mu_beta", "sigma_mu", "sigma_alpha", "sigma_beta"];
            param_names.extend(hypers.map(String::from));
            prior_term_names.extend(hypers.map(String::from));
            for p in &cohort.persons {
                for base in ["mu", "alpha", "beta"] {
                    param_names.push(format!("{base}[{}]", p.id));
                }
            }
            6 + 3 * n + e
        }
    };
    for idx in &event_sessions {
        param_names.push(format!("delta_mu[{}]", cohort.session(*idx).session_id));
    }

    // constrained-column lookup per session
    let mut dmu_col_of_session = vec![None; all_sessions.len()];
    let n_base = param_names.len() - e;
    let session_pos: std::collections::HashMap<(usize, usize), usize> = all_sessions
        .iter()
        .enumerate()
        .map(|(i, s)| ((s.person, s.session), i))
        .collect();
    for (k, idx) in event_sessions.iter().enumerate() {
        dmu_col_of_session[session_pos[&(idx.person, idx.session)]] = Some(n_base + k);
    }
    let session_cols: Vec<SessionCols> = all_sessions
        .iter()
        .enumerate()
        .map(|(i, idx)| {
            let (mu, alpha, beta) = match kind {
                ModelKind::Pooled => (0, 1, 2),
                ModelKind::Unpooled => {
                    (3 * idx.person, 3 * idx.person + 1, 3 * idx.person + 2)
                }
                ModelKind::Partial => {
                    (6 + 3 * idx.person, 6 + 3 * idx.person + 1, 6 + 3 * idx.person + 2)
                }
            };
            SessionCols { mu, alpha, beta, dmu: dmu_col_of_session[i] }
        })
        .collect();

    Ok(ModelSpec {
        kind,
        cohort,
        delta_prior: 1.0,
        delta_lik: 1.0,
        event_sessions,
        all_sessions,
        dim,
        param_names,
        prior_term_names,
        session_cols,
    })
}

// ---- prior densities on the constrained scale -------------------------------

fn half_normal_lp(x: f64, s: f64) -> f64 {
    0.5 * (2.0 / std::f64::consts::PI).ln() - s.ln() - x * x / (2.0 * s * s)
}

fn half_normal_dlp(x: f64, s: f64) -> f64 {
    -x / (s * s)
}

fn half_cauchy_lp(x: f64, s: f64) -> f64 {
    (2.0 / std::f64::consts::PI).ln() - s.ln() - (1.0 + (x / s) * (x / s)).ln()
}

fn half_cauchy_dlp(x: f64, s: f64) -> f64 {
    -2.0 * x / (s * s + x * x)
}

fn gamma_lp(x: f64, shape: f64, scale: f64) -> f64 {
    -ln_gamma(shape) - shape * scale.ln() + (shape - 1.0) * x.ln() - x / scale
}

fn gamma_dlp(x: f64, shape: f64, scale: f64) -> f64 {
    (shape - 1.0) / x - 1.0 / scale
}

fn std_normal_lp(z: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z * z
}

fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

// -----------------------------------------------------------------------------

impl ModelSpec {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Names of the constrained parameters reported in draws. For the partial
    /// model this includes the derived person-level parameters, so the list is
    /// longer than the unconstrained dimension.
    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn prior_term_names(&self) -> &[String] {
        &self.prior_term_names
    }

    pub fn n_sessions(&self) -> usize {
        self.all_sessions.len()
    }

    pub fn session_indices(&self) -> &[SessionIndex] {
        &self.all_sessions
    }

    pub fn event_session_indices(&self) -> &[SessionIndex] {
        &self.event_sessions
    }

    pub fn with_power_scale(mut self, delta_prior: f64, delta_lik: f64) -> Self {
        self.delta_prior = delta_prior;
        self.delta_lik = delta_lik;
        self
    }

    /// Indices (into `prior_term_names`) of the branching-factor prior terms.
    pub fn alpha_prior_term_indices(&self) -> Vec<usize> {
        self.prior_term_names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.as_str() == "alpha" || n.as_str() == "mu_alpha"
                || n.starts_with("alpha["))
            .map(|(i, _)| i)
            .collect()
    }

    /// Joint log-density and gradient at an unconstrained point. The gradient
    /// is weighted by the spec's power-scale exponents.
    pub fn log_density(&self, v: &[f64]) -> DensityValue {
        assert_eq!(v.len(), self.dim);
        match self.kind {
            ModelKind::Pooled => self.eval_pooled(v),
            ModelKind::Unpooled => self.eval_unpooled(v),
            ModelKind::Partial => self.eval_partial(v),
        }
    }

    /// Per-session log-likelihood at an unconstrained point, in
    /// `session_indices` order (value-only pass).
    pub fn per_session_loglik(&self, v: &[f64]) -> Vec<f64> {
        let constrained = self.constrain(v);
        self.all_sessions
            .iter()
            .enumerate()
            .map(|(i, idx)| {
                let p = self.session_params(&constrained, i);
                log_likelihood(&p, self.cohort.session(*idx))
            })
            .collect()
    }

    /// Scalable prior terms (constrained-scale log densities) at a point,
    /// aligned with `prior_term_names`.
    pub fn prior_terms(&self, v: &[f64]) -> Vec<f64> {
        let c = self.constrain(v);
        match self.kind {
            ModelKind::Pooled => vec![-UNIFORM_HI.ln(); 3],
            ModelKind::Unpooled => {
                let mut out = Vec::with_capacity(3 * self.cohort.n_persons());
                for n in 0..self.cohort.n_persons() {
                    out.push(half_cauchy_lp(c[3 * n], 0.1));
                    out.push(gamma_lp(c[3 * n + 1], GAMMA_SHAPE, GAMMA_SCALE));
                    out.push(half_cauchy_lp(c[3 * n + 2], 1.5));
                }
                out
            }
            ModelKind::Partial => vec![
                half_normal_lp(c[0], 0.1),
                gamma_lp(c[1], GAMMA_SHAPE, GAMMA_SCALE),
                half_cauchy_lp(c[2], 1.5),
                half_cauchy_lp(c[3], 1.5),
                half_cauchy_lp(c[4], 1.0),
                half_cauchy_lp(c[5], 1.5),
            ],
        }
    }

    /// Map an unconstrained vector to the constrained named parameters.
    pub fn constrain(&self, v: &[f64]) -> Vec<f64> {
        let e = self.event_sessions.len();
        let mut out = Vec::with_capacity(self.param_names.len());
        match self.kind {
            ModelKind::Pooled => {
                for u in &v[..3] {
                    out.push(UNIFORM_HI * sigmoid(*u));
                }
            }
            ModelKind::Unpooled => {
                for u in &v[..3 * self.cohort.n_persons()] {
                    out.push(u.exp());
                }
            }
            ModelKind::Partial => {
                let hypers: Vec<f64> = v[..6].iter().map(|u| u.exp()).collect();
                out.extend(&hypers);
                let n = self.cohort.n_persons();
                for i in 0..n {
                    for k in 0..3 {
                        let m = hypers[k];
                        let s = hypers[3 + k];
                        let z = v[6 + 3 * i + k];
                        out.push((m.ln() - s * s / 2.0 + s * z).exp());
                    }
                }
            }
        }
        for u in &v[self.dim - e..] {
            out.push(u.exp());
        }
        out
    }

    /// Inverse of `constrain`; errors if a value is outside its support.
    pub fn unconstrain(&self, constrained: &[f64]) -> Result<Vec<f64>> {
        if constrained.len() != self.param_names.len() {
            return Err(Error::Config("constrained vector length mismatch".into()));
        }
        let e = self.event_sessions.len();
        let mut v = Vec::with_capacity(self.dim);
        let positive = |x: f64| -> Result<f64> {
            if x > 0.0 {
                Ok(x.ln())
            } else {
                Err(Error::Domain(format!("{x} outside support (must be > 0)")))
            }
        };
        match self.kind {
            ModelKind::Pooled => {
                for x in &constrained[..3] {
                    if !(*x > 0.0 && *x < UNIFORM_HI) {
                        return Err(Error::Domain(format!("{x} outside (0, {UNIFORM_HI})")));
                    }
                    let s = x / UNIFORM_HI;
                    v.push((s / (1.0 - s)).ln());
                }
            }
            ModelKind::Unpooled => {
                for x in &constrained[..3 * self.cohort.n_persons()] {
                    v.push(positive(*x)?);
                }
            }
            ModelKind::Partial => {
                for x in &constrained[..6] {
                    v.push(positive(*x)?);
                }
                let n = self.cohort.n_persons();
                for i in 0..n {
                    for k in 0..3 {
                        let m = constrained[k];
                        let s = constrained[3 + k];
                        let x = constrained[6 + 3 * i + k];
                        if !(x > 0.0) {
                            return Err(Error::Domain(format!("{x} outside support")));
                        }
                        v.push((x.ln() - (m.ln() - s * s / 2.0)) / s);
                    }
                }
            }
        }
        for x in &constrained[constrained.len() - e..] {
            v.push(positive(*x)?);
        }
        Ok(v)
    }

    /// Hawkes parameters for session `session_pos` (position in
    /// `session_indices` order) from a constrained draw.
    pub fn session_params(&self, constrained: &[f64], session_pos: usize) -> HawkesParams {
        let cols = &self.session_cols[session_pos];
        let mu = constrained[cols.mu];
        let dmu = cols.dmu.map(|c| constrained[c]).unwrap_or(0.0);
        HawkesParams {
            mu,
            alpha: constrained[cols.alpha],
            beta: constrained[cols.beta],
            mu0: mu + dmu,
        }
    }

    /// Per-draw population branching factor series (flattened chain-major):
    /// `mu_alpha` draws for the partial model, `alpha` for the pooled model,
    /// and the per-draw person mean of `alpha_n` for the unpooled model.
    pub fn population_branching_factor(&self, draws: &PosteriorDraws) -> Vec<f64> {
        match self.kind {
            ModelKind::Pooled => draws.flat_param("alpha").to_vec(),
            ModelKind::Partial => draws.flat_param("mu_alpha").to_vec(),
            ModelKind::Unpooled => {
                let cols: Vec<Vec<f64>> = self
                    .cohort
                    .persons
                    .iter()
                    .map(|p| draws.flat_param(&format!("alpha[{}]", p.id)).to_vec())
                    .collect();
                let n_draws = cols[0].len();
                (0..n_draws)
                    .map(|d| cols.iter().map(|c| c[d]).sum::<f64>() / cols.len() as f64)
                    .collect()
            }
        }
    }

    // ---- evaluation ---------------------------------------------------------

    /// Likelihood accumulation shared by the three models. Returns the total
    /// log-likelihood plus, per person, accumulated (d_mu, d_alpha, d_beta)
    /// and per event-session d_dmu.
    fn accumulate_likelihood(
        &self,
        person_params: &[(f64, f64, f64)],
        dmus: &[f64],
    ) -> (f64, Vec<[f64; 3]>, Vec<f64>) {
        let mut total = 0.0;
        let mut person_grads = vec![[0.0f64; 3]; person_params.len()];
        let mut dmu_grads = vec![0.0f64; dmus.len()];
        let mut ev = 0usize;
        for idx in &self.all_sessions {
            let (mu, alpha, beta) = person_params[idx.person];
            let session = self.cohort.session(*idx);
            let dmu = if session.is_empty() {
                0.0
            } else {
                let d = dmus[ev];
                ev += 1;
                d
            };
            let params = HawkesParams { mu, alpha, beta, mu0: mu + dmu };
            let (ll, g) = log_likelihood_grad(&params, session);
            total += ll;
            let pg = &mut person_grads[idx.person];
            pg[0] += g.d_mu;
            pg[1] += g.d_alpha;
            pg[2] += g.d_beta;
            if !session.is_empty() {
                dmu_grads[ev - 1] = g.d_dmu;
            }
        }
        (total, person_grads, dmu_grads)
    }

    fn dmu_slice<'a>(&self, v: &'a [f64]) -> &'a [f64] {
        &v[self.dim - self.event_sessions.len()..]
    }

    /// Common handling of the session-level `delta_mu` block (fixed prior +
    /// jacobian + likelihood gradient).
    fn finish_dmu(
        &self,
        v: &[f64],
        dmu_grads: &[f64],
        grad: &mut [f64],
        log_prior_fixed: &mut f64,
        log_jac: &mut f64,
    ) {
        let e = self.event_sessions.len();
        let base = self.dim - e;
        for k in 0..e {
            let dmu = v[base + k].exp();
            *log_prior_fixed += half_cauchy_lp(dmu, DMU_SCALE);
            *log_jac += v[base + k];
            grad[base + k] = self.delta_lik * dmu_grads[k] * dmu
                + half_cauchy_dlp(dmu, DMU_SCALE) * dmu
                + 1.0;
        }
    }

    fn eval_pooled(&self, v: &[f64]) -> DensityValue {
        let mut grad = vec![0.0; self.dim];
        let s: Vec<f64> = v[..3].iter().map(|u| sigmoid(*u)).collect();
        let theta: Vec<f64> = s.iter().map(|s| UNIFORM_HI * s).collect();
        let dmus: Vec<f64> = self.dmu_slice(v).iter().map(|u| u.exp()).collect();

        let shared = (theta[0], theta[1], theta[2]);
        let (ll, pg, dmu_grads) = self.accumulate_likelihood(
            &vec![shared; self.cohort.n_persons()],
            &dmus,
        );
        let mut lik_grad = [0.0f64; 3];
        for g in &pg {
            for k in 0..3 {
                lik_grad[k] += g[k];
            }
        }

        let log_prior = -3.0 * UNIFORM_HI.ln();
        let mut log_jac = 0.0;
        for k in 0..3 {
            log_jac += UNIFORM_HI.ln() + s[k].ln() + (1.0 - s[k]).ln();
            let dtheta_du = UNIFORM_HI * s[k] * (1.0 - s[k]);
            grad[k] = self.delta_lik * lik_grad[k] * dtheta_du + (1.0 - 2.0 * s[k]);
        }
        let mut log_prior_fixed = 0.0;
        self.finish_dmu(v, &dmu_grads, &mut grad, &mut log_prior_fixed, &mut log_jac);
        DensityValue {
            log_prior,
            log_prior_fixed,
            log_likelihood: ll,
            log_jacobian: log_jac,
            gradient: grad,
        }
    }

    fn eval_unpooled(&self, v: &[f64]) -> DensityValue {
        let n = self.cohort.n_persons();
        let mut grad = vec![0.0; self.dim];
        let person_params: Vec<(f64, f64, f64)> = (0..n)
            .map(|i| (v[3 * i].exp(), v[3 * i + 1].exp(), v[3 * i + 2].exp()))
            .collect();
        let dmus: Vec<f64> = self.dmu_slice(v).iter().map(|u| u.exp()).collect();
        let (ll, pg, dmu_grads) = self.accumulate_likelihood(&person_params, &dmus);

        let mut log_prior = 0.0;
        let mut log_jac = 0.0;
        for i in 0..n {
            let (mu, alpha, beta) = person_params[i];
            log_prior += half_cauchy_lp(mu, 0.1)
                + gamma_lp(alpha, GAMMA_SHAPE, GAMMA_SCALE)
                + half_cauchy_lp(beta, 1.5);
            log_jac += v[3 * i] + v[3 * i + 1] + v[3 * i + 2];
            let dp = self.delta_prior;
            let dl = self.delta_lik;
            grad[3 * i] = (dl * pg[i][0] + dp * half_cauchy_dlp(mu, 0.1)) * mu + 1.0;
            grad[3 * i + 1] =
                (dl * pg[i][1] + dp * gamma_dlp(alpha, GAMMA_SHAPE, GAMMA_SCALE)) * alpha + 1.0;
            grad[3 * i + 2] = (dl * pg[i][2] + dp * half_cauchy_dlp(beta, 1.5)) * beta + 1.0;
        }
        let mut log_prior_fixed = 0.0;
        self.finish_dmu(v, &dmu_grads, &mut grad, &mut log_prior_fixed, &mut log_jac);
        DensityValue {
            log_prior,
            log_prior_fixed,
            log_likelihood: ll,
            log_jacobian: log_jac,
            gradient: grad,
        }
    }

    fn eval_partial(&self, v: &[f64]) -> DensityValue {
        let n = self.cohort.n_persons();
        let mut grad = vec![0.0; self.dim];
        let hypers: Vec<f64> = v[..6].iter().map(|u| u.exp()).collect();
        let (means, sds) = (&hypers[..3], &hypers[3..6]);

        let mut person_params = Vec::with_capacity(n);
        for i in 0..n {
            let get = |k: usize| {
                let z = v[6 + 3 * i + k];
                (means[k].ln() - sds[k] * sds[k] / 2.0 + sds[k] * z).exp()
            };
            person_params.push((get(0), get(1), get(2)));
        }
        let dmus: Vec<f64> = self.dmu_slice(v).iter().map(|u| u.exp()).collect();
        let (ll, pg, dmu_grads) = self.accumulate_likelihood(&person_params, &dmus);

        // hyperpriors
        let mut log_prior = half_normal_lp(hypers[0], 0.1)
            + gamma_lp(hypers[1], GAMMA_SHAPE, GAMMA_SCALE)
            + half_cauchy_lp(hypers[2], 1.5)
            + half_cauchy_lp(hypers[3], 1.5)
            + half_cauchy_lp(hypers[4], 1.0)
            + half_cauchy_lp(hypers[5], 1.5);
        if !log_prior.is_finite() {
            log_prior = f64::NEG_INFINITY;
        }
        let hyper_dlp = [
            half_normal_dlp(hypers[0], 0.1),
            gamma_dlp(hypers[1], GAMMA_SHAPE, GAMMA_SCALE),
            half_cauchy_dlp(hypers[2], 1.5),
            half_cauchy_dlp(hypers[3], 1.5),
            half_cauchy_dlp(hypers[4], 1.0),
            half_cauchy_dlp(hypers[5], 1.5),
        ];
        let mut log_jac: f64 = v[..6].iter().sum();
        let dp = self.delta_prior;
        let dl = self.delta_lik;
        for k in 0..6 {
            grad[k] = dp * hyper_dlp[k] * hypers[k] + 1.0;
        }

        let mut log_prior_fixed = 0.0;
        for i in 0..n {
            let tuple = person_params[i];
            let params = [tuple.0, tuple.1, tuple.2];
            for k in 0..3 {
                let z = v[6 + 3 * i + k];
                log_prior_fixed += std_normal_lp(z);
                let x = params[k];
                let g_lik = pg[i][k];
                // offset
                grad[6 + 3 * i + k] = dl * g_lik * x * sds[k] - z;
                // population mean: d x / d u_mean = x
                grad[k] += dl * g_lik * x;
                // population sd: d x / d u_sd = x * sd * (z - sd)
                grad[3 + k] += dl * g_lik * x * sds[k] * (z - sds[k]);
            }
        }
        self.finish_dmu(v, &dmu_grads, &mut grad, &mut log_prior_fixed, &mut log_jac);
        DensityValue {
            log_prior,
            log_prior_fixed,
            log_likelihood: ll,
            log_jacobian: log_jac,
            gradient: grad,
        }
    }
}
