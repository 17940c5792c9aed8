//! Bridges model specifications to the sampler and post-processes raw
//! unconstrained draws into named constrained draws with per-session
//! likelihood bookkeeping.

use crate::draws::PosteriorDraws;
use crate::hawkes::HawkesParams;
use crate::model::ModelSpec;
use crate::nuts::{self, SamplerConfig, Target};
use crate::Result;
use rayon::prelude::*;

impl Target for ModelSpec {
    fn dim(&self) -> usize {
        ModelSpec::dim(self)
    }

    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let v = self.log_density(q);
        grad.copy_from_slice(&v.gradient);
        v.total(self.delta_prior, self.delta_lik)
    }
}

/// Sample the posterior of `spec` and return constrained draws.
pub fn fit(spec: &ModelSpec, cfg: &SamplerConfig) -> Result<PosteriorDraws> {
    let raw = nuts::sample(spec, cfg)?;
    let n_sessions = spec.n_sessions();
    let n_terms = spec.prior_term_names().len();
    let n_params = spec.param_names().len();

    struct Row {
        constrained: Vec<f64>,
        prior_terms: Vec<f64>,
        session_loglik: Vec<f64>,
    }

    let mut out = PosteriorDraws {
        param_names: spec.param_names().to_vec(),
        prior_term_names: spec.prior_term_names().to_vec(),
        chains: raw.chains.len(),
        draws_per_chain: cfg.draws,
        n_sessions,
        values: Vec::with_capacity(raw.chains.len() * cfg.draws * n_params),
        log_prior: Vec::with_capacity(raw.chains.len() * cfg.draws),
        prior_terms: Vec::with_capacity(raw.chains.len() * cfg.draws * n_terms),
        log_lik: Vec::with_capacity(raw.chains.len() * cfg.draws),
        session_loglik: Vec::with_capacity(raw.chains.len() * cfg.draws * n_sessions),
        divergent: Vec::new(),
        tree_depth: Vec::new(),
        energy: Vec::new(),
    };

    for chain in &raw.chains {
        let rows: Vec<Row> = chain
            .positions
            .par_iter()
            .map(|q| Row {
                constrained: spec.constrain(q),
                prior_terms: spec.prior_terms(q),
                session_loglik: spec.per_session_loglik(q),
            })
            .collect();
        for row in rows {
            out.log_prior.push(row.prior_terms.iter().sum());
            out.log_lik.push(row.session_loglik.iter().sum());
            out.values.extend(row.constrained);
            out.prior_terms.extend(row.prior_terms);
            out.session_loglik.extend(row.session_loglik);
        }
        out.divergent.extend_from_slice(&chain.divergent);
        out.tree_depth.extend_from_slice(&chain.tree_depth);
        out.energy.extend_from_slice(&chain.energy);
    }
    out.check_consistency()?;
    Ok(out)
}

/// Hawkes parameters of one session under one posterior draw.
pub fn draw_session_params(
    spec: &ModelSpec,
    draws: &PosteriorDraws,
    draw: usize,
    session_pos: usize,
) -> HawkesParams {
    let p = draws.n_params();
    let row = &draws.values[draw * p..(draw + 1) * p];
    spec.session_params(row, session_pos)
}

/// Hawkes parameters of one session at the posterior mean of the constrained
/// parameters.
pub fn posterior_mean_session_params(
    spec: &ModelSpec,
    draws: &PosteriorDraws,
    session_pos: usize,
) -> HawkesParams {
    let p = draws.n_params();
    let n = draws.n_draws() as f64;
    let mut mean = vec![0.0; p];
    for d in 0..draws.n_draws() {
        for (m, v) in mean.iter_mut().zip(&draws.values[d * p..(d + 1) * p]) {
            *m += v / n;
        }
    }
    spec.session_params(&mean, session_pos)
}
