//! Posterior decomposition of events into exogenous, edge-triggered, and
//! endogenous sources: trigger probabilities, branching-forest sampling, the
//! expected-cascade-size transform, and the exogenous-probability curve.

use crate::data::Session;
use crate::draws::PosteriorDraws;
use crate::fit::draw_session_params;
use crate::hawkes::{intensity, HawkesParams};
use crate::model::ModelSpec;
use crate::simulate::SimSeed;
use crate::{Error, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Per-event categorical distribution over trigger sources. Row `i` holds
/// `p_exo` (baseline), `p_edge` (pre-window excitation), and one probability
/// per strictly earlier event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerProbMatrix {
    pub p_exo: Vec<f64>,
    pub p_edge: Vec<f64>,
    /// `p_parent[i][j]` = probability event `i` was triggered by event `j < i`
    pub p_parent: Vec<Vec<f64>>,
}

impl TriggerProbMatrix {
    pub fn n_events(&self) -> usize {
        self.p_exo.len()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.p_exo[i] + self.p_edge[i] + self.p_parent[i].iter().sum::<f64>()
    }

    /// Shannon entropy of row `i` in nats.
    pub fn row_entropy(&self, i: usize) -> f64 {
        let mut h = 0.0;
        let mut acc = |p: f64| {
            if p > 0.0 {
                h -= p * p.ln();
            }
        };
        acc(self.p_exo[i]);
        acc(self.p_edge[i]);
        for &p in &self.p_parent[i] {
            acc(p);
        }
        h
    }
}

/// How one event came to be, in a sampled branching forest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trigger {
    Exogenous,
    Edge,
    /// index of the parent event within the session
    Event(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingForest {
    pub parents: Vec<Trigger>,
}

impl BranchingForest {
    pub fn n_exogenous(&self) -> usize {
        self.parents.iter().filter(|p| **p == Trigger::Exogenous).count()
    }

    pub fn n_edge(&self) -> usize {
        self.parents.iter().filter(|p| **p == Trigger::Edge).count()
    }
}

/// Decompose the intensity at each event into its additive sources.
pub fn trigger_probabilities(params: &HawkesParams, session: &Session) -> Result<TriggerProbMatrix> {
    let times = session.times();
    if times.is_empty() {
        return Err(Error::Domain("trigger probabilities need a nonempty session".into()));
    }
    let n = times.len();
    let mut p_exo = Vec::with_capacity(n);
    let mut p_edge = Vec::with_capacity(n);
    let mut p_parent = Vec::with_capacity(n);
    for (i, &ti) in times.iter().enumerate() {
        let lam = intensity(params, session, ti)?;
        if !(lam > 0.0) {
            return Err(Error::Numerical(format!("nonpositive intensity at event {i}")));
        }
        p_exo.push(params.mu / lam);
        p_edge.push(params.delta_mu() * params.beta * (-params.beta * ti).exp() / lam);
        p_parent.push(
            times[..i]
                .iter()
                .map(|&tj| params.alpha * params.beta * (-params.beta * (ti - tj)).exp() / lam)
                .collect(),
        );
    }
    Ok(TriggerProbMatrix { p_exo, p_edge, p_parent })
}

/// Draw one forest: each event's trigger sampled from its categorical row.
/// Deterministic per seed.
pub fn sample_forest(probs: &TriggerProbMatrix, seed: SimSeed) -> BranchingForest {
    let mut rng = seed.rng();
    let parents = (0..probs.n_events())
        .map(|i| {
            let mut u: f64 = rng.gen();
            u -= probs.p_exo[i];
            if u < 0.0 {
                return Trigger::Exogenous;
            }
            u -= probs.p_edge[i];
            if u < 0.0 {
                return Trigger::Edge;
            }
            for (j, p) in probs.p_parent[i].iter().enumerate() {
                u -= p;
                if u < 0.0 {
                    return Trigger::Event(j);
                }
            }
            // numerical remainder lands on the most recent predecessor, or the
            // baseline for the first event
            if i > 0 {
                Trigger::Event(i - 1)
            } else {
                Trigger::Exogenous
            }
        })
        .collect();
    BranchingForest { parents }
}

/// Expected total number of descendants of one event, `a / (1 - a)` for a
/// subcritical branching factor `a`.
pub fn expected_descendants(a: f64) -> f64 {
    if a >= 1.0 {
        f64::INFINITY
    } else {
        a / (1.0 - a)
    }
}

/// Posterior summary of expected cascade size; supercritical draws are
/// excluded from the moments and counted instead of being clamped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeSummary {
    pub mean: f64,
    pub sd: f64,
    pub n_used: usize,
    pub n_supercritical: usize,
}

pub fn cascade_size_summary(branching_draws: &[f64]) -> CascadeSummary {
    let finite: Vec<f64> = branching_draws
        .iter()
        .filter(|a| **a < 1.0)
        .map(|a| expected_descendants(*a))
        .collect();
    CascadeSummary {
        mean: crate::stats::mean(&finite),
        sd: crate::stats::std_dev(&finite),
        n_used: finite.len(),
        n_supercritical: branching_draws.len() - finite.len(),
    }
}

/// Pointwise posterior of `p_exo(t) = mu / lambda(t)` on a time grid: median
/// and 80% highest-density interval per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExogenousCurve {
    pub times: Vec<f64>,
    pub median: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

pub const DEFAULT_CURVE_POINTS: usize = 512;
pub const CURVE_HDI_MASS: f64 = 0.8;

pub fn exogenous_probability_curve(
    spec: &ModelSpec,
    draws: &PosteriorDraws,
    session_pos: usize,
    grid: &[f64],
) -> Result<ExogenousCurve> {
    if grid.is_empty() {
        return Err(Error::Config("empty evaluation grid".into()));
    }
    let idx = spec.session_indices()[session_pos];
    let session = spec.cohort.session(idx);
    if grid.iter().any(|t| !(0.0..=session.duration).contains(t)) {
        return Err(Error::Domain("grid point outside the session window".into()));
    }
    let n_draws = draws.n_draws();
    let params: Vec<HawkesParams> =
        (0..n_draws).map(|d| draw_session_params(spec, draws, d, session_pos)).collect();
    let cols: Vec<(f64, f64, f64)> = grid
        .par_iter()
        .map(|&t| {
            let vals: Vec<f64> = params
                .iter()
                .map(|p| p.mu / intensity(p, session, t).unwrap_or(f64::INFINITY))
                .collect();
            let med = crate::stats::median(&vals);
            let (lo, hi) = crate::stats::hdi(&vals, CURVE_HDI_MASS);
            (med, lo, hi)
        })
        .collect();
    Ok(ExogenousCurve {
        times: grid.to_vec(),
        median: cols.iter().map(|c| c.0).collect(),
        lo: cols.iter().map(|c| c.1).collect(),
        hi: cols.iter().map(|c| c.2).collect(),
    })
}

/// Uniform grid of `n` points over `[0, duration]`.
pub fn uniform_grid(duration: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| duration * i as f64 / (n - 1).max(1) as f64).collect()
}
