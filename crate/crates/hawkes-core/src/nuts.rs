//! No-U-Turn sampler with dual-averaging step-size adaptation and diagonal
//! mass-matrix estimation in expanding warmup windows.
//!
//! Multinomial state selection within the doubling tree, biased progressive
//! sampling across doublings, and the generalized U-turn check on the tree
//! endpoints. Chains run concurrently with independent RNG streams and are
//! merged by chain index, so results are independent of scheduling.

use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Energy error beyond which a transition is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// A differentiable log-density over an unconstrained vector.
pub trait Target: Sync {
    fn dim(&self) -> usize;
    /// Writes the gradient into `grad` and returns the log density. Non-finite
    /// values are treated as divergent states by the sampler.
    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub target_accept: f64,
    pub max_depth: usize,
    pub seed: u64,
    /// Unconstrained initial values are drawn uniformly from
    /// `(-init_range, init_range)`.
    pub init_range: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            warmup: 1000,
            draws: 1000,
            target_accept: 0.95,
            max_depth: 10,
            seed: 0,
            init_range: 2.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains < 2 {
            return Err(Error::Config("at least 2 chains are required for R-hat".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config("target acceptance must be in (0,1)".into()));
        }
        if self.draws == 0 {
            return Err(Error::Config("need at least one sampling draw".into()));
        }
        Ok(())
    }
}

/// Post-warmup output of one chain.
#[derive(Debug, Clone)]
pub struct ChainRun {
    pub positions: Vec<Vec<f64>>,
    pub divergent: Vec<bool>,
    pub tree_depth: Vec<u8>,
    pub energy: Vec<f64>,
    pub accept_stat: Vec<f64>,
    pub step_size: f64,
    pub inv_mass: Vec<f64>,
}

/// Unconstrained-space draws from all chains.
#[derive(Debug, Clone)]
pub struct RawDraws {
    pub chains: Vec<ChainRun>,
}

impl RawDraws {
    pub fn n_divergent(&self) -> usize {
        self.chains.iter().map(|c| c.divergent.iter().filter(|d| **d).count()).sum()
    }

    pub fn mean_accept(&self) -> f64 {
        let all: Vec<f64> = self.chains.iter().flat_map(|c| c.accept_stat.clone()).collect();
        crate::stats::mean(&all)
    }
}

/// Run NUTS. Deterministic given the seed; each chain uses its own RNG stream.
pub fn sample<T: Target>(target: &T, cfg: &SamplerConfig) -> Result<RawDraws> {
    cfg.validate()?;
    let runs: Vec<Result<ChainRun>> = (0..cfg.chains)
        .into_par_iter()
        .map(|chain| run_chain(target, cfg, chain))
        .collect();
    let mut chains = Vec::with_capacity(cfg.chains);
    for r in runs {
        chains.push(r?);
    }
    let out = RawDraws { chains };
    let total = cfg.chains * cfg.draws;
    let div = out.n_divergent();
    if div * 4 > total {
        return Err(Error::Sampler(format!(
            "{div}/{total} divergent transitions (> 25%); the posterior geometry is \
             pathological — consider reparameterizing"
        )));
    }
    Ok(out)
}

struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

impl Point {
    fn clone_of(&self) -> Point {
        Point { q: self.q.clone(), p: self.p.clone(), grad: self.grad.clone(), logp: self.logp }
    }
}

struct Integrator<'a, T: Target> {
    target: &'a T,
    inv_mass: Vec<f64>,
    n_evals: usize,
}

impl<'a, T: Target> Integrator<'a, T> {
    fn hamiltonian(&self, pt: &Point) -> f64 {
        let kinetic: f64 =
            0.5 * pt.p.iter().zip(&self.inv_mass).map(|(p, m)| p * p * m).sum::<f64>();
        -pt.logp + kinetic
    }

    fn leapfrog(&mut self, pt: &mut Point, eps: f64) {
        let half = 0.5 * eps;
        for (p, g) in pt.p.iter_mut().zip(&pt.grad) {
            *p += half * g;
        }
        for ((q, p), m) in pt.q.iter_mut().zip(&pt.p).zip(&self.inv_mass) {
            *q += eps * p * m;
        }
        pt.logp = self.target.log_density_grad(&pt.q, &mut pt.grad);
        self.n_evals += 1;
        for (p, g) in pt.p.iter_mut().zip(&pt.grad) {
            *p += half * g;
        }
    }
}

fn is_turning(inv_mass: &[f64], q_minus: &[f64], q_plus: &[f64], p_minus: &[f64], p_plus: &[f64]) -> bool {
    let mut fwd = 0.0;
    let mut bwd = 0.0;
    for i in 0..q_minus.len() {
        let dq = q_plus[i] - q_minus[i];
        fwd += dq * inv_mass[i] * p_plus[i];
        bwd += dq * inv_mass[i] * p_minus[i];
    }
    fwd < 0.0 || bwd < 0.0
}

struct Subtree {
    minus: Point,
    plus: Point,
    proposal: Point,
    log_sum_weight: f64,
    sum_accept: f64,
    n_leapfrog: usize,
    diverged: bool,
    turning: bool,
}

#[allow(clippy::too_many_arguments)]
fn build_tree<T: Target>(
    integ: &mut Integrator<T>,
    rng: &mut ChaCha8Rng,
    depth: usize,
    from: &Point,
    direction: f64,
    eps: f64,
    h0: f64,
) -> Subtree {
    if depth == 0 {
        let mut pt = from.clone_of();
        integ.leapfrog(&mut pt, direction * eps);
        let h = integ.hamiltonian(&pt);
        let delta = h - h0;
        let diverged = !delta.is_finite() || delta > DIVERGENCE_THRESHOLD;
        let lw = if diverged { f64::NEG_INFINITY } else { -delta };
        let accept = if delta.is_finite() { (-delta).exp().min(1.0) } else { 0.0 };
        return Subtree {
            minus: pt.clone_of(),
            plus: pt.clone_of(),
            proposal: pt,
            log_sum_weight: lw,
            sum_accept: accept,
            n_leapfrog: 1,
            diverged,
            turning: false,
        };
    }
    let first = build_tree(integ, rng, depth - 1, from, direction, eps, h0);
    if first.diverged || first.turning {
        return first;
    }
    let grow_from = if direction > 0.0 { first.plus.clone_of() } else { first.minus.clone_of() };
    let second = build_tree(integ, rng, depth - 1, &grow_from, direction, eps, h0);
    let mut tree = Subtree {
        minus: if direction > 0.0 { first.minus.clone_of() } else { second.minus.clone_of() },
        plus: if direction > 0.0 { second.plus.clone_of() } else { first.plus.clone_of() },
        proposal: first.proposal.clone_of(),
        log_sum_weight: log_add(first.log_sum_weight, second.log_sum_weight),
        sum_accept: first.sum_accept + second.sum_accept,
        n_leapfrog: first.n_leapfrog + second.n_leapfrog,
        diverged: second.diverged,
        turning: second.turning,
    };
    if !tree.diverged && !tree.turning {
        // multinomial sampling between the two halves
        let p_second = (second.log_sum_weight - tree.log_sum_weight).exp();
        if rng.gen::<f64>() < p_second {
            tree.proposal = second.proposal.clone_of();
        }
        tree.turning = is_turning(
            &integ.inv_mass,
            &tree.minus.q,
            &tree.plus.q,
            &tree.minus.p,
            &tree.plus.p,
        );
    }
    tree
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

struct Transition {
    point: Point,
    divergent: bool,
    depth: u8,
    energy: f64,
    accept_stat: f64,
}

fn transition<T: Target>(
    integ: &mut Integrator<T>,
    rng: &mut ChaCha8Rng,
    current: &Point,
    eps: f64,
    max_depth: usize,
) -> Transition {
    let dim = current.q.len();
    let mut start = current.clone_of();
    for i in 0..dim {
        let z: f64 = rng.sample(StandardNormal);
        start.p[i] = z / integ.inv_mass[i].sqrt();
    }
    let h0 = integ.hamiltonian(&start);

    let mut minus = start.clone_of();
    let mut plus = start.clone_of();
    let mut proposal = start.clone_of();
    let mut log_sum_weight = 0.0; // initial state has weight 1
    let mut sum_accept = 0.0;
    let mut n_leapfrog = 0usize;
    let mut divergent = false;
    let mut depth = 0usize;

    while depth < max_depth {
        let direction: f64 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let from = if direction > 0.0 { plus.clone_of() } else { minus.clone_of() };
        let sub = build_tree(integ, rng, depth, &from, direction, eps, h0);
        sum_accept += sub.sum_accept;
        n_leapfrog += sub.n_leapfrog;
        if sub.diverged {
            divergent = true;
            break;
        }
        if sub.turning {
            break;
        }
        // biased progressive sampling across doublings
        let p_new = (sub.log_sum_weight - log_sum_weight).exp().min(1.0);
        if rng.gen::<f64>() < p_new {
            proposal = sub.proposal.clone_of();
        }
        log_sum_weight = log_add(log_sum_weight, sub.log_sum_weight);
        if direction > 0.0 {
            plus = sub.plus;
        } else {
            minus = sub.minus;
        }
        depth += 1;
        if is_turning(&integ.inv_mass, &minus.q, &plus.q, &minus.p, &plus.p) {
            break;
        }
    }
    let energy = integ.hamiltonian(&proposal);
    Transition {
        point: proposal,
        divergent,
        depth: depth as u8,
        energy,
        accept_stat: if n_leapfrog > 0 { sum_accept / n_leapfrog as f64 } else { 0.0 },
    }
}

/// Hoffman-Gelman dual averaging (gamma = 0.05, t0 = 10, kappa = 0.75).
struct DualAveraging {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    m: f64,
    delta: f64,
}

impl DualAveraging {
    fn new(eps0: f64, delta: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps0).ln(),
            log_eps: eps0.ln(),
            log_eps_bar: eps0.ln(),
            h_bar: 0.0,
            m: 0.0,
            delta,
        }
    }

    fn update(&mut self, accept: f64) {
        const GAMMA: f64 = 0.05;
        const T0: f64 = 10.0;
        const KAPPA: f64 = 0.75;
        self.m += 1.0;
        let frac = 1.0 / (self.m + T0);
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.delta - accept);
        self.log_eps = self.mu - self.m.sqrt() / GAMMA * self.h_bar;
        let w = self.m.powf(-KAPPA);
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn adapted(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Welford accumulator for the diagonal mass matrix.
struct RunningVariance {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningVariance {
    fn new(dim: usize) -> Self {
        RunningVariance { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn push(&mut self, q: &[f64]) {
        self.n += 1;
        for i in 0..q.len() {
            let d = q[i] - self.mean[i];
            self.mean[i] += d / self.n as f64;
            self.m2[i] += d * (q[i] - self.mean[i]);
        }
    }

    /// Regularized variance estimate (shrunk toward 1e-3 as in Stan).
    fn regularized(&self) -> Option<Vec<f64>> {
        if self.n < 10 {
            return None;
        }
        let n = self.n as f64;
        Some(
            self.m2
                .iter()
                .map(|m2| (n / ((n + 5.0) * (n - 1.0))) * m2 + 1e-3 * (5.0 / (n + 5.0)))
                .collect(),
        )
    }
}

fn find_initial_step<T: Target>(
    integ: &mut Integrator<T>,
    rng: &mut ChaCha8Rng,
    current: &Point,
    eps0: f64,
) -> f64 {
    let dim = current.q.len();
    let mut pt = current.clone_of();
    for i in 0..dim {
        let z: f64 = rng.sample(StandardNormal);
        pt.p[i] = z / integ.inv_mass[i].sqrt();
    }
    let h0 = integ.hamiltonian(&pt);
    let mut eps = eps0;
    let mut trial = pt.clone_of();
    integ.leapfrog(&mut trial, eps);
    let mut delta = h0 - integ.hamiltonian(&trial);
    if !delta.is_finite() {
        delta = f64::NEG_INFINITY;
    }
    let dir: f64 = if delta > (0.5f64).ln() { 1.0 } else { -1.0 };
    for _ in 0..50 {
        eps *= 2.0f64.powf(dir);
        let mut trial = pt.clone_of();
        integ.leapfrog(&mut trial, eps);
        let mut d = h0 - integ.hamiltonian(&trial);
        if !d.is_finite() {
            d = f64::NEG_INFINITY;
        }
        if (dir > 0.0 && d <= (0.5f64).ln()) || (dir < 0.0 && d >= (0.5f64).ln()) {
            break;
        }
    }
    eps.clamp(1e-10, 1e3)
}

/// Mass-adaptation window schedule over the warmup phase: an initial
/// step-size-only buffer, doubling covariance windows, and a terminal buffer.
fn window_ends(warmup: usize) -> Vec<usize> {
    if warmup < 40 {
        return vec![];
    }
    let init_buf = (warmup as f64 * 0.075).round() as usize;
    let term_buf = (warmup as f64 * 0.05).round() as usize;
    let mut ends = Vec::new();
    let mut start = init_buf;
    let mut width = 25usize.min(warmup / 8).max(5);
    loop {
        let mut end = start + width;
        if end + term_buf + width * 2 > warmup {
            end = warmup - term_buf;
        }
        ends.push(end);
        if end >= warmup - term_buf {
            break;
        }
        start = end;
        width *= 2;
    }
    ends
}

fn run_chain<T: Target>(target: &T, cfg: &SamplerConfig, chain: usize) -> Result<ChainRun> {
    let dim = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0x6e75_7473_0000_0000 | chain as u64);

    let mut integ = Integrator { target, inv_mass: vec![1.0; dim], n_evals: 0 };

    // find a starting point with finite density
    let mut current = Point {
        q: vec![0.0; dim],
        p: vec![0.0; dim],
        grad: vec![0.0; dim],
        logp: f64::NEG_INFINITY,
    };
    for attempt in 0..100 {
        for q in current.q.iter_mut() {
            *q = rng.gen_range(-cfg.init_range..cfg.init_range);
        }
        current.logp = target.log_density_grad(&current.q, &mut current.grad);
        if current.logp.is_finite() && current.grad.iter().all(|g| g.is_finite()) {
            break;
        }
        if attempt == 99 {
            return Err(Error::Sampler(
                "could not find an initial point with finite log density".into(),
            ));
        }
    }

    let mut eps = find_initial_step(&mut integ, &mut rng, &current, 1.0);
    let mut da = DualAveraging::new(eps, cfg.target_accept);
    let ends = window_ends(cfg.warmup);
    let mut window = 0usize;
    let mut welford = RunningVariance::new(dim);

    for it in 0..cfg.warmup {
        let tr = transition(&mut integ, &mut rng, &current, eps, cfg.max_depth);
        current = tr.point;
        da.update(tr.accept_stat);
        eps = da.current();
        if window < ends.len() {
            let window_start = if window == 0 {
                (cfg.warmup as f64 * 0.075).round() as usize
            } else {
                ends[window - 1]
            };
            if it >= window_start {
                welford.push(&current.q);
            }
            if it + 1 == ends[window] {
                if let Some(var) = welford.regularized() {
                    integ.inv_mass = var;
                    eps = find_initial_step(&mut integ, &mut rng, &current, eps);
                    da = DualAveraging::new(eps, cfg.target_accept);
                }
                welford = RunningVariance::new(dim);
                window += 1;
            }
        }
    }
    eps = if cfg.warmup > 0 { da.adapted() } else { eps };

    let mut run = ChainRun {
        positions: Vec::with_capacity(cfg.draws),
        divergent: Vec::with_capacity(cfg.draws),
        tree_depth: Vec::with_capacity(cfg.draws),
        energy: Vec::with_capacity(cfg.draws),
        accept_stat: Vec::with_capacity(cfg.draws),
        step_size: eps,
        inv_mass: integ.inv_mass.clone(),
    };
    for _ in 0..cfg.draws {
        let tr = transition(&mut integ, &mut rng, &current, eps, cfg.max_depth);
        current = tr.point;
        run.positions.push(current.q.clone());
        run.divergent.push(tr.divergent);
        run.tree_depth.push(tr.depth);
        run.energy.push(tr.energy);
        run.accept_stat.push(tr.accept_stat);
    }
    Ok(run)
}
