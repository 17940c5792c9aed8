//! Session and cohort simulation: Ogata thinning and the cluster (branching)
//! representation, plus the synthetic cohort template.

use crate::data::{Cohort, Person, Session};
use crate::hawkes::HawkesParams;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

pub const DEFAULT_EVENT_CAP: usize = 1_000_000;

/// Seed plus stream id. The same `(seed, stream)` pair always produces the
/// same output regardless of thread scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimSeed {
    pub seed: u64,
    pub stream: u64,
}

impl SimSeed {
    pub fn new(seed: u64, stream: u64) -> Self {
        SimSeed { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Ground-truth parent of one simulated event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParentLabel {
    /// Immigrant from the baseline intensity.
    Exogenous,
    /// Immigrant from the decaying edge-effect stream.
    Edge,
    /// Child of the event at this index (after time-sorting).
    Event(usize),
}

/// Simulate one session by Ogata thinning. Between events every intensity
/// component except `mu` decays, so the intensity just after the current time
/// is a valid upper bound.
pub fn simulate_session_thinning(
    params: &HawkesParams,
    duration: f64,
    seed: SimSeed,
) -> Result<Session> {
    params.validate()?;
    if !(duration > 0.0) {
        return Err(Error::Domain(format!("duration {duration} must be positive")));
    }
    let mut rng = seed.rng();
    let HawkesParams { mu, alpha, beta, .. } = *params;
    let mut edge = params.delta_mu() * beta; // (mu0-mu)*beta*exp(-beta t)
    let mut excite = 0.0; // alpha*beta*sum exp(-beta (t-t_j))
    let mut t = 0.0;
    let mut times = Vec::new();
    loop {
        let bound = mu + edge + excite;
        let w: f64 = rng.sample::<f64, _>(Exp1) / bound;
        t += w;
        if t >= duration {
            break;
        }
        let decay = (-beta * w).exp();
        edge *= decay;
        excite *= decay;
        let lam = mu + edge + excite;
        if rng.gen::<f64>() * bound <= lam {
            times.push(t);
            excite += alpha * beta;
            if times.len() > DEFAULT_EVENT_CAP {
                return Err(Error::CappedSimulation(DEFAULT_EVENT_CAP));
            }
        }
    }
    Session::new("sim", "sim", duration, times)
}

/// Simulate one session via the cluster representation and keep the true
/// branching forest. Immigrants arrive from a homogeneous Poisson stream with
/// rate `mu` and from the inhomogeneous edge stream with rate
/// `(mu0 - mu) * beta * exp(-beta t)`; every event spawns `Poisson(alpha)`
/// children at `Exp(beta)` lags, and edge-stream descendants spawn too.
pub fn simulate_session_cluster(
    params: &HawkesParams,
    duration: f64,
    seed: SimSeed,
) -> Result<(Session, Vec<ParentLabel>)> {
    params.validate()?;
    if !(duration > 0.0) {
        return Err(Error::Domain(format!("duration {duration} must be positive")));
    }
    let mut rng = seed.rng();
    let HawkesParams { mu, alpha, beta, .. } = *params;

    // (time, label); labels refer to indices in this generation-order list
    let mut events: Vec<(f64, ParentLabel)> = Vec::new();

    let n_exo = sample_poisson(&mut rng, mu * duration);
    for _ in 0..n_exo {
        events.push((rng.gen::<f64>() * duration, ParentLabel::Exogenous));
    }
    let edge_mass = params.delta_mu() * (1.0 - (-beta * duration).exp());
    let n_edge = sample_poisson(&mut rng, edge_mass);
    let trunc = 1.0 - (-beta * duration).exp();
    for _ in 0..n_edge {
        // inverse CDF of Exp(beta) truncated to [0, duration]
        let u: f64 = rng.gen();
        let t = -(1.0 - u * trunc).ln() / beta;
        events.push((t, ParentLabel::Edge));
    }

    // breadth-first offspring generation; queue order is deterministic
    let mut cursor = 0;
    while cursor < events.len() {
        let parent_time = events[cursor].0;
        let n_children = sample_poisson(&mut rng, alpha);
        for _ in 0..n_children {
            let lag: f64 = rng.sample::<f64, _>(Exp1) / beta;
            let t = parent_time + lag;
            if t < duration {
                events.push((t, ParentLabel::Event(cursor)));
            }
        }
        cursor += 1;
        if events.len() > DEFAULT_EVENT_CAP {
            return Err(Error::CappedSimulation(DEFAULT_EVENT_CAP));
        }
    }

    // sort by time and remap parent indices from generation order
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| events[a].0.partial_cmp(&events[b].0).unwrap());
    let mut rank = vec![0usize; events.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let times: Vec<f64> = order.iter().map(|&i| events[i].0).collect();
    let labels: Vec<ParentLabel> = order
        .iter()
        .map(|&i| match events[i].1 {
            ParentLabel::Event(p) => ParentLabel::Event(rank[p]),
            other => other,
        })
        .collect();
    let session = Session::new("sim", "sim", duration, times)?;
    Ok((session, labels))
}

fn sample_poisson(rng: &mut ChaCha8Rng, rate: f64) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).unwrap().sample(rng) as usize
}

/// Population-level hyperparameters on the constrained scale. Person-level
/// parameters are mean-parameterized LogNormal:
/// `x_n ~ LogNormal(log(m) - s^2/2, s)` so that `E[x_n] = m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub mu_mu: f64,
    pub mu_alpha: f64,
    pub mu_beta: f64,
    pub sigma_mu: f64,
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
}

/// Template for generating a synthetic cohort: person count, session-count and
/// duration distributions, and the population hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortTemplate {
    pub n_persons: usize,
    pub hypers: Hyperparams,
    /// Geometric success probability for the per-person session count
    /// (support 1, 2, ...).
    pub session_count_p: f64,
    /// Log-scale sd of the session-duration LogNormal.
    pub duration_log_sd: f64,
    /// Mean session duration in minutes.
    pub duration_mean: f64,
    /// Durations are clamped to this range (minutes).
    pub duration_range: (f64, f64),
}

impl CohortTemplate {
    /// Template shaped like the study cohort marginals: 70 persons, shifted
    /// geometric session counts with median 5, durations around 60 minutes in
    /// roughly [5, 137].
    pub fn default_study_shape(hypers: Hyperparams) -> Self {
        CohortTemplate {
            n_persons: 70,
            hypers,
            session_count_p: 0.129,
            duration_log_sd: 0.55,
            duration_mean: 60.0,
            duration_range: (5.0, 137.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hypers;
        let pos = [h.mu_mu, h.mu_alpha, h.mu_beta, h.sigma_mu, h.sigma_alpha, h.sigma_beta];
        if self.n_persons == 0 || pos.iter().any(|x| !(*x > 0.0)) {
            return Err(Error::Config("cohort template requires positive hyperparameters".into()));
        }
        if h.mu_alpha >= 1.0 {
            return Err(Error::Config(
                "mu_alpha must be < 1 for the expected-descendants transform to be finite".into(),
            ));
        }
        if !(self.session_count_p > 0.0 && self.session_count_p < 1.0) {
            return Err(Error::Config("session_count_p must be in (0,1)".into()));
        }
        Ok(())
    }
}

/// True person-level parameters recorded by the cohort simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulatedCohort {
    pub cohort: Cohort,
    pub true_params: Vec<TrueParams>,
}

fn lognormal_mean_param(rng: &mut ChaCha8Rng, mean: f64, log_sd: f64) -> f64 {
    let m = mean.ln() - log_sd * log_sd / 2.0;
    let z: f64 = rng.sample(StandardNormal);
    (m + log_sd * z).exp()
}

/// Draw person-level parameters from the hierarchy, then sessions by thinning.
/// Stream ids are derived from (person, session) so parallel generation would
/// be schedule-independent.
pub fn simulate_cohort(template: &CohortTemplate, seed: SimSeed) -> Result<SimulatedCohort> {
    template.validate()?;
    let h = &template.hypers;
    let mut persons = Vec::with_capacity(template.n_persons);
    let mut true_params = Vec::with_capacity(template.n_persons);
    for pid in 0..template.n_persons {
        let mut prng = SimSeed::new(seed.seed, seed.stream ^ (0x9e37_79b9_7f4a_7c15u64
            .wrapping_mul(pid as u64 + 1)))
        .rng();
        // redraw supercritical persons: alpha >= 1 makes the cascade explode,
        // so the per-person branching factor is rejection-sampled below 0.99
        let mut alpha = lognormal_mean_param(&mut prng, h.mu_alpha, h.sigma_alpha);
        for _ in 0..1000 {
            if alpha < 0.99 {
                break;
            }
            alpha = lognormal_mean_param(&mut prng, h.mu_alpha, h.sigma_alpha);
        }
        if alpha >= 0.99 {
            return Err(Error::Config(
                "person-level branching factors are almost surely supercritical".into(),
            ));
        }
        let tp = TrueParams {
            mu: lognormal_mean_param(&mut prng, h.mu_mu, h.sigma_mu),
            alpha,
            beta: lognormal_mean_param(&mut prng, h.mu_beta, h.sigma_beta),
        };
        let n_sessions = sample_geometric(&mut prng, template.session_count_p);
        let mut sessions = Vec::with_capacity(n_sessions);
        for sid in 0..n_sessions {
            let duration = (lognormal_mean_param(
                &mut prng,
                template.duration_mean,
                template.duration_log_sd,
            ))
            .clamp(template.duration_range.0, template.duration_range.1);
            let params = HawkesParams::without_edge(tp.mu, tp.alpha, tp.beta)?;
            let sim_seed = SimSeed::new(
                seed.seed,
                seed.stream
                    ^ (0xd1b5_4a32_d192_ed03u64
                        .wrapping_mul((pid as u64 + 1) * 10_007 + sid as u64 + 1)),
            );
            let s = simulate_session_thinning(&params, duration, sim_seed)?;
            sessions.push(Session::new(
                format!("p{pid}"),
                format!("p{pid}_s{sid}"),
                duration,
                s.times().to_vec(),
            )?);
        }
        persons.push(Person { id: format!("p{pid}"), sessions });
        true_params.push(tp);
    }
    Ok(SimulatedCohort { cohort: Cohort::new(persons), true_params })
}

fn sample_geometric(rng: &mut ChaCha8Rng, p: f64) -> usize {
    let mut k = 1;
    while rng.gen::<f64>() > p {
        k += 1;
        if k >= 200 {
            break;
        }
    }
    k
}
