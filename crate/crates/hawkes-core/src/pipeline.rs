//! End-to-end orchestration: cohort -> fit -> convergence gate -> residual
//! tests -> model comparison -> sensitivity -> branching -> report.
//!
//! Stages run sequentially; parallelism lives inside the stages. All
//! randomness derives from the single run seed through named streams, so a
//! rerun with the same configuration produces a byte-identical report.

use crate::branching::{cascade_size_summary, trigger_probabilities, uniform_grid, Trigger};
use crate::diagnostics::{rank_histogram, welch_t_test, Diagnostics};
use crate::gof::{ks_exponential_test, lewis_durbin_test, ljung_box_test, non_rejection_summary};
use crate::hawkes::rtct_transform;
use crate::io::{ingest, write_cohort_csv, InputSource, RunConfig};
use crate::loo::{compare, psis_loo, LooComparison};
use crate::model::{build_model, ModelSpec};
use crate::report::{
    BranchingPanel, BranchingSummary, GofTable, ModelReport, Provenance, RankHistogram, Report,
    WelchComparison, REPORT_SCHEMA_VERSION,
};
use crate::sensitivity::{branching_prior_sweep, sensitivity_table};
use crate::simulate::{simulate_cohort, SimSeed};
use crate::{fit, stats, Cohort, Error, PosteriorDraws, Result};

/// Named seed streams: every stage mixes its stream tag with the run seed so
/// stages never share an RNG sequence.
pub const STREAM_SIMULATE: u64 = 0x7369_6d00; // "sim"
pub const STREAM_FIT: u64 = 0x6669_7400; // "fit"
pub const STREAM_FOREST: u64 = 0x666f_7200; // "for"
pub const STREAM_PPC: u64 = 0x7070_6300; // "ppc"

/// Chains whose split rank-normalized R-hat reaches this value fail the
/// convergence gate.
pub const RHAT_GATE: f64 = 1.05;

/// Bins per chain in the emitted rank histograms.
pub const RANK_BINS: usize = 20;

/// Grid resolution of the per-session exogenous-probability curve.
pub const PANEL_CURVE_POINTS: usize = 128;

/// Everything `run_pipeline` produces beyond the files on disk.
pub struct PipelineOutput {
    pub report: Report,
    /// True when any model failed the convergence gate. Results are still
    /// written, flagged unreliable; callers map this to a distinct exit code.
    pub gate_failed: bool,
    /// Population branching-factor draws per model, report order.
    pub branching_draws: Vec<(String, Vec<f64>)>,
}

/// Cohort named by the config: CSV files or a seeded synthetic cohort.
pub fn load_cohort(config: &RunConfig) -> Result<Cohort> {
    match &config.input {
        InputSource::Csv { sessions, events } => ingest(sessions, events),
        InputSource::Simulate { template } => {
            Ok(simulate_cohort(template, SimSeed::new(config.seed, STREAM_SIMULATE))?.cohort)
        }
    }
}

/// Build and fit one model with the fit stream of the run seed.
pub fn fit_model(
    config: &RunConfig,
    kind: crate::ModelKind,
    model_pos: usize,
    cohort: Cohort,
) -> Result<(ModelSpec, PosteriorDraws)> {
    let mut spec = build_model(kind, cohort)?;
    if config.delta_prior != 1.0 || config.delta_lik != 1.0 {
        spec = spec.with_power_scale(config.delta_prior, config.delta_lik);
    }
    let mut sampler = config.sampler_config();
    sampler.seed = config.seed ^ STREAM_FIT ^ (model_pos as u64);
    let draws = fit::fit(&spec, &sampler)?;
    Ok((spec, draws))
}

fn gof_table(spec: &ModelSpec, draws: &PosteriorDraws, config: &RunConfig) -> Result<GofTable> {
    let n_sessions = spec.n_sessions();
    let mut lewis = Vec::with_capacity(n_sessions);
    let mut ks = Vec::with_capacity(n_sessions);
    let mut lb = Vec::with_capacity(n_sessions);
    let person_of: Vec<usize> = spec.session_indices().iter().map(|i| i.person).collect();
    for pos in 0..n_sessions {
        let params = fit::posterior_mean_session_params(spec, draws, pos);
        let session = spec.cohort.session(spec.session_indices()[pos]);
        let res = rtct_transform(&params, session)?;
        lewis.push(lewis_durbin_test(&res, config.gof.min_events)?);
        ks.push(ks_exponential_test(&res.interarrivals, config.gof.min_events)?);
        lb.push(ljung_box_test(&res.interarrivals, config.gof.lb_lag));
    }
    let n_persons = spec.cohort.n_persons();
    let grid = &config.gof.alpha_grid;
    Ok(GofTable {
        source: "residual tests at the posterior-mean parameters".into(),
        lewis_durbin: non_rejection_summary(&lewis, &person_of, n_persons, grid),
        ks_exponential: non_rejection_summary(&ks, &person_of, n_persons, grid),
        ljung_box: non_rejection_summary(&lb, &person_of, n_persons, grid),
    })
}

/// Trigger decomposition of the session with the most events.
fn branching_panel(spec: &ModelSpec, draws: &PosteriorDraws) -> Result<Option<BranchingPanel>> {
    let Some((pos, idx)) = spec
        .session_indices()
        .iter()
        .enumerate()
        .max_by_key(|(_, i)| spec.cohort.session(**i).n_events())
        .map(|(pos, i)| (pos, *i))
    else {
        return Ok(None);
    };
    let session = spec.cohort.session(idx);
    if session.n_events() < 2 {
        return Ok(None);
    }
    let params = fit::posterior_mean_session_params(spec, draws, pos);
    let probs = trigger_probabilities(&params, session)?;
    let n = probs.n_events();
    let best_parent: Vec<Option<usize>> = (0..n)
        .map(|i| {
            let mut best = Trigger::Exogenous;
            let mut best_p = probs.p_exo[i];
            if probs.p_edge[i] > best_p {
                best = Trigger::Edge;
                best_p = probs.p_edge[i];
            }
            for (j, &p) in probs.p_parent[i].iter().enumerate() {
                if p > best_p {
                    best = Trigger::Event(j);
                    best_p = p;
                }
            }
            match best {
                Trigger::Event(j) => Some(j),
                _ => None,
            }
        })
        .collect();
    let grid = uniform_grid(session.duration, PANEL_CURVE_POINTS);
    let curve = crate::branching::exogenous_probability_curve(spec, draws, pos, &grid)?;
    Ok(Some(BranchingPanel {
        person_id: session.person_id.clone(),
        session_id: session.session_id.clone(),
        event_times: session.times().to_vec(),
        p_exo: probs.p_exo,
        p_edge: probs.p_edge,
        best_parent,
        curve,
    }))
}

fn model_report(
    config: &RunConfig,
    spec: &ModelSpec,
    draws: &PosteriorDraws,
) -> Result<(ModelReport, Vec<f64>)> {
    let posterior = Diagnostics::summarize(draws);
    let mut reasons = Vec::new();
    for name in posterior.failing_params(RHAT_GATE, 0.0) {
        let rhat = posterior.get(&name).map(|p| p.r_hat).unwrap_or(f64::NAN);
        reasons.push(format!("{name}: split R-hat {rhat:.3} >= {RHAT_GATE}"));
    }
    let unreliable = !reasons.is_empty();
    if posterior.n_divergent > 0 {
        reasons.push(format!("{} divergent transitions", posterior.n_divergent));
    }
    for r in &reasons {
        log::warn!("model {}: {r}", spec.kind.name());
    }

    let rank_histograms = draws
        .param_names
        .iter()
        .enumerate()
        .map(|(col, name)| RankHistogram {
            name: name.clone(),
            bins: rank_histogram(&draws.col_chains(col), RANK_BINS),
        })
        .collect();

    let bf = spec.population_branching_factor(draws);
    let branching = BranchingSummary {
        model: spec.kind.name().into(),
        mean: stats::mean(&bf),
        sd: stats::std_dev(&bf),
        q5: stats::quantile(&bf, 0.05),
        q95: stats::quantile(&bf, 0.95),
        cascade: cascade_size_summary(&bf),
    };

    let report = ModelReport {
        name: spec.kind.name().into(),
        source: "posterior draws persisted per chain".into(),
        posterior,
        rank_histograms,
        unreliable,
        unreliable_reasons: reasons,
        branching,
        gof: gof_table(spec, draws, config)?,
        sensitivity: sensitivity_table(
            spec,
            draws,
            &config.sensitivity.delta_grid,
            config.sensitivity.tau,
        )?,
        branching_prior_sweep: branching_prior_sweep(spec, draws, &config.sensitivity.delta_grid)?,
        panel: branching_panel(spec, draws)?,
    };
    Ok((report, bf))
}

fn loo_comparison(fitted: &[(ModelSpec, PosteriorDraws)]) -> Result<LooComparison> {
    let models = fitted
        .iter()
        .map(|(spec, draws)| {
            psis_loo(spec.kind.name(), draws.loglik_matrix(), draws.n_draws(), spec.n_sessions())
        })
        .collect::<Result<Vec<_>>>()?;
    compare(models)
}

/// Run every stage and write draws, the report, and plots under
/// `config.out_dir`.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let out_dir = &config.out_dir;
    let draws_dir = out_dir.join("draws");
    std::fs::create_dir_all(&draws_dir)?;

    let cohort = load_cohort(config)?;
    if matches!(config.input, InputSource::Simulate { .. }) {
        // keep the generated data next to the results for reingestion
        write_cohort_csv(
            &cohort,
            &out_dir.join("sessions.csv"),
            &out_dir.join("events.csv"),
        )?;
    }

    let mut fitted = Vec::with_capacity(config.models.len());
    for (pos, &kind) in config.models.iter().enumerate() {
        log::info!("fitting {} model ({} sessions)", kind.name(), cohort.n_sessions());
        let (spec, draws) = fit_model(config, kind, pos, cohort.clone())?;
        draws.save(&draws_dir, kind.name())?;
        fitted.push((spec, draws));
    }

    let output = build_report(config, &fitted)?;
    output.report.save(&out_dir.join("report.json"))?;
    std::fs::write(out_dir.join("report.txt"), output.report.format_text())?;
    crate::plots::emit_plots(&output.report, &output.branching_draws, out_dir)?;
    Ok(output)
}

/// Assemble the report from already-fitted models; `report` subcommands reuse
/// this with draws loaded from disk.
pub fn build_report(
    config: &RunConfig,
    fitted: &[(ModelSpec, PosteriorDraws)],
) -> Result<PipelineOutput> {
    if fitted.is_empty() {
        return Err(Error::Config("no fitted models".into()));
    }
    let mut models = Vec::with_capacity(fitted.len());
    let mut branching_draws = Vec::with_capacity(fitted.len());
    for (spec, draws) in fitted {
        let (report, bf) = model_report(config, spec, draws)?;
        branching_draws.push((report.name.clone(), bf));
        models.push(report);
    }

    let mut branching_comparison = Vec::new();
    for i in 0..branching_draws.len() {
        for j in i + 1..branching_draws.len() {
            let (ref na, ref a) = branching_draws[i];
            let (ref nb, ref b) = branching_draws[j];
            let (t, df, p_value) = welch_t_test(a, b);
            branching_comparison.push(WelchComparison {
                model_a: na.clone(),
                model_b: nb.clone(),
                t,
                df,
                p_value,
            });
        }
    }

    let gate_failed = models.iter().any(|m| m.unreliable);
    let report = Report {
        provenance: Provenance {
            seed: config.seed,
            config_hash: config.hash(),
            version: env!("CARGO_PKG_VERSION").into(),
            schema_version: REPORT_SCHEMA_VERSION,
        },
        models,
        branching_comparison,
        loo: loo_comparison(fitted)?,
    };
    Ok(PipelineOutput { report, gate_failed, branching_draws })
}

/// Reload persisted draws for the configured models and rebuild the report.
pub fn rebuild_from_disk(config: &RunConfig) -> Result<PipelineOutput> {
    config.validate()?;
    let draws_dir = config.out_dir.join("draws");
    let cohort = load_cohort(config)?;
    let mut fitted = Vec::with_capacity(config.models.len());
    for &kind in &config.models {
        let spec = build_model(kind, cohort.clone())?;
        let draws = PosteriorDraws::load(&draws_dir, kind.name())?;
        fitted.push((spec, draws));
    }
    build_report(config, &fitted)
}
