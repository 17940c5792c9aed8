//! Analysis report: one serializable document collecting every table the
//! pipeline produces, with enough provenance to regenerate it bit-identically
//! from the persisted draws and the original configuration.

use crate::branching::{CascadeSummary, ExogenousCurve};
use crate::diagnostics::Diagnostics;
use crate::gof::NonRejection;
use crate::loo::LooComparison;
use crate::sensitivity::{SensitivityTable, SweepPoint};
use crate::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Where a report came from: enough to reproduce it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// SHA-256 of the run configuration JSON.
    pub config_hash: String,
    /// Crate version that produced the report.
    pub version: String,
    pub schema_version: u32,
}

/// Posterior of the population branching factor for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingSummary {
    pub model: String,
    pub mean: f64,
    pub sd: f64,
    pub q5: f64,
    pub q95: f64,
    /// Expected total descendants per exogenous event, a/(1-a) per draw.
    pub cascade: CascadeSummary,
}

/// Welch's unequal-variance t-test between two models' branching-factor draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelchComparison {
    pub model_a: String,
    pub model_b: String,
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Non-rejection proportions for the three residual tests over the
/// significance grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofTable {
    /// Stage that produced the numbers (traceability tag).
    pub source: String,
    pub lewis_durbin: Vec<NonRejection>,
    pub ks_exponential: Vec<NonRejection>,
    pub ljung_box: Vec<NonRejection>,
}

/// Per-chain rank counts for one parameter; the data behind a rank plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankHistogram {
    pub name: String,
    /// bins[chain][bin]
    pub bins: Vec<Vec<usize>>,
}

/// Trigger decomposition of one session: per-event probabilities at the
/// posterior mean plus the exogenous-probability curve over the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingPanel {
    pub person_id: String,
    pub session_id: String,
    pub event_times: Vec<f64>,
    /// P(exogenous) per event.
    pub p_exo: Vec<f64>,
    /// P(edge-triggered) per event.
    pub p_edge: Vec<f64>,
    /// Most likely parent event index per event, if the most likely trigger
    /// is an earlier event.
    pub best_parent: Vec<Option<usize>>,
    pub curve: ExogenousCurve,
}

/// Everything the pipeline produces for one fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    /// Stage tag for the posterior summary (sampler + draw storage).
    pub source: String,
    /// Per-parameter summary table: mean, sd, MCSE, ESS, R-hat, quantiles.
    pub posterior: Diagnostics,
    pub rank_histograms: Vec<RankHistogram>,
    /// Set when the convergence gate failed; downstream numbers for this
    /// model are still reported but must not be trusted.
    pub unreliable: bool,
    pub unreliable_reasons: Vec<String>,
    pub branching: BranchingSummary,
    pub gof: GofTable,
    pub sensitivity: SensitivityTable,
    /// Branching-factor posterior under power-scaled priors, one point per
    /// delta in the grid.
    pub branching_prior_sweep: Vec<SweepPoint>,
    /// Trigger decomposition of the busiest session.
    pub panel: Option<BranchingPanel>,
}

/// The full analysis document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub provenance: Provenance,
    pub models: Vec<ModelReport>,
    /// Pairwise branching-factor tests across models.
    pub branching_comparison: Vec<WelchComparison>,
    /// Model ranking by expected log predictive density with stacking weights.
    pub loo: LooComparison,
}

impl Report {
    /// Canonical JSON form; field order is fixed by the struct definitions,
    /// so identical inputs give byte-identical output.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// SHA-256 of the canonical JSON, hex-encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_json()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn get_model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.name == name)
    }

    /// Human-readable rendering of the main tables.
    pub fn format_text(&self) -> String {
        let mut out = String::new();
        let p = &self.provenance;
        out.push_str(&format!(
            "run seed {}  config {}  version {}\n\n",
            p.seed,
            &p.config_hash[..12.min(p.config_hash.len())],
            p.version
        ));

        out.push_str("== model comparison (leave-one-session-out) ==\n");
        out.push_str(&format_loo_table(&self.loo));

        out.push_str("\n== branching factor ==\n");
        out.push_str(&format!(
            "{:<10} {:>8} {:>8} {:>8} {:>8} {:>12}\n",
            "model", "mean", "sd", "q5", "q95", "descendants"
        ));
        for m in &self.models {
            let b = &m.branching;
            out.push_str(&format!(
                "{:<10} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>12.3}{}\n",
                b.model,
                b.mean,
                b.sd,
                b.q5,
                b.q95,
                b.cascade.mean,
                if m.unreliable { "  [unreliable]" } else { "" }
            ));
        }
        for w in &self.branching_comparison {
            out.push_str(&format!(
                "  {} vs {}: t = {:.3}, df = {:.1}, p = {:.4}\n",
                w.model_a, w.model_b, w.t, w.df, w.p_value
            ));
        }

        for m in &self.models {
            out.push_str(&format!("\n== {} ==\n", m.name));
            if m.unreliable {
                out.push_str("UNRELIABLE: ");
                out.push_str(&m.unreliable_reasons.join("; "));
                out.push('\n');
            }
            out.push_str(&m.posterior.format_table());
            out.push_str("\nresidual non-rejection (session-level / person-level):\n");
            for (label, rows) in [
                ("uniform-spacings", &m.gof.lewis_durbin),
                ("exp-interarrival", &m.gof.ks_exponential),
                ("independence", &m.gof.ljung_box),
            ] {
                out.push_str(&format!("  {label:<18}"));
                for r in rows.iter() {
                    out.push_str(&format!(
                        "  a={:.2}: {:.2}/{:.2}",
                        r.alpha, r.session_level, r.person_level
                    ));
                }
                out.push('\n');
            }
            out.push_str("\nprior/likelihood sensitivity:\n");
            out.push_str(&m.sensitivity.format_table());
        }
        out
    }
}

/// Table 3-style layout: rank, ELPD, effective parameters, difference to the
/// best model, stacking weight, with standard errors.
pub fn format_loo_table(loo: &LooComparison) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<6} {:<10} {:>10} {:>8} {:>8} {:>10} {:>8} {:>8}\n",
        "rank", "model", "elpd", "se", "p_eff", "elpd_diff", "dse", "weight"
    ));
    for (i, m) in loo.models.iter().enumerate() {
        out.push_str(&format!(
            "{:<6} {:<10} {:>10.2} {:>8.2} {:>8.2} {:>10.2} {:>8.2} {:>8.3}{}\n",
            i + 1,
            m.name,
            m.elpd,
            m.se,
            m.p_eff,
            loo.elpd_diff[i],
            loo.dse[i],
            loo.weights[i],
            if m.n_high_khat > 0 {
                format!("  [{} sessions with unstable importance weights]", m.n_high_khat)
            } else {
                String::new()
            }
        ));
    }
    out
}
