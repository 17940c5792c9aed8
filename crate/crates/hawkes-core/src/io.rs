//! Run configuration and CSV ingestion/serialization.
//!
//! Event data travels as two flat CSV files: a sessions file
//! (`person_id,session_id,duration_min`) and an events file
//! (`person_id,session_id,event_time_min`). Configuration and reports are
//! JSON. A [`RunConfig`] is validated up front and hashed so that a report can
//! state exactly which configuration produced it.

use crate::data::{Cohort, Person, Session};
use crate::model::ModelKind;
use crate::nuts::SamplerConfig;
use crate::simulate::CohortTemplate;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Sampler settings as they appear in a config file; the run seed is carried
/// separately at the top level so all stages share it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSettings {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub target_accept: f64,
    pub max_depth: usize,
    pub init_range: f64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        let d = SamplerConfig::default();
        SamplerSettings {
            chains: d.chains,
            warmup: d.warmup,
            draws: d.draws,
            target_accept: d.target_accept,
            max_depth: d.max_depth,
            init_range: d.init_range,
        }
    }
}

/// Residual goodness-of-fit settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GofSettings {
    /// Significance levels for the non-rejection tables.
    pub alpha_grid: Vec<f64>,
    /// Sessions with fewer events than this are skipped, not tested.
    pub min_events: usize,
    /// Ljung-Box lag count.
    pub lb_lag: usize,
}

impl Default for GofSettings {
    fn default() -> Self {
        GofSettings {
            alpha_grid: vec![0.05, 0.10, 0.15],
            min_events: crate::gof::DEFAULT_MIN_EVENTS,
            lb_lag: 1,
        }
    }
}

/// Power-scaling sensitivity settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivitySettings {
    /// Power-scaling exponents; the reported distance is the maximum over the
    /// grid, normalized per unit log2(delta).
    pub delta_grid: Vec<f64>,
    /// Distance threshold separating "sensitive" from "robust".
    pub tau: f64,
}

impl Default for SensitivitySettings {
    fn default() -> Self {
        SensitivitySettings {
            delta_grid: crate::sensitivity::DEFAULT_DELTA_GRID.to_vec(),
            tau: crate::sensitivity::DEFAULT_TAU,
        }
    }
}

/// Where the cohort comes from: CSV files on disk, or a synthetic cohort
/// generated from a template with the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
pub enum InputSource {
    Csv { sessions: PathBuf, events: PathBuf },
    Simulate { template: CohortTemplate },
}

/// Full description of one analysis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Models to fit and compare, in report order.
    pub models: Vec<ModelKind>,
    #[serde(default)]
    pub sampler: SamplerSettings,
    #[serde(default)]
    pub gof: GofSettings,
    #[serde(default)]
    pub sensitivity: SensitivitySettings,
    /// Power-scaling exponent applied to the prior during fitting. 1 fits the
    /// posterior as specified; other values temper the prior.
    #[serde(default = "one")]
    pub delta_prior: f64,
    /// Power-scaling exponent applied to the likelihood during fitting.
    /// 0 yields a prior-only fit.
    #[serde(default = "one")]
    pub delta_lik: f64,
    /// Root seed; every stage derives its own named stream from it.
    pub seed: u64,
    pub input: InputSource,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config("at least one model must be listed".into()));
        }
        for w in {
            let mut m = self.models.clone();
            m.sort_by_key(ModelKind::name);
            m
        }
        .windows(2)
        {
            if w[0] == w[1] {
                return Err(Error::Config(format!("model {} listed twice", w[0].name())));
            }
        }
        self.sampler_config().validate()?;
        if self.gof.alpha_grid.is_empty()
            || self.gof.alpha_grid.iter().any(|a| !(*a > 0.0 && *a < 1.0))
        {
            return Err(Error::Config("GOF significance levels must lie in (0,1)".into()));
        }
        if self.sensitivity.delta_grid.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::Config("power-scaling deltas must be positive and finite".into()));
        }
        if !(self.sensitivity.tau > 0.0) {
            return Err(Error::Config("sensitivity threshold tau must be positive".into()));
        }
        if !(self.delta_prior >= 0.0) || !(self.delta_lik >= 0.0) {
            return Err(Error::Config("fit power-scaling exponents must be >= 0".into()));
        }
        if let InputSource::Simulate { template } = &self.input {
            template.validate()?;
        }
        Ok(())
    }

    /// Sampler configuration with the run seed attached.
    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            chains: self.sampler.chains,
            warmup: self.sampler.warmup,
            draws: self.sampler.draws,
            target_accept: self.sampler.target_accept,
            max_depth: self.sampler.max_depth,
            seed: self.seed,
            init_range: self.sampler.init_range,
        }
    }

    /// SHA-256 of the canonical JSON serialization, hex-encoded. Recorded in
    /// the report provenance block so a report can be traced to its config.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn one() -> f64 {
    1.0
}

// ---- CSV ingestion ----------------------------------------------------------

#[derive(Debug, Deserialize, Serialize)]
struct SessionRow {
    person_id: String,
    session_id: String,
    duration_min: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct EventRow {
    person_id: String,
    session_id: String,
    event_time_min: f64,
}

/// Read a cohort from a sessions file and an events file.
///
/// Persons and sessions keep their first-appearance order from the sessions
/// file. Sessions without events are retained: an empty window still
/// contributes survival mass to the likelihood. Errors carry the 1-based file
/// row (header = row 1) of the offending record.
pub fn ingest(sessions_path: &Path, events_path: &Path) -> Result<Cohort> {
    let mut rdr = csv::Reader::from_path(sessions_path)?;
    // (person, session) -> (order of appearance, duration, times)
    let mut sessions: BTreeMap<(String, String), (usize, f64, Vec<f64>)> = BTreeMap::new();
    let mut order: Vec<(String, String)> = Vec::new();
    for (i, rec) in rdr.deserialize::<SessionRow>().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Ingest { row, msg: format!("sessions file: {e}") })?;
        if !(rec.duration_min > 0.0) || !rec.duration_min.is_finite() {
            return Err(Error::Ingest {
                row,
                msg: format!(
                    "session {}/{}: duration_min {} must be positive and finite",
                    rec.person_id, rec.session_id, rec.duration_min
                ),
            });
        }
        let key = (rec.person_id, rec.session_id);
        if sessions.contains_key(&key) {
            return Err(Error::Ingest {
                row,
                msg: format!("session {}/{} declared twice", key.0, key.1),
            });
        }
        sessions.insert(key.clone(), (order.len(), rec.duration_min, Vec::new()));
        order.push(key);
    }
    if order.is_empty() {
        return Err(Error::Config(format!("{}: no sessions", sessions_path.display())));
    }

    let mut rdr = csv::Reader::from_path(events_path)?;
    for (i, rec) in rdr.deserialize::<EventRow>().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Ingest { row, msg: format!("events file: {e}") })?;
        let key = (rec.person_id, rec.session_id);
        let Some((_, duration, times)) = sessions.get_mut(&key) else {
            return Err(Error::Ingest {
                row,
                msg: format!("event for unknown session {}/{}", key.0, key.1),
            });
        };
        if !rec.event_time_min.is_finite() || rec.event_time_min < 0.0 {
            return Err(Error::Ingest {
                row,
                msg: format!(
                    "session {}/{}: invalid event time {}",
                    key.0, key.1, rec.event_time_min
                ),
            });
        }
        if rec.event_time_min >= *duration {
            return Err(Error::Ingest {
                row,
                msg: format!(
                    "session {}/{}: event time {} >= duration {}",
                    key.0, key.1, rec.event_time_min, duration
                ),
            });
        }
        times.push(rec.event_time_min);
    }

    // rebuild in first-appearance order; Session::new sorts times and rejects
    // duplicate timestamps with the likelihood-ambiguity explanation
    let mut persons: Vec<Person> = Vec::new();
    for key in &order {
        let (_, duration, times) = sessions.remove(key).unwrap();
        let session = Session::new(key.0.clone(), key.1.clone(), duration, times)?;
        match persons.iter_mut().find(|p| p.id == key.0) {
            Some(p) => p.sessions.push(session),
            None => persons.push(Person { id: key.0.clone(), sessions: vec![session] }),
        }
    }
    Ok(Cohort::new(persons))
}

/// Write a cohort back to the two-file CSV schema. Inverse of [`ingest`] up to
/// row order: rows come out in cohort order, times sorted within a session.
pub fn write_cohort_csv(cohort: &Cohort, sessions_path: &Path, events_path: &Path) -> Result<()> {
    let mut sw = csv::Writer::from_path(sessions_path)?;
    let mut ew = csv::Writer::from_path(events_path)?;
    for person in &cohort.persons {
        for session in &person.sessions {
            sw.serialize(SessionRow {
                person_id: person.id.clone(),
                session_id: session.session_id.clone(),
                duration_min: session.duration,
            })?;
            for &t in session.times() {
                ew.serialize(EventRow {
                    person_id: person.id.clone(),
                    session_id: session.session_id.clone(),
                    event_time_min: t,
                })?;
            }
        }
    }
    sw.flush()?;
    ew.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{Hyperparams, SimSeed};
    use std::io::Write as _;

    fn write_file(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        p
    }

    const SESSIONS: &str = "person_id,session_id,duration_min\n\
                            p1,s1,50.0\np1,s2,30.0\np2,s1,40.0\n";

    fn demo_config(dir: &Path) -> RunConfig {
        RunConfig {
            models: vec![ModelKind::Partial, ModelKind::Pooled],
            sampler: SamplerSettings::default(),
            gof: GofSettings::default(),
            sensitivity: SensitivitySettings::default(),
            delta_prior: 1.0,
            delta_lik: 1.0,
            seed: 7,
            input: InputSource::Csv {
                sessions: dir.join("sessions.csv"),
                events: dir.join("events.csv"),
            },
            out_dir: dir.join("out"),
        }
    }

    #[test]
    fn ingest_matches_events_and_keeps_empty_sessions() {
        let dir = tempfile::tempdir().unwrap();
        let s = write_file(dir.path(), "sessions.csv", SESSIONS);
        let e = write_file(
            dir.path(),
            "events.csv",
            "person_id,session_id,event_time_min\n\
             p1,s1,12.5\np1,s1,3.0\np2,s1,1.0\n",
        );
        let cohort = ingest(&s, &e).unwrap();
        assert_eq!(cohort.n_persons(), 2);
        assert_eq!(cohort.n_sessions(), 3);
        // unsorted rows come back sorted
        assert_eq!(cohort.persons[0].sessions[0].times(), &[3.0, 12.5]);
        // zero-event session retained with its duration
        let empty = &cohort.persons[0].sessions[1];
        assert!(empty.is_empty());
        assert_eq!(empty.duration, 30.0);
    }

    #[test]
    fn ingest_errors_carry_row_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let s = write_file(dir.path(), "sessions.csv", SESSIONS);

        // event past the end of its 50-minute window, on data row 3 (= file row 4)
        let e = write_file(
            dir.path(),
            "events.csv",
            "person_id,session_id,event_time_min\np1,s1,1.0\np1,s1,2.0\np1,s1,51.0\n",
        );
        match ingest(&s, &e) {
            Err(Error::Ingest { row, msg }) => {
                assert_eq!(row, 4);
                assert!(msg.contains(">= duration"), "{msg}");
            }
            other => panic!("expected row-numbered error, got {other:?}"),
        }

        // orphan event: session never declared
        let e = write_file(
            dir.path(),
            "events.csv",
            "person_id,session_id,event_time_min\npX,s9,1.0\n",
        );
        match ingest(&s, &e) {
            Err(Error::Ingest { row, msg }) => {
                assert_eq!(row, 2);
                assert!(msg.contains("unknown session"), "{msg}");
            }
            other => panic!("expected orphan-event error, got {other:?}"),
        }

        // duplicate timestamps are rejected with the ambiguity explanation
        let e = write_file(
            dir.path(),
            "events.csv",
            "person_id,session_id,event_time_min\np1,s1,5.0\np1,s1,5.0\n",
        );
        match ingest(&s, &e) {
            Err(Error::InvalidSession(msg)) => assert!(msg.contains("ambiguous"), "{msg}"),
            other => panic!("expected duplicate-timestamp error, got {other:?}"),
        }
    }

    #[test]
    fn cohort_csv_round_trip_is_lossless() {
        let hypers = Hyperparams {
            mu_mu: 0.05,
            mu_alpha: 0.5,
            mu_beta: 0.5,
            sigma_mu: 0.3,
            sigma_alpha: 0.3,
            sigma_beta: 0.3,
        };
        let template = CohortTemplate { n_persons: 8, ..CohortTemplate::default_study_shape(hypers) };
        let sim = crate::simulate::simulate_cohort(&template, SimSeed::new(11, 0)).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("sessions.csv");
        let e = dir.path().join("events.csv");
        write_cohort_csv(&sim.cohort, &s, &e).unwrap();
        let back = ingest(&s, &e).unwrap();

        assert_eq!(back.n_persons(), sim.cohort.n_persons());
        assert_eq!(back.n_sessions(), sim.cohort.n_sessions());
        for (pa, pb) in sim.cohort.persons.iter().zip(&back.persons) {
            assert_eq!(pa.id, pb.id);
            for (sa, sb) in pa.sessions.iter().zip(&pb.sessions) {
                assert_eq!(sa, sb);
            }
        }
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = demo_config(dir.path());
        let mut json = serde_json::to_value(&cfg).unwrap();

        // unknown top-level key
        json.as_object_mut().unwrap().insert("typo_key".into(), 1.into());
        let p = write_file(dir.path(), "bad.json", &serde_json::to_string(&json).unwrap());
        assert!(matches!(RunConfig::load(&p), Err(Error::Config(_))));

        // duplicate model entry
        let mut dup = cfg.clone();
        dup.models.push(ModelKind::Pooled);
        assert!(dup.validate().is_err());

        // significance level outside (0,1)
        let mut bad_alpha = cfg.clone();
        bad_alpha.gof.alpha_grid = vec![0.05, 1.5];
        assert!(bad_alpha.validate().is_err());

        let mut bad_delta = cfg;
        bad_delta.sensitivity.delta_grid = vec![0.5, -1.0];
        assert!(bad_delta.validate().is_err());
    }

    #[test]
    fn config_round_trip_defaults_and_hash() {
        let dir = tempfile::tempdir().unwrap();
        // minimal config: optional sections fall back to defaults
        let text = format!(
            r#"{{"models":["partial"],"seed":3,
                "input":{{"csv":{{"sessions":"{0}/s.csv","events":"{0}/e.csv"}}}},
                "out_dir":"{0}/out"}}"#,
            dir.path().display()
        );
        let p = write_file(dir.path(), "cfg.json", &text);
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.gof.alpha_grid, vec![0.05, 0.10, 0.15]);
        assert_eq!(cfg.sensitivity.delta_grid, crate::sensitivity::DEFAULT_DELTA_GRID.to_vec());
        assert_eq!(cfg.sampler.warmup, 1000);

        // hash is stable under round trip and sensitive to any field change
        let h1 = cfg.hash();
        let round: RunConfig =
            serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(h1, round.hash());
        let mut changed = cfg;
        changed.seed = 4;
        assert_ne!(h1, changed.hash());
    }
}
