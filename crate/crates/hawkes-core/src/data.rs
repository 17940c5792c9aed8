//! Observation sessions and cohorts.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// One observation window: ordered onset times (minutes) plus a duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub person_id: String,
    pub session_id: String,
    /// Window length in minutes.
    pub duration: f64,
    /// Strictly increasing onset times, each in (0, duration).
    times: Vec<f64>,
}

impl Session {
    /// Build a session, validating the invariants. Times are sorted if needed.
    /// An event exactly at t = 0 is shifted to 1e-9 with a warning; the edge
    /// term is ambiguous at the window start.
    pub fn new(
        person_id: impl Into<String>,
        session_id: impl Into<String>,
        duration: f64,
        mut times: Vec<f64>,
    ) -> Result<Self> {
        let person_id = person_id.into();
        let session_id = session_id.into();
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(Error::InvalidSession(format!(
                "session {person_id}/{session_id}: duration {duration} must be positive and finite"
            )));
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for t in times.iter_mut() {
            if *t == 0.0 {
                log::warn!("session {person_id}/{session_id}: event at t=0 shifted to 1e-9 min");
                *t = 1e-9;
            }
            if !t.is_finite() || *t < 0.0 {
                return Err(Error::InvalidSession(format!(
                    "session {person_id}/{session_id}: invalid event time {t}"
                )));
            }
            if *t >= duration {
                return Err(Error::InvalidSession(format!(
                    "session {person_id}/{session_id}: event time {t} >= duration {duration}"
                )));
            }
        }
        for w in times.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidSession(format!(
                    "session {person_id}/{session_id}: duplicate timestamp {} (likelihood \
                     conditions on strictly earlier events; duplicates are ambiguous)",
                    w[0]
                )));
            }
        }
        Ok(Session { person_id, session_id, duration, times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_events(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// One person's sessions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Person {
    pub id: String,
    pub sessions: Vec<Session>,
}

impl Person {
    pub fn n_events(&self) -> usize {
        self.sessions.iter().map(Session::n_events).sum()
    }

    pub fn total_duration(&self) -> f64 {
        self.sessions.iter().map(|s| s.duration).sum()
    }
}

/// Persons and their sessions; the unit of ingestion and fitting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cohort {
    pub persons: Vec<Person>,
}

/// Stable address of a session within a cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionIndex {
    pub person: usize,
    pub session: usize,
}

impl Cohort {
    pub fn new(persons: Vec<Person>) -> Self {
        Cohort { persons }
    }

    pub fn n_persons(&self) -> usize {
        self.persons.len()
    }

    pub fn n_sessions(&self) -> usize {
        self.persons.iter().map(|p| p.sessions.len()).sum()
    }

    pub fn n_events(&self) -> usize {
        self.persons.iter().map(Person::n_events).sum()
    }

    pub fn session(&self, idx: SessionIndex) -> &Session {
        &self.persons[idx.person].sessions[idx.session]
    }

    /// All sessions in deterministic (person, session) order.
    pub fn session_indices(&self) -> Vec<SessionIndex> {
        let mut out = Vec::with_capacity(self.n_sessions());
        for (p, person) in self.persons.iter().enumerate() {
            for s in 0..person.sessions.len() {
                out.push(SessionIndex { person: p, session: s });
            }
        }
        out
    }

    /// Sessions with at least one event, in deterministic order. These are the
    /// sessions that carry a session-level edge-correction parameter.
    pub fn event_session_indices(&self) -> Vec<SessionIndex> {
        self.session_indices()
            .into_iter()
            .filter(|i| !self.session(*i).is_empty())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_durations_and_times() {
        assert!(Session::new("p", "s", 0.0, vec![]).is_err());
        assert!(Session::new("p", "s", 10.0, vec![11.0]).is_err());
        assert!(Session::new("p", "s", 10.0, vec![10.0]).is_err());
        assert!(Session::new("p", "s", 10.0, vec![3.0, 3.0]).is_err());
    }

    #[test]
    fn sorts_and_shifts_zero() {
        let s = Session::new("p", "s", 10.0, vec![5.0, 1.0, 0.0]).unwrap();
        assert_eq!(s.times(), &[1e-9, 1.0, 5.0]);
    }

    #[test]
    fn empty_session_allowed() {
        let s = Session::new("p", "s", 50.0, vec![]).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.duration, 50.0);
    }

    #[test]
    fn event_session_indexing_skips_empty() {
        let cohort = Cohort::new(vec![
            Person {
                id: "a".into(),
                sessions: vec![
                    Session::new("a", "1", 10.0, vec![1.0]).unwrap(),
                    Session::new("a", "2", 10.0, vec![]).unwrap(),
                ],
            },
            Person {
                id: "b".into(),
                sessions: vec![Session::new("b", "1", 10.0, vec![2.0, 3.0]).unwrap()],
            },
        ]);
        assert_eq!(cohort.n_sessions(), 3);
        let ev = cohort.event_session_indices();
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[0], SessionIndex { person: 0, session: 0 });
        assert_eq!(ev[1], SessionIndex { person: 1, session: 0 });
    }
}
