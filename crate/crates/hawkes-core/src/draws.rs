//! Posterior draw storage and on-disk persistence.
//!
//! Draws are kept chain-major: index `(chain, draw, col)` maps to
//! `chain * draws_per_chain * n_cols + draw * n_cols + col`. The disk format
//! is one file per chain: an 8-byte little-endian header length, a JSON
//! header describing the column blocks, then the blocks as little-endian f64
//! in header order (`values`, `log_prior`, `prior_terms`, `log_lik`,
//! `session_loglik`, `energy`, then `divergent` and `tree_depth` as bytes).

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Chains x draws x named parameters on the constrained scale, with per-draw
/// likelihood bookkeeping for LOO and power-scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub param_names: Vec<String>,
    pub prior_term_names: Vec<String>,
    pub chains: usize,
    pub draws_per_chain: usize,
    pub n_sessions: usize,
    /// chain-major constrained values, len = chains*draws*params
    pub values: Vec<f64>,
    /// power-scalable log prior per draw
    pub log_prior: Vec<f64>,
    /// per-draw scalable prior terms, len = chains*draws*terms
    pub prior_terms: Vec<f64>,
    /// total log likelihood per draw
    pub log_lik: Vec<f64>,
    /// per-session log likelihood, len = chains*draws*sessions
    pub session_loglik: Vec<f64>,
    pub divergent: Vec<bool>,
    pub tree_depth: Vec<u8>,
    pub energy: Vec<f64>,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.chains * self.draws_per_chain
    }

    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|n| n == name)
    }

    /// All draws of one parameter, flattened chain-major.
    pub fn flat_param(&self, name: &str) -> Vec<f64> {
        let col = self
            .param_index(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.flat_col(col)
    }

    pub fn flat_col(&self, col: usize) -> Vec<f64> {
        let p = self.n_params();
        (0..self.n_draws()).map(|d| self.values[d * p + col]).collect()
    }

    /// One parameter as per-chain series.
    pub fn param_chains(&self, name: &str) -> Vec<Vec<f64>> {
        let col = self
            .param_index(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.col_chains(col)
    }

    pub fn col_chains(&self, col: usize) -> Vec<Vec<f64>> {
        let p = self.n_params();
        (0..self.chains)
            .map(|c| {
                (0..self.draws_per_chain)
                    .map(|d| self.values[(c * self.draws_per_chain + d) * p + col])
                    .collect()
            })
            .collect()
    }

    /// Per-session log-likelihood matrix as draws x sessions (row-major).
    pub fn loglik_matrix(&self) -> &[f64] {
        &self.session_loglik
    }

    pub fn session_loglik_of_draw(&self, draw: usize) -> &[f64] {
        &self.session_loglik[draw * self.n_sessions..(draw + 1) * self.n_sessions]
    }

    pub fn prior_terms_of_draw(&self, draw: usize) -> &[f64] {
        let t = self.prior_term_names.len();
        &self.prior_terms[draw * t..(draw + 1) * t]
    }

    pub fn n_divergent(&self) -> usize {
        self.divergent.iter().filter(|d| **d).count()
    }

    /// Sum of per-session log-likelihoods matches the stored total.
    pub fn check_consistency(&self) -> Result<()> {
        for d in 0..self.n_draws() {
            let s: f64 = self.session_loglik_of_draw(d).iter().sum();
            if (s - self.log_lik[d]).abs() > 1e-8 * self.log_lik[d].abs().max(1.0) {
                return Err(Error::Numerical(format!(
                    "draw {d}: per-session log-lik sum {s} != total {}",
                    self.log_lik[d]
                )));
            }
        }
        Ok(())
    }

    // ---- persistence --------------------------------------------------------

    pub fn save(&self, dir: &Path, model_name: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for c in 0..self.chains {
            let path = dir.join(format!("{model_name}_chain{c}.draws"));
            self.save_chain(&path, c)?;
        }
        Ok(())
    }

    fn save_chain(&self, path: &Path, chain: usize) -> Result<()> {
        let header = ChainHeader {
            version: 1,
            param_names: self.param_names.clone(),
            prior_term_names: self.prior_term_names.clone(),
            draws: self.draws_per_chain,
            n_sessions: self.n_sessions,
            chain,
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        f.write_all(&header_bytes)?;
        let d0 = chain * self.draws_per_chain;
        let d1 = d0 + self.draws_per_chain;
        let p = self.n_params();
        let t = self.prior_term_names.len();
        write_f64s(&mut f, &self.values[d0 * p..d1 * p])?;
        write_f64s(&mut f, &self.log_prior[d0..d1])?;
        write_f64s(&mut f, &self.prior_terms[d0 * t..d1 * t])?;
        write_f64s(&mut f, &self.log_lik[d0..d1])?;
        write_f64s(&mut f, &self.session_loglik[d0 * self.n_sessions..d1 * self.n_sessions])?;
        write_f64s(&mut f, &self.energy[d0..d1])?;
        let flags: Vec<u8> = self.divergent[d0..d1].iter().map(|b| *b as u8).collect();
        f.write_all(&flags)?;
        f.write_all(&self.tree_depth[d0..d1])?;
        Ok(())
    }

    pub fn load(dir: &Path, model_name: &str) -> Result<Self> {
        let mut chains = Vec::new();
        loop {
            let path = dir.join(format!("{model_name}_chain{}.draws", chains.len()));
            if !path.exists() {
                break;
            }
            chains.push(load_chain(&path)?);
        }
        if chains.is_empty() {
            return Err(Error::Config(format!(
                "no persisted draws for model {model_name} in {}",
                dir.display()
            )));
        }
        let first = &chains[0];
        let mut out = PosteriorDraws {
            param_names: first.header.param_names.clone(),
            prior_term_names: first.header.prior_term_names.clone(),
            chains: chains.len(),
            draws_per_chain: first.header.draws,
            n_sessions: first.header.n_sessions,
            values: Vec::new(),
            log_prior: Vec::new(),
            prior_terms: Vec::new(),
            log_lik: Vec::new(),
            session_loglik: Vec::new(),
            divergent: Vec::new(),
            tree_depth: Vec::new(),
            energy: Vec::new(),
        };
        for c in chains {
            out.values.extend(c.values);
            out.log_prior.extend(c.log_prior);
            out.prior_terms.extend(c.prior_terms);
            out.log_lik.extend(c.log_lik);
            out.session_loglik.extend(c.session_loglik);
            out.energy.extend(c.energy);
            out.divergent.extend(c.divergent);
            out.tree_depth.extend(c.tree_depth);
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct ChainHeader {
    version: u32,
    param_names: Vec<String>,
    prior_term_names: Vec<String>,
    draws: usize,
    n_sessions: usize,
    chain: usize,
}

struct LoadedChain {
    header: ChainHeader,
    values: Vec<f64>,
    log_prior: Vec<f64>,
    prior_terms: Vec<f64>,
    log_lik: Vec<f64>,
    session_loglik: Vec<f64>,
    energy: Vec<f64>,
    divergent: Vec<bool>,
    tree_depth: Vec<u8>,
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn load_chain(path: &Path) -> Result<LoadedChain> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)?;
    let len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; len];
    f.read_exact(&mut header_bytes)?;
    let header: ChainHeader = serde_json::from_slice(&header_bytes)?;
    let d = header.draws;
    let p = header.param_names.len();
    let t = header.prior_term_names.len();
    let s = header.n_sessions;
    let values = read_f64s(&mut f, d * p)?;
    let log_prior = read_f64s(&mut f, d)?;
    let prior_terms = read_f64s(&mut f, d * t)?;
    let log_lik = read_f64s(&mut f, d)?;
    let session_loglik = read_f64s(&mut f, d * s)?;
    let energy = read_f64s(&mut f, d)?;
    let mut flags = vec![0u8; d];
    f.read_exact(&mut flags)?;
    let mut tree_depth = vec![0u8; d];
    f.read_exact(&mut tree_depth)?;
    Ok(LoadedChain {
        header,
        values,
        log_prior,
        prior_terms,
        log_lik,
        session_loglik,
        energy,
        divergent: flags.into_iter().map(|b| b != 0).collect(),
        tree_depth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> PosteriorDraws {
        PosteriorDraws {
            param_names: vec!["a".into(), "b".into()],
            prior_term_names: vec!["a".into()],
            chains: 2,
            draws_per_chain: 3,
            n_sessions: 2,
            values: (0..12).map(|i| i as f64).collect(),
            log_prior: (0..6).map(|i| -(i as f64)).collect(),
            prior_terms: (0..6).map(|i| -(i as f64)).collect(),
            log_lik: vec![-3.0; 6],
            session_loglik: vec![-1.5; 12],
            divergent: vec![false, true, false, false, false, false],
            tree_depth: vec![3; 6],
            energy: vec![10.0; 6],
        }
    }

    #[test]
    fn indexing_is_chain_major() {
        let d = tiny();
        assert_eq!(d.flat_param("a"), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(d.param_chains("b"), vec![vec![1.0, 3.0, 5.0], vec![7.0, 9.0, 11.0]]);
        assert_eq!(d.n_divergent(), 1);
    }

    #[test]
    fn consistency_check() {
        let mut d = tiny();
        assert!(d.check_consistency().is_ok());
        d.session_loglik[0] = -2.5;
        assert!(d.check_consistency().is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let d = tiny();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path(), "m").unwrap();
        let back = PosteriorDraws::load(dir.path(), "m").unwrap();
        assert_eq!(d, back);
    }
}
