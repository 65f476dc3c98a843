//! Posterior draw storage and CSV round-tripping.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Sampler statistics for one chain's retained iterations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub chain: usize,
    pub step_size: f64,
    pub mean_accept_stat: f64,
    pub divergences: usize,
    pub max_depth_hits: usize,
    pub mean_tree_depth: f64,
    pub leapfrog_steps: u64,
    pub inv_metric: Vec<f64>,
}

/// One chain's retained draws.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain<T> {
    pub values: Vec<Vec<T>>,
    pub log_posterior: Vec<T>,
    pub stats: ChainStats,
}

/// Draws from several chains with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws<T> {
    names: Vec<String>,
    chains: Vec<Chain<T>>,
}

impl<T: Real> Draws<T> {
    pub fn new(names: Vec<String>, chains: Vec<Chain<T>>) -> Result<Self> {
        for (c, ch) in chains.iter().enumerate() {
            if ch.values.len() != ch.log_posterior.len() {
                return Err(Error::invalid(format!(
                    "chain {c} has mismatched draw and log-posterior counts"
                )));
            }
            if ch.values.iter().any(|row| row.len() != names.len()) {
                return Err(Error::invalid(format!("chain {c} has rows of the wrong width")));
            }
        }
        Ok(Draws { names, chains })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn chains(&self) -> &[Chain<T>] {
        &self.chains
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    /// Total number of retained draws.
    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.values.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// One column split by chain.
    pub fn column(&self, idx: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.values.iter().map(|row| row[idx].to_f64_lossy()).collect())
            .collect()
    }

    /// All draws in chain-major order.
    pub fn iter(&self) -> impl Iterator<Item = &[T]> {
        self.chains.iter().flat_map(|c| c.values.iter().map(Vec::as_slice))
    }

    pub fn total_divergences(&self) -> usize {
        self.chains.iter().map(|c| c.stats.divergences).sum()
    }

    /// Transforms every draw, keeping chain structure and statistics.
    pub fn map<U: Real>(&self, names: Vec<String>, mut f: impl FnMut(&[T]) -> Result<Vec<U>>) -> Result<Draws<U>> {
        let chains = self
            .chains
            .iter()
            .map(|c| {
                Ok(Chain {
                    values: c.values.iter().map(|row| f(row)).collect::<Result<Vec<_>>>()?,
                    log_posterior: c.log_posterior.iter().map(|&v| U::lit(v.to_f64_lossy())).collect(),
                    stats: c.stats.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Draws::new(names, chains)
    }

    /// Writes `chain,iteration,log_posterior,<names...>`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(format!("create {}", path.display()), e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec!["chain".to_owned(), "iteration".to_owned(), "log_posterior".to_owned()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for (c, chain) in self.chains.iter().enumerate() {
            for (i, (vals, lp)) in chain.values.iter().zip(&chain.log_posterior).enumerate() {
                row.clear();
                row.push(c.to_string());
                row.push(i.to_string());
                row.push(lp.to_f64_lossy().to_string());
                row.extend(vals.iter().map(|v| v.to_f64_lossy().to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()
            .map_err(|e| Error::io(format!("write {}", path.display()), e))?;
        Ok(())
    }

    /// Writes chain statistics as JSON.
    pub fn write_stats(&self, path: &Path) -> Result<()> {
        let stats: Vec<&ChainStats> = self.chains.iter().map(|c| &c.stats).collect();
        let text = serde_json::to_string_pretty(&stats)?;
        fs::write(path, text).map_err(|e| Error::io(format!("write {}", path.display()), e))
    }
}

impl Draws<f64> {
    /// Reads a file produced by [`Draws::write_csv`]. Chain statistics are
    /// not stored in the CSV and come back empty.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if header.len() < 3 || header[0] != "chain" || header[1] != "iteration" || header[2] != "log_posterior" {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: "expected header starting with 'chain,iteration,log_posterior'".into(),
            });
        }
        let names = header[3..].to_vec();
        let mut chains: Vec<Chain<f64>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            };
            let chain: usize = rec[0]
                .parse()
                .map_err(|_| bad(format!("bad chain index '{}'", &rec[0])))?;
            if chain > chains.len() {
                return Err(bad("chains must appear in order".into()));
            }
            if chain == chains.len() {
                chains.push(Chain {
                    values: Vec::new(),
                    log_posterior: Vec::new(),
                    stats: ChainStats {
                        chain,
                        ..ChainStats::default()
                    },
                });
            }
            let parse = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("not a number: '{s}'")));
            let lp = parse(&rec[2])?;
            let vals = rec.iter().skip(3).map(parse).collect::<Result<Vec<f64>>>()?;
            if vals.len() != names.len() {
                return Err(bad(format!("expected {} values, found {}", names.len(), vals.len())));
            }
            chains[chain].values.push(vals);
            chains[chain].log_posterior.push(lp);
        }
        Draws::new(names, chains)
    }
}
