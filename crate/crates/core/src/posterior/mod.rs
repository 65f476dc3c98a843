//! Posterior sampling and convergence diagnostics.

mod adapt;
mod diagnostics;
mod draws;
mod nuts;
mod rwm;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub use diagnostics::{diagnose, ess_bulk, rhat, DiagnosticsReport, ParamDiagnostics};
pub use draws::{Chain, ChainStats, Draws};

use adapt::{MetricAdapter, StepSizeAdapter};
use nuts::{Nuts, Point};
use rwm::RandomWalk;

/// Differentiable log density on an unconstrained space.
pub trait LogDensity<T>: Sync {
    fn dim(&self) -> usize;
    /// Writes the gradient into `grad` and returns the log density;
    /// `-inf` marks points outside the support.
    fn logp_and_grad(&self, theta: &[T], grad: &mut [T]) -> T;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Nuts,
    /// Adaptive random-walk Metropolis.
    RandomWalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
    pub kind: SamplerKind,
    /// Initial values are drawn uniformly from `(-init_radius, init_radius)`.
    pub init_radius: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            warmup: 1000,
            samples: 1000,
            target_accept: 0.8,
            max_tree_depth: 10,
            seed: 1,
            kind: SamplerKind::Nuts,
            init_radius: 2.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.samples == 0 {
            return Err(Error::invalid("chains and samples must be positive"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::invalid("target_accept must lie in (0,1)"));
        }
        if self.max_tree_depth == 0 {
            return Err(Error::invalid("max_tree_depth must be positive"));
        }
        if !(self.init_radius > 0.0 && self.init_radius.is_finite()) {
            return Err(Error::invalid("init_radius must be positive"));
        }
        Ok(())
    }
}

const INIT_TRIES: usize = 100;

/// Families of random streams under one seed. Each consumer reads its own
/// streams, so reusing a seed across commands never couples them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Chain(usize),
    Draw(usize),
    Simulation,
    Bootstrap,
}

impl Stream {
    fn id(self) -> u64 {
        const DRAW: u64 = 1 << 62;
        match self {
            Stream::Chain(k) => k as u64,
            Stream::Draw(d) => DRAW | d as u64,
            Stream::Simulation => u64::MAX,
            Stream::Bootstrap => u64::MAX - 1,
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Independent stream for `chain` under `seed`.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    stream_rng(seed, Stream::Chain(chain))
}

fn initial_point<T: Real, D: LogDensity<T>>(
    target: &D,
    radius: f64,
    given: Option<&[T]>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<T>> {
    let dim = target.dim();
    let mut grad = vec![T::zero(); dim];
    if let Some(q) = given {
        if q.len() != dim {
            return Err(Error::invalid("initial value has the wrong dimension"));
        }
        let lp = target.logp_and_grad(q, &mut grad);
        if lp.is_finite() {
            return Ok(q.to_vec());
        }
        return Err(Error::Sampler("supplied initial value has zero density".into()));
    }
    for _ in 0..INIT_TRIES {
        let q: Vec<T> = (0..dim).map(|_| T::lit(rng.random_range(-radius..radius))).collect();
        let lp = target.logp_and_grad(&q, &mut grad);
        if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            return Ok(q);
        }
    }
    Err(Error::Sampler(format!(
        "no initial value with finite log density and gradient after {INIT_TRIES} attempts"
    )))
}

fn to_f64<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

fn run_nuts<T: Real, D: LogDensity<T>>(
    target: &D,
    config: &SamplerConfig,
    chain: usize,
    init: Option<&[T]>,
) -> Result<Chain<T>> {
    let mut rng = chain_rng(config.seed, chain);
    let q0 = initial_point(target, config.init_radius, init, &mut rng)?;
    let mut z = Point::new(q0, target);
    let mut nuts = Nuts::new(target, config.max_tree_depth);
    nuts.init_step_size(&z, &mut rng)?;
    let mut step = StepSizeAdapter::new(config.target_accept);
    step.set_mu((10.0 * nuts.step_size).ln());
    let mut metric = MetricAdapter::new(target.dim(), config.warmup);

    for it in 0..config.warmup {
        let (next, tr) = nuts.transition(&z, &mut rng);
        z = next;
        nuts.step_size = step.learn(tr.accept_stat);
        if let Some(var) = metric.learn(&to_f64(&z.q)) {
            nuts.inv_metric = var.into_iter().map(T::lit).collect();
            nuts.init_step_size(&z, &mut rng)?;
            step.set_mu((10.0 * nuts.step_size).ln());
            step.restart();
        }
        if (it + 1) % 200 == 0 {
            log::debug!(
                "chain {chain}: warmup {}/{} step size {:.4}",
                it + 1,
                config.warmup,
                nuts.step_size
            );
        }
    }
    if config.warmup > 0 {
        nuts.step_size = step.complete();
    }

    let mut values = Vec::with_capacity(config.samples);
    let mut log_posterior = Vec::with_capacity(config.samples);
    let mut stats = ChainStats {
        chain,
        step_size: nuts.step_size,
        ..ChainStats::default()
    };
    let (mut accept_sum, mut depth_sum) = (0.0, 0.0);
    for _ in 0..config.samples {
        let (next, tr) = nuts.transition(&z, &mut rng);
        z = next;
        accept_sum += tr.accept_stat;
        depth_sum += tr.tree_depth as f64;
        stats.divergences += usize::from(tr.divergent);
        stats.max_depth_hits += usize::from(tr.tree_depth >= config.max_tree_depth);
        stats.leapfrog_steps += tr.n_leapfrog as u64;
        values.push(z.q.clone());
        log_posterior.push(T::lit(z.lp));
    }
    let n = config.samples as f64;
    stats.mean_accept_stat = accept_sum / n;
    stats.mean_tree_depth = depth_sum / n;
    stats.inv_metric = to_f64(&nuts.inv_metric);
    if stats.divergences > 0 {
        log::warn!(
            "chain {chain}: {} divergent transitions after warmup",
            stats.divergences
        );
    }
    Ok(Chain {
        values,
        log_posterior,
        stats,
    })
}

fn run_rwm<T: Real, D: LogDensity<T>>(
    target: &D,
    config: &SamplerConfig,
    chain: usize,
    init: Option<&[T]>,
) -> Result<Chain<T>> {
    let mut rng = chain_rng(config.seed, chain);
    let mut q = initial_point(target, config.init_radius, init, &mut rng)?;
    let mut rw = RandomWalk::new(target);
    let mut lp = rw.log_density(&q);
    let mut metric = MetricAdapter::new(target.dim(), config.warmup);
    let base_step = rw.log_step;
    let mut since_reset = 0;
    for _ in 0..config.warmup {
        let acc = rw.step(&mut q, &mut lp, &mut rng);
        rw.adapt(acc, since_reset);
        since_reset += 1;
        if let Some(var) = metric.learn(&to_f64(&q)) {
            rw.scale = var.into_iter().map(f64::sqrt).collect();
            rw.log_step = base_step;
            since_reset = 0;
        }
    }
    let mut values = Vec::with_capacity(config.samples);
    let mut log_posterior = Vec::with_capacity(config.samples);
    let mut accept_sum = 0.0;
    for _ in 0..config.samples {
        accept_sum += rw.step(&mut q, &mut lp, &mut rng);
        values.push(q.clone());
        log_posterior.push(T::lit(lp));
    }
    let stats = ChainStats {
        chain,
        step_size: rw.log_step.exp(),
        mean_accept_stat: accept_sum / config.samples as f64,
        inv_metric: rw.scale.iter().map(|s| s * s).collect(),
        ..ChainStats::default()
    };
    Ok(Chain {
        values,
        log_posterior,
        stats,
    })
}

/// Runs `config.chains` chains in parallel. Chain `c` uses stream `c` of
/// the seeded generator, so results do not depend on the thread count.
pub fn sample<T: Real, D: LogDensity<T>>(
    target: &D,
    config: &SamplerConfig,
    names: Vec<String>,
    inits: Option<&[Vec<T>]>,
) -> Result<Draws<T>> {
    config.validate()?;
    if names.len() != target.dim() {
        return Err(Error::invalid("parameter names do not match the target dimension"));
    }
    if let Some(i) = inits {
        if i.len() != config.chains {
            return Err(Error::invalid("one initial value per chain is required"));
        }
    }
    let chains = (0..config.chains)
        .into_par_iter()
        .map(|c| {
            let init = inits.map(|i| i[c].as_slice());
            match config.kind {
                SamplerKind::Nuts => run_nuts(target, config, c, init),
                SamplerKind::RandomWalk => run_rwm(target, config, c, init),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Draws::new(names, chains)
}
