//! Adaptive random-walk Metropolis, for targets where gradients are unreliable.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::LogDensity;
use crate::scalar::Real;

const TARGET_ACCEPT: f64 = 0.234;

pub(crate) struct RandomWalk<'a, T, D> {
    target: &'a D,
    pub scale: Vec<f64>,
    pub log_step: f64,
    grad: Vec<T>,
}

impl<'a, T: Real, D: LogDensity<T>> RandomWalk<'a, T, D> {
    pub(crate) fn new(target: &'a D) -> Self {
        let d = target.dim();
        RandomWalk {
            target,
            scale: vec![1.0; d],
            log_step: (2.38 / (d.max(1) as f64).sqrt()).ln(),
            grad: vec![T::zero(); d],
        }
    }

    pub(crate) fn log_density(&mut self, q: &[T]) -> f64 {
        self.target.logp_and_grad(q, &mut self.grad).to_f64_lossy()
    }

    /// One Metropolis step; returns the acceptance probability.
    pub(crate) fn step(&mut self, q: &mut Vec<T>, lp: &mut f64, rng: &mut ChaCha8Rng) -> f64 {
        let step = self.log_step.exp();
        let proposal: Vec<T> = q
            .iter()
            .zip(&self.scale)
            .map(|(&x, &s)| {
                let n: f64 = rng.sample(StandardNormal);
                x + T::lit(step * s * n)
            })
            .collect();
        let lp_new = self.log_density(&proposal);
        let accept = if lp_new.is_finite() {
            (lp_new - *lp).exp().min(1.0)
        } else {
            0.0
        };
        if rng.random::<f64>() < accept {
            *q = proposal;
            *lp = lp_new;
        }
        accept
    }

    /// Robbins-Monro update of the global scale during warmup.
    pub(crate) fn adapt(&mut self, accept: f64, iteration: usize) {
        let rate = 1.0 / ((iteration + 1) as f64).powf(0.6);
        self.log_step += rate * (accept - TARGET_ACCEPT);
    }
}
