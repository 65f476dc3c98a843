//! Multinomial No-U-Turn sampler with a diagonal metric.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::LogDensity;
use crate::error::{Error, Result};
use crate::scalar::Real;

const MAX_DELTA_H: f64 = 1000.0;

/// Phase-space point.
#[derive(Clone)]
pub(crate) struct Point<T> {
    pub q: Vec<T>,
    pub p: Vec<T>,
    pub grad: Vec<T>,
    pub lp: f64,
}

impl<T: Real> Point<T> {
    pub(crate) fn new(q: Vec<T>, target: &impl LogDensity<T>) -> Self {
        let mut grad = vec![T::zero(); q.len()];
        let lp = target.logp_and_grad(&q, &mut grad).to_f64_lossy();
        let p = vec![T::zero(); q.len()];
        Point { q, p, grad, lp }
    }
}

/// Per-transition summary.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Transition {
    pub accept_stat: f64,
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
}

pub(crate) struct Nuts<'a, T, D> {
    target: &'a D,
    pub inv_metric: Vec<T>,
    pub step_size: f64,
    pub max_depth: usize,
    divergent: bool,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y).to_f64_lossy()
}

fn criterion<T: Real>(p_sharp_minus: &[T], p_sharp_plus: &[T], rho: &[T]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

fn add<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

impl<'a, T: Real, D: LogDensity<T>> Nuts<'a, T, D> {
    pub(crate) fn new(target: &'a D, max_depth: usize) -> Self {
        let dim = target.dim();
        Nuts {
            target,
            inv_metric: vec![T::one(); dim],
            step_size: 1.0,
            max_depth,
            divergent: false,
        }
    }

    fn hamiltonian(&self, z: &Point<T>) -> f64 {
        let kinetic =
            z.p.iter()
                .zip(&self.inv_metric)
                .fold(T::zero(), |s, (&p, &m)| s + p * p * m)
                .to_f64_lossy();
        let h = -z.lp + 0.5 * kinetic;
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn p_sharp(&self, z: &Point<T>) -> Vec<T> {
        z.p.iter().zip(&self.inv_metric).map(|(&p, &m)| p * m).collect()
    }

    fn sample_momentum(&self, z: &mut Point<T>, rng: &mut ChaCha8Rng) {
        for (p, &m) in z.p.iter_mut().zip(&self.inv_metric) {
            let n: f64 = rng.sample(StandardNormal);
            *p = T::lit(n) / m.sqrt();
        }
    }

    fn leapfrog(&self, z: &mut Point<T>, eps: f64) {
        let half = T::lit(0.5 * eps);
        let e = T::lit(eps);
        for (p, &g) in z.p.iter_mut().zip(&z.grad) {
            *p += half * g;
        }
        for ((q, &p), &m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += e * m * p;
        }
        z.lp = self.target.logp_and_grad(&z.q, &mut z.grad).to_f64_lossy();
        if z.lp.is_finite() {
            for (p, &g) in z.p.iter_mut().zip(&z.grad) {
                *p += half * g;
            }
        }
    }

    /// Doubles or halves the step size until a single leapfrog step crosses
    /// an acceptance probability of 0.8.
    pub(crate) fn init_step_size(&mut self, z: &Point<T>, rng: &mut ChaCha8Rng) -> Result<()> {
        if self.step_size == 0.0 || self.step_size > 1e7 || self.step_size.is_nan() {
            return Ok(());
        }
        let threshold = 0.8f64.ln();
        let mut direction = 0i32;
        loop {
            let mut w = z.clone();
            self.sample_momentum(&mut w, rng);
            let h0 = self.hamiltonian(&w);
            self.leapfrog(&mut w, self.step_size);
            let delta_h = h0 - self.hamiltonian(&w);
            if direction == 0 {
                direction = if delta_h > threshold { 1 } else { -1 };
            } else if (direction == 1 && !(delta_h > threshold)) || (direction == -1 && !(delta_h < threshold)) {
                break;
            }
            if direction == 1 {
                self.step_size *= 2.0;
            } else {
                self.step_size *= 0.5;
            }
            if self.step_size > 1e7 {
                return Err(Error::Sampler(
                    "posterior is improper: step size diverged upward".into(),
                ));
            }
            if self.step_size == 0.0 {
                return Err(Error::Sampler(
                    "no acceptable step size: the gradient is likely non-finite".into(),
                ));
            }
        }
        Ok(())
    }

    /// One NUTS transition from `z0`.
    pub(crate) fn transition(&mut self, z0: &Point<T>, rng: &mut ChaCha8Rng) -> (Point<T>, Transition) {
        self.divergent = false;
        let mut z = z0.clone();
        self.sample_momentum(&mut z, rng);
        let h0 = self.hamiltonian(&z);

        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut z_sample = z.clone();
        let mut z_propose = z.clone();

        let p_sharp0 = self.p_sharp(&z);
        let mut p_sharp_fwd_fwd = p_sharp0.clone();
        let mut p_sharp_fwd_bck = p_sharp0.clone();
        let mut p_sharp_bck_fwd = p_sharp0.clone();
        let mut p_sharp_bck_bck = p_sharp0;
        let mut p_fwd_fwd = z.p.clone();
        let mut p_fwd_bck = z.p.clone();
        let mut p_bck_fwd = z.p.clone();
        let mut p_bck_bck = z.p.clone();
        let mut rho = z.p.clone();

        let mut log_sum_weight = 0.0;
        let mut n_leapfrog = 0usize;
        let mut sum_metro_prob = 0.0;
        let mut depth = 0usize;
        let dim = z.q.len();

        while depth < self.max_depth {
            let mut rho_fwd = vec![T::zero(); dim];
            let mut rho_bck = vec![T::zero(); dim];
            let mut log_sum_weight_subtree = f64::NEG_INFINITY;
            let valid = if rng.random::<f64>() > 0.5 {
                z = z_fwd.clone();
                rho_bck.clone_from(&rho);
                p_bck_fwd.clone_from(&p_fwd_bck);
                p_sharp_bck_fwd.clone_from(&p_sharp_fwd_bck);
                let v = self.build_tree(
                    depth,
                    &mut z,
                    &mut z_propose,
                    &mut p_sharp_fwd_bck,
                    &mut p_sharp_fwd_fwd,
                    &mut rho_fwd,
                    &mut p_fwd_bck,
                    &mut p_fwd_fwd,
                    h0,
                    1.0,
                    &mut n_leapfrog,
                    &mut log_sum_weight_subtree,
                    &mut sum_metro_prob,
                    rng,
                );
                z_fwd = z.clone();
                v
            } else {
                z = z_bck.clone();
                rho_fwd.clone_from(&rho);
                p_fwd_bck.clone_from(&p_bck_fwd);
                p_sharp_fwd_bck.clone_from(&p_sharp_bck_fwd);
                let v = self.build_tree(
                    depth,
                    &mut z,
                    &mut z_propose,
                    &mut p_sharp_bck_fwd,
                    &mut p_sharp_bck_bck,
                    &mut rho_bck,
                    &mut p_bck_fwd,
                    &mut p_bck_bck,
                    h0,
                    -1.0,
                    &mut n_leapfrog,
                    &mut log_sum_weight_subtree,
                    &mut sum_metro_prob,
                    rng,
                );
                z_bck = z.clone();
                v
            };
            if !valid {
                break;
            }
            depth += 1;

            if log_sum_weight_subtree > log_sum_weight {
                z_sample = z_propose.clone();
            } else {
                let accept = (log_sum_weight_subtree - log_sum_weight).exp();
                if rng.random::<f64>() < accept {
                    z_sample = z_propose.clone();
                }
            }
            log_sum_weight = crate::scalar::log_add_exp(log_sum_weight, log_sum_weight_subtree);

            rho = add(&rho_bck, &rho_fwd);
            let mut persist = criterion(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            let rho_ext = add(&rho_bck, &p_fwd_bck);
            persist &= criterion(&p_sharp_bck_bck, &p_sharp_fwd_bck, &rho_ext);
            let rho_ext = add(&rho_fwd, &p_bck_fwd);
            persist &= criterion(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &rho_ext);
            if !persist {
                break;
            }
        }

        let accept_stat = if n_leapfrog > 0 {
            sum_metro_prob / n_leapfrog as f64
        } else {
            0.0
        };
        (
            z_sample,
            Transition {
                accept_stat,
                tree_depth: depth,
                n_leapfrog,
                divergent: self.divergent,
            },
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &mut self,
        depth: usize,
        z: &mut Point<T>,
        z_propose: &mut Point<T>,
        p_sharp_beg: &mut Vec<T>,
        p_sharp_end: &mut Vec<T>,
        rho: &mut [T],
        p_beg: &mut Vec<T>,
        p_end: &mut Vec<T>,
        h0: f64,
        sign: f64,
        n_leapfrog: &mut usize,
        log_sum_weight: &mut f64,
        sum_metro_prob: &mut f64,
        rng: &mut ChaCha8Rng,
    ) -> bool {
        if depth == 0 {
            self.leapfrog(z, sign * self.step_size);
            *n_leapfrog += 1;
            let h = self.hamiltonian(z);
            if h - h0 > MAX_DELTA_H {
                self.divergent = true;
            }
            *log_sum_weight = crate::scalar::log_add_exp(*log_sum_weight, h0 - h);
            *sum_metro_prob += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            z_propose.clone_from(z);
            *p_sharp_beg = self.p_sharp(z);
            p_sharp_end.clone_from(p_sharp_beg);
            for (r, &p) in rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            p_beg.clone_from(&z.p);
            p_end.clone_from(p_beg);
            return !self.divergent;
        }

        let dim = z.q.len();
        let mut p_sharp_init_end = vec![T::zero(); dim];
        let mut p_init_end = vec![T::zero(); dim];
        let mut rho_init = vec![T::zero(); dim];
        let mut log_sum_weight_init = f64::NEG_INFINITY;
        if !self.build_tree(
            depth - 1,
            z,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            h0,
            sign,
            n_leapfrog,
            &mut log_sum_weight_init,
            sum_metro_prob,
            rng,
        ) {
            return false;
        }

        let mut z_propose_final = z.clone();
        let mut rho_final = vec![T::zero(); dim];
        let mut p_sharp_final_beg = vec![T::zero(); dim];
        let mut p_final_beg = vec![T::zero(); dim];
        let mut log_sum_weight_final = f64::NEG_INFINITY;
        if !self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            h0,
            sign,
            n_leapfrog,
            &mut log_sum_weight_final,
            sum_metro_prob,
            rng,
        ) {
            return false;
        }

        let log_sum_weight_subtree = crate::scalar::log_add_exp(log_sum_weight_init, log_sum_weight_final);
        *log_sum_weight = crate::scalar::log_add_exp(*log_sum_weight, log_sum_weight_subtree);
        if log_sum_weight_final > log_sum_weight_subtree {
            *z_propose = z_propose_final;
        } else {
            let accept = (log_sum_weight_final - log_sum_weight_subtree).exp();
            if rng.random::<f64>() < accept {
                *z_propose = z_propose_final;
            }
        }

        let rho_subtree = add(&rho_init, &rho_final);
        for (r, &s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        let mut persist = criterion(p_sharp_beg, p_sharp_end, &rho_subtree);
        let rho_ext = add(&rho_init, &p_final_beg);
        persist &= criterion(p_sharp_beg, &p_sharp_final_beg, &rho_ext);
        let rho_ext = add(&rho_final, &p_init_end);
        persist &= criterion(&p_sharp_init_end, p_sharp_end, &rho_ext);
        persist
    }
}
