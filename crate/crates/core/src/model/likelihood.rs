//! Observed-data likelihood, priors and the unconstrained log posterior.

use crate::error::{Error, Result};
use crate::posterior::LogDensity;
use crate::scalar::{ln_factorial, log_add_exp, log_sum_exp, Real};
use crate::strata::{compatible_strata, PrincipalStratum};
use crate::study::{Arm, StudyData};

use super::params::{Layout, ModelParams, PriorConfig, N_CELLS};

/// One student as seen by the likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord<T> {
    pub class: usize,
    pub arm: Arm,
    pub m: bool,
    pub y: u64,
    /// Observed treated-friend share.
    pub s: T,
    /// Standardized strata covariates.
    pub x_strata: Vec<T>,
    /// Standardized outcome covariates.
    pub x_outcome: Vec<T>,
}

/// Model-ready data: per-student records and design dimensions.
#[derive(Debug, Clone)]
pub struct ModelInput<T> {
    units: Vec<UnitRecord<T>>,
    ln_y_fact: Vec<T>,
    n_classes: usize,
    k_strata: usize,
    k_outcome: usize,
}

impl<T: Real> ModelInput<T> {
    pub fn new(n_classes: usize, k_strata: usize, k_outcome: usize, units: Vec<UnitRecord<T>>) -> Result<Self> {
        for (i, u) in units.iter().enumerate() {
            if u.class >= n_classes {
                return Err(Error::invalid(format!(
                    "unit {i} refers to class {} of {n_classes}",
                    u.class
                )));
            }
            if u.x_strata.len() != k_strata || u.x_outcome.len() != k_outcome {
                return Err(Error::invalid(format!(
                    "unit {i} has covariate vectors of the wrong length"
                )));
            }
            if !u.s.is_finite() || u.x_strata.iter().chain(&u.x_outcome).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("unit {i} has non-finite inputs")));
            }
        }
        let ln_y_fact = units.iter().map(|u| T::lit(ln_factorial(u.y))).collect();
        Ok(ModelInput {
            units,
            ln_y_fact,
            n_classes,
            k_strata,
            k_outcome,
        })
    }

    pub fn from_study(data: &StudyData) -> Self {
        let cast = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
        let units: Vec<UnitRecord<T>> = data
            .students()
            .iter()
            .enumerate()
            .map(|(i, st)| UnitRecord {
                class: st.class,
                arm: data.arm_of(i),
                m: st.m,
                y: st.y,
                s: T::lit(data.observed_share(i)),
                x_strata: cast(data.strata_covariates(i)),
                x_outcome: cast(data.outcome_covariates(i)),
            })
            .collect();
        let k_strata = data.covariates().strata_names().len();
        let k_outcome = data.covariates().outcome_names().len();
        ModelInput::new(data.n_classes(), k_strata, k_outcome, units).expect("validated study data")
    }

    pub fn units(&self) -> &[UnitRecord<T>] {
        &self.units
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn check(&self, p: &ModelParams<T>) -> Result<()> {
        if p.a.len() != self.n_classes
            || p.b.len() != self.n_classes
            || p.strata_slopes.iter().any(|s| s.len() != self.k_strata)
            || p.beta_x.len() != self.k_outcome
            || p.beta_s.len() != p.tying.n_slopes()
        {
            return Err(Error::invalid("parameter dimensions do not match the data"));
        }
        Ok(())
    }
}

/// Per-evaluation cache of log zero-inflation terms.
struct CellLogs<T> {
    ln_phi: [T; N_CELLS],
    ln_1m_phi: [T; N_CELLS],
}

impl<T: Real> CellLogs<T> {
    fn new(p: &ModelParams<T>) -> Self {
        CellLogs {
            ln_phi: p.phi.map(|f| f.ln()),
            ln_1m_phi: p.phi.map(|f| (T::one() - f).ln()),
        }
    }
}

#[inline]
fn strata_eta<T: Real>(u: &UnitRecord<T>, p: &ModelParams<T>) -> [T; 4] {
    let a = p.a[u.class];
    let mut eta = [T::zero(); 4];
    for r in 0..3 {
        let mut v = p.strata_intercept[r] + a;
        for (&c, &x) in p.strata_slopes[r].iter().zip(&u.x_strata) {
            v += c * x;
        }
        eta[r + 1] = v;
    }
    eta
}

#[inline]
fn outcome_base<T: Real>(u: &UnitRecord<T>, p: &ModelParams<T>) -> T {
    let mut v = p.b[u.class];
    for (&c, &x) in p.beta_x.iter().zip(&u.x_outcome) {
        v += c * x;
    }
    v
}

/// Mixture log-likelihood contribution of one unit, plus per-stratum pieces
/// used by the gradient.
struct UnitEval<T> {
    value: T,
    log_pi: [T; 4],
    /// `(stratum, responsibility, d/d log mu, d/d logit phi)` for compatible strata.
    parts: [(PrincipalStratum, T, T, T); 3],
    n_parts: usize,
}

#[inline]
fn eval_unit<T: Real>(u: &UnitRecord<T>, ln_y_fact: T, p: &ModelParams<T>, logs: &CellLogs<T>) -> UnitEval<T> {
    let eta = strata_eta(u, p);
    let lse = log_sum_exp(&eta);
    let log_pi = eta.map(|e| e - lse);
    let base = outcome_base(u, p);
    let comp = compatible_strata(u.arm, u.m);
    let zero = T::zero();
    let mut parts = [(PrincipalStratum::AlwaysTaker, zero, zero, zero); 3];
    let mut terms = [T::neg_infinity(); 3];
    let y = T::lit(u.y as f64);
    for (k, &g) in comp.iter().enumerate() {
        let cell = p.cell(g, u.arm);
        let ln_mu = p.alpha[cell.cell] + p.beta_s[cell.slope] * u.s + base;
        let mu = ln_mu.exp();
        let (lp, lphi, l1m) = (log_pi[g.index()], logs.ln_phi[cell.cell], logs.ln_1m_phi[cell.cell]);
        let phi = p.phi[cell.cell];
        let (lf, d_lambda, d_psi) = if u.y == 0 {
            let lf = log_add_exp(lphi, l1m - mu);
            let p0_pois = (l1m - mu - lf).exp();
            let d_psi = phi * (T::one() - phi) * (T::one() - (-mu).exp()) / lf.exp();
            (lf, -mu * p0_pois, d_psi)
        } else {
            (l1m + y * ln_mu - mu - ln_y_fact, y - mu, -phi)
        };
        terms[k] = lp + lf;
        parts[k] = (g, zero, d_lambda, d_psi);
    }
    let n = comp.len();
    let value = log_sum_exp(&terms[..n]);
    for k in 0..n {
        parts[k].1 = (terms[k] - value).exp();
    }
    UnitEval {
        value,
        log_pi,
        parts,
        n_parts: n,
    }
}

/// Observed-data log-likelihood with strata summed out.
pub fn log_likelihood<T: Real>(input: &ModelInput<T>, params: &ModelParams<T>) -> Result<T> {
    input.check(params)?;
    let logs = CellLogs::new(params);
    let mut total = T::zero();
    for (u, &lyf) in input.units.iter().zip(&input.ln_y_fact) {
        total += eval_unit(u, lyf, params, &logs).value;
    }
    Ok(total)
}

fn normal_lpdf<T: Real>(x: T, sd: T) -> T {
    let z = x / sd;
    -T::lit(0.5) * z * z - sd.ln() - T::lit(0.5 * (2.0 * std::f64::consts::PI).ln())
}

/// Log prior density on the constrained scale. Zero-inflation
/// probabilities carry a uniform prior; SDs outside `(0, inf)` give `-inf`.
pub fn log_prior<T: Real>(params: &ModelParams<T>, prior: &PriorConfig) -> T {
    if !(params.sigma_a > T::zero() && params.sigma_b > T::zero()) {
        return T::neg_infinity();
    }
    if params.phi.iter().any(|&f| !(f >= T::zero() && f <= T::one())) {
        return T::neg_infinity();
    }
    let sg = T::lit(prior.sd_strata_coef);
    let so = T::lit(prior.sd_outcome_coef);
    let ss = T::lit(prior.sd_sigma);
    let ln2 = T::LN_2();
    let mut lp = T::zero();
    for r in 0..3 {
        lp += normal_lpdf(params.strata_intercept[r], sg);
        for &c in &params.strata_slopes[r] {
            lp += normal_lpdf(c, sg);
        }
    }
    for &c in params.alpha.iter().chain(&params.beta_s).chain(&params.beta_x) {
        lp += normal_lpdf(c, so);
    }
    lp += ln2 + normal_lpdf(params.sigma_a, ss);
    lp += ln2 + normal_lpdf(params.sigma_b, ss);
    for &a in &params.a {
        lp += normal_lpdf(a, params.sigma_a);
    }
    for &b in &params.b {
        lp += normal_lpdf(b, params.sigma_b);
    }
    lp
}

/// Log-Jacobian of [`Layout::constrain`] at constrained parameters.
pub fn log_jacobian<T: Real>(params: &ModelParams<T>) -> T {
    let j = T::lit(params.a.len() as f64);
    let mut v = (T::one() + j) * (params.sigma_a.ln() + params.sigma_b.ln());
    for &f in &params.phi {
        v += f.ln() + (T::one() - f).ln();
    }
    v
}

/// Log posterior on the unconstrained scale, as sampled.
#[derive(Debug, Clone)]
pub struct LogPosterior<T> {
    input: ModelInput<T>,
    layout: Layout,
    prior: PriorConfig,
}

impl<T: Real> LogPosterior<T> {
    pub fn new(input: ModelInput<T>, layout: Layout, prior: PriorConfig) -> Result<Self> {
        prior.validate()?;
        if input.n_classes != layout.n_classes
            || input.k_strata != layout.k_strata
            || input.k_outcome != layout.k_outcome
        {
            return Err(Error::invalid("layout does not match the model input"));
        }
        Ok(LogPosterior { input, layout, prior })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn input(&self) -> &ModelInput<T> {
        &self.input
    }

    pub fn prior(&self) -> &PriorConfig {
        &self.prior
    }

    /// Value only, assembled from the separate pieces.
    pub fn log_density(&self, theta: &[T]) -> Result<T> {
        let p = self.layout.constrain(theta)?;
        Ok(log_likelihood(&self.input, &p)? + log_prior(&p, &self.prior) + log_jacobian(&p))
    }

    /// Value and gradient in one pass.
    pub fn value_and_gradient(&self, theta: &[T], grad: &mut [T]) -> Result<T> {
        if grad.len() != self.layout.dim() {
            return Err(Error::invalid("gradient buffer has the wrong length"));
        }
        let p = self.layout.constrain(theta)?;
        self.input.check(&p)?;
        let o = self.layout.offsets();
        let kg = self.layout.k_strata;
        let logs = CellLogs::new(&p);
        grad.iter_mut().for_each(|g| *g = T::zero());

        // Likelihood gradient: a and b slots hold d/d(a_j), d/d(b_j) on the
        // constrained scale until the final chain rule below.
        let mut ll = T::zero();
        for (u, &lyf) in self.input.units.iter().zip(&self.input.ln_y_fact) {
            let ev = eval_unit(u, lyf, &p, &logs);
            ll += ev.value;
            let mut w = [T::zero(); 4];
            for &(g, resp, _, _) in &ev.parts[..ev.n_parts] {
                w[g.index()] = resp;
            }
            let mut d_a = T::zero();
            for r in 0..3 {
                let d = w[r + 1] - ev.log_pi[r + 1].exp();
                let start = o.strata + r * (1 + kg);
                grad[start] += d;
                for (k, &x) in u.x_strata.iter().enumerate() {
                    grad[start + 1 + k] += d * x;
                }
                d_a += d;
            }
            grad[o.a + u.class] += d_a;
            let mut d_base = T::zero();
            for &(g, resp, d_lambda, d_psi) in &ev.parts[..ev.n_parts] {
                let cell = p.cell(g, u.arm);
                let dl = resp * d_lambda;
                grad[o.alpha + cell.cell] += dl;
                grad[o.beta_s + cell.slope] += dl * u.s;
                grad[o.phi + cell.cell] += resp * d_psi;
                d_base += dl;
            }
            for (k, &x) in u.x_outcome.iter().enumerate() {
                grad[o.beta_x + k] += d_base * x;
            }
            grad[o.b + u.class] += d_base;
        }

        let lp = log_prior(&p, &self.prior);
        let lj = log_jacobian(&p);
        let value = ll + lp + lj;
        if !value.is_finite() {
            return Ok(T::neg_infinity());
        }

        // Fixed-effect priors.
        let vg = T::lit(prior_var(self.prior.sd_strata_coef));
        for r in 0..3 {
            let start = o.strata + r * (1 + kg);
            grad[start] -= p.strata_intercept[r] / vg;
            for k in 0..kg {
                grad[start + 1 + k] -= p.strata_slopes[r][k] / vg;
            }
        }
        let vo = T::lit(prior_var(self.prior.sd_outcome_coef));
        for c in 0..N_CELLS {
            grad[o.alpha + c] -= p.alpha[c] / vo;
            grad[o.phi + c] += T::one() - T::lit(2.0) * p.phi[c];
        }
        for (k, &c) in p.beta_s.iter().enumerate() {
            grad[o.beta_s + k] -= c / vo;
        }
        for (k, &c) in p.beta_x.iter().enumerate() {
            grad[o.beta_x + k] -= c / vo;
        }

        // Non-centered class intercepts.
        let vs = T::lit(prior_var(self.prior.sd_sigma));
        for (sigma, off_sigma, off_raw, effects) in
            [(p.sigma_a, o.sigma_a, o.a, &p.a), (p.sigma_b, o.sigma_b, o.b, &p.b)]
        {
            let mut d_log_sigma = T::one() - sigma * sigma / vs;
            for (j, &e) in effects.iter().enumerate() {
                let d_lik = grad[off_raw + j];
                d_log_sigma += d_lik * e;
                grad[off_raw + j] = d_lik * sigma - e / sigma;
            }
            grad[off_sigma] = d_log_sigma;
        }
        Ok(value)
    }
}

fn prior_var(sd: f64) -> f64 {
    sd * sd
}

impl<T: Real> LogDensity<T> for LogPosterior<T> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn logp_and_grad(&self, theta: &[T], grad: &mut [T]) -> T {
        match self.value_and_gradient(theta, grad) {
            Ok(v) if v.is_finite() && grad.iter().all(|g| g.is_finite()) => v,
            _ => T::neg_infinity(),
        }
    }
}

/// Log posterior and its gradient at an unconstrained point.
pub fn grad_log_posterior<T: Real>(target: &LogPosterior<T>, theta: &[T]) -> Result<(T, Vec<T>)> {
    let mut grad = vec![T::zero(); target.layout.dim()];
    let v = target.value_and_gradient(theta, &mut grad)?;
    Ok((v, grad))
}

/// Central finite-difference gradient of [`LogPosterior::log_density`].
pub fn numeric_gradient(target: &LogPosterior<f64>, theta: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut work = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        work[i] = theta[i] + h;
        let up = target.log_density(&work)?;
        work[i] = theta[i] - h;
        let down = target.log_density(&work)?;
        work[i] = theta[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Agreement between analytic and finite-difference gradients at one point.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GradientCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Coordinate with the largest relative error.
    pub worst: usize,
    /// Every coordinate is within the relative tolerance or the absolute floor.
    pub passed: bool,
}

/// Compares [`LogPosterior::value_and_gradient`] with [`numeric_gradient`].
/// A coordinate passes when its error is below `rel_tol` times the larger
/// magnitude or below `abs_floor`.
pub fn check_gradient(
    target: &LogPosterior<f64>,
    theta: &[f64],
    h: f64,
    rel_tol: f64,
    abs_floor: f64,
) -> Result<GradientCheck> {
    let (_, analytic) = grad_log_posterior(target, theta)?;
    let numeric = numeric_gradient(target, theta, h)?;
    let mut out = GradientCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: 0,
        passed: true,
    };
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let abs = (a - n).abs();
        let scale = a.abs().max(n.abs());
        let rel = if scale > 0.0 { abs / scale } else { 0.0 };
        if !(abs <= abs_floor || rel < rel_tol) {
            out.passed = false;
        }
        if rel > out.max_rel_error || rel.is_nan() {
            out.max_rel_error = rel;
            out.worst = i;
        }
        out.max_abs_error = out.max_abs_error.max(abs);
    }
    Ok(out)
}
