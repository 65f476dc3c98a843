//! Component densities of the strata and outcome models.

use crate::error::{Error, Result};
use crate::scalar::{log_add_exp, Real};
use crate::strata::PrincipalStratum;
use crate::study::Arm;

use super::params::ModelParams;

/// Linear predictors of the multinomial logit in canonical stratum order,
/// with the always-taker stratum pinned to zero.
#[inline]
pub(crate) fn strata_logits<T: Real>(x: &[T], a_j: T, p: &ModelParams<T>) -> [T; 4] {
    let mut eta = [T::zero(); 4];
    for r in 0..3 {
        let mut v = p.strata_intercept[r] + a_j;
        for (&c, &xk) in p.strata_slopes[r].iter().zip(x) {
            v += c * xk;
        }
        eta[r + 1] = v;
    }
    eta
}

/// Log stratum-membership probabilities in canonical order.
#[inline]
pub(crate) fn strata_log_probs<T: Real>(x: &[T], a_j: T, p: &ModelParams<T>) -> [T; 4] {
    let eta = strata_logits(x, a_j, p);
    let lse = crate::scalar::log_sum_exp(&eta);
    eta.map(|e| e - lse)
}

/// Stratum-membership probabilities (AT, PC, RC, NT) for one student.
pub fn strata_probs<T: Real>(x: &[T], a_j: T, params: &ModelParams<T>) -> Result<[T; 4]> {
    if x.len() != params.strata_slopes[0].len() {
        return Err(Error::invalid(format!(
            "strata covariate vector has length {}, model expects {}",
            x.len(),
            params.strata_slopes[0].len()
        )));
    }
    if !a_j.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite input to strata_probs"));
    }
    let eta = strata_logits(x, a_j, params);
    if eta.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite strata linear predictor"));
    }
    let max = eta.iter().copied().fold(T::neg_infinity(), T::max);
    let w = eta.map(|e| (e - max).exp());
    let total: T = w.iter().copied().sum();
    Ok(w.map(|v| v / total))
}

/// Zero-inflated Poisson log-pmf given log-scale pieces.
#[inline]
pub(crate) fn zip_log_pmf_parts<T: Real>(y: u64, ln_phi: T, ln_1m_phi: T, ln_mu: T, mu: T, ln_y_fact: T) -> T {
    if y == 0 {
        log_add_exp(ln_phi, ln_1m_phi - mu)
    } else {
        ln_1m_phi + T::lit(y as f64) * ln_mu - mu - ln_y_fact
    }
}

/// `log P(Y = y)` under a zero-inflated Poisson with inflation `phi` and mean `mu`.
pub fn zip_log_pmf<T: Real>(y: u64, phi: T, mu: T) -> Result<T> {
    if !(mu > T::zero()) || !mu.is_finite() {
        return Err(Error::invalid(format!(
            "Poisson mean must be positive and finite, got {mu}"
        )));
    }
    if !(phi >= T::zero() && phi <= T::one()) {
        return Err(Error::invalid(format!(
            "zero-inflation probability must lie in [0,1], got {phi}"
        )));
    }
    let ln_y_fact = T::lit(crate::scalar::ln_factorial(y));
    Ok(zip_log_pmf_parts(
        y,
        phi.ln(),
        (T::one() - phi).ln(),
        mu.ln(),
        mu,
        ln_y_fact,
    ))
}

/// Log-link Poisson mean for stratum `g` under `arm` at mediator value `s`.
///
/// `x` are the standardized outcome covariates and `b_j` the class intercept.
pub fn poisson_mean<T: Real>(g: PrincipalStratum, arm: Arm, s: T, x: &[T], b_j: T, params: &ModelParams<T>) -> T {
    let cell = params.cell(g, arm);
    let mut eta = params.alpha[cell.cell] + params.beta_s[cell.slope] * s + b_j;
    for (&c, &xk) in params.beta_x.iter().zip(x) {
        eta += c * xk;
    }
    eta.exp()
}

/// Upper bound on the support searched by the quantile function.
fn support_cap(mu: f64) -> u64 {
    (mu + 40.0 * mu.sqrt() + 200.0).ceil() as u64
}

/// Walks the CDF `F(0), F(1), ...` of a zero-inflated Poisson. Every
/// consumer goes through this so that interval endpoints and quantiles
/// agree bit for bit.
struct ZipCdf {
    phi: f64,
    ln_mu: f64,
    ln_term: f64,
    poisson_cdf: f64,
    k: u64,
}

impl ZipCdf {
    fn new(phi: f64, mu: f64) -> Self {
        ZipCdf {
            phi,
            ln_mu: mu.ln(),
            ln_term: -mu,
            poisson_cdf: (-mu).exp(),
            k: 0,
        }
    }

    fn value(&self) -> f64 {
        self.phi + (1.0 - self.phi) * self.poisson_cdf
    }

    fn advance(&mut self) {
        self.k += 1;
        self.ln_term += self.ln_mu - (self.k as f64).ln();
        self.poisson_cdf += self.ln_term.exp();
    }
}

/// Smallest `y` with `u < F(y)`: the comonotone draw from a uniform `u`.
pub fn zip_quantile(u: f64, phi: f64, mu: f64) -> u64 {
    let mut cdf = ZipCdf::new(phi, mu);
    let cap = support_cap(mu);
    while u >= cdf.value() && cdf.k < cap {
        cdf.advance();
    }
    cdf.k
}

/// `[F(y-1), F(y))`, the uniforms that map to `y` under [`zip_quantile`].
pub fn zip_cdf_interval(y: u64, phi: f64, mu: f64) -> (f64, f64) {
    let mut cdf = ZipCdf::new(phi, mu);
    let mut lo = 0.0;
    while cdf.k < y {
        lo = cdf.value();
        cdf.advance();
    }
    (lo, cdf.value())
}

/// Uniform on `[F(y-1), F(y))` from a standard uniform `v`; falls back to the
/// lower endpoint when the interval is empty in floating point.
pub fn conditional_uniform(v: f64, y: u64, phi: f64, mu: f64) -> f64 {
    let (lo, hi) = zip_cdf_interval(y, phi, mu);
    let u = lo + v * (hi - lo);
    if u >= hi || u < lo {
        lo
    } else {
        u
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::{Layout, SlopeTying};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symmetric_softmax() {
        let l = Layout::anonymous(2, 0, 1, SlopeTying::Shared);
        let p = ModelParams::<f64>::zeros(&l);
        let pr = strata_probs(&[0.3, -1.0], 0.0, &p).unwrap();
        assert_eq!(pr, [0.25; 4]);
    }

    #[test]
    fn softmax_log3() {
        let l = Layout::anonymous(0, 0, 1, SlopeTying::Shared);
        let mut p = ModelParams::<f64>::zeros(&l);
        p.strata_intercept[2] = 3f64.ln(); // NT
        let pr = strata_probs(&[], 0.0, &p).unwrap();
        assert!((pr[3] - 0.5).abs() < 1e-15);
        for g in 0..3 {
            assert!((pr[g] - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn strata_probs_rejects_bad_input() {
        let l = Layout::anonymous(1, 0, 1, SlopeTying::Shared);
        let p = ModelParams::<f64>::zeros(&l);
        assert!(strata_probs(&[f64::NAN], 0.0, &p).is_err());
        assert!(strata_probs(&[1.0, 2.0], 0.0, &p).is_err());
        assert!(strata_probs(&[1.0], f64::INFINITY, &p).is_err());
    }

    // independent straight-line evaluation of the logit model
    fn softmax_reference(x: &[f64], a: f64, p: &ModelParams<f64>) -> [f64; 4] {
        let mut num = [1.0; 4];
        for r in 0..3 {
            let lin: f64 =
                p.strata_intercept[r] + a + p.strata_slopes[r].iter().zip(x).map(|(c, v)| c * v).sum::<f64>();
            num[r + 1] = lin.exp();
        }
        let den: f64 = num.iter().sum();
        num.map(|n| n / den)
    }

    #[test]
    fn softmax_matches_reference_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = Layout::anonymous(3, 0, 1, SlopeTying::Shared);
        for _ in 0..200 {
            let mut p = ModelParams::<f64>::zeros(&l);
            for r in 0..3 {
                p.strata_intercept[r] = rng.random_range(-3.0..3.0);
                for c in &mut p.strata_slopes[r] {
                    *c = rng.random_range(-2.0..2.0);
                }
            }
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = rng.random_range(-1.0..1.0);
            let got = strata_probs(&x, a, &p).unwrap();
            let want = softmax_reference(&x, a, &p);
            for g in 0..4 {
                assert!((got[g] - want[g]).abs() < 1e-13);
            }
            assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zip_zero_branch_value() {
        let v = zip_log_pmf(0, 0.5, 2.0).unwrap();
        let expected = (0.5 + 0.5 * (-2.0f64).exp()).ln();
        assert!((v - expected).abs() < 1e-15);
        assert!((v.exp() - 0.567_667_64).abs() < 1e-8);
    }

    #[test]
    fn zip_without_inflation_is_poisson() {
        for y in 0..20u64 {
            let mu = 3.7f64;
            let pois = -mu + y as f64 * mu.ln() - crate::scalar::ln_factorial(y);
            assert!((zip_log_pmf(y, 0.0, mu).unwrap() - pois).abs() < 1e-12);
        }
    }

    #[test]
    fn zip_rejects_nonpositive_mean() {
        assert!(zip_log_pmf(1, 0.2, 0.0).is_err());
        assert!(zip_log_pmf(1, 0.2, -1.0).is_err());
        assert!(zip_log_pmf(1, 1.5, 1.0).is_err());
    }

    #[test]
    fn zip_normalizes() {
        for &phi in &[0.0, 0.3, 0.99] {
            for &mu in &[0.1, 2.0, 30.0] {
                let cap = (mu + 20.0 * f64::sqrt(mu) + 50.0).ceil() as u64;
                let total: f64 = (0..=cap).map(|y| zip_log_pmf(y, phi, mu).unwrap().exp()).sum();
                assert!((total - 1.0).abs() < 1e-8, "phi={phi} mu={mu} total={total}");
            }
        }
    }

    #[test]
    fn poisson_mean_at_zero_is_one() {
        let l = Layout::anonymous(0, 2, 1, SlopeTying::Shared);
        let p = ModelParams::<f64>::zeros(&l);
        let mu = poisson_mean(PrincipalStratum::NeverTaker, Arm::Flyer, 0.4, &[1.0, 2.0], 0.0, &p);
        assert_eq!(mu, 1.0);
    }

    #[test]
    fn poisson_mean_tying() {
        let l = Layout::anonymous(0, 1, 1, SlopeTying::Shared);
        let mut p = ModelParams::<f64>::zeros(&l);
        for (i, a) in p.alpha.iter_mut().enumerate() {
            *a = 0.1 * i as f64;
        }
        p.beta_s = vec![0.2, -0.4, 0.9];
        p.beta_x = vec![0.3];
        let nt3 = poisson_mean(PrincipalStratum::NeverTaker, Arm::Reward, 0.5, &[1.0], 0.2, &p);
        let nt2 = poisson_mean(PrincipalStratum::NeverTaker, Arm::Presentation, 0.5, &[1.0], 0.2, &p);
        assert_eq!(nt3.to_bits(), nt2.to_bits());
        let rc3 = poisson_mean(PrincipalStratum::RewardComplier, Arm::Reward, 0.5, &[1.0], 0.2, &p);
        let rc2 = poisson_mean(
            PrincipalStratum::RewardComplier,
            Arm::Presentation,
            0.5,
            &[1.0],
            0.2,
            &p,
        );
        assert_ne!(rc3, rc2);
    }

    #[test]
    fn quantile_inverts_interval() {
        for &(phi, mu) in &[(0.0, 0.1), (0.3, 1.0), (0.7, 5.0), (0.1, 20.0), (0.99, 3.0)] {
            for y in 0..40u64 {
                let (lo, hi) = zip_cdf_interval(y, phi, mu);
                if hi > lo {
                    assert_eq!(zip_quantile(lo, phi, mu), y);
                    let mid = lo + 0.5 * (hi - lo);
                    assert_eq!(zip_quantile(mid, phi, mu), y);
                    let u = conditional_uniform(0.999_999, y, phi, mu);
                    assert_eq!(zip_quantile(u, phi, mu), y);
                }
            }
        }
    }

    #[test]
    fn quantile_of_full_inflation_is_zero() {
        for u in [0.0, 0.5, 0.999_999_9] {
            assert_eq!(zip_quantile(u, 1.0, 4.0), 0);
        }
    }

    #[test]
    fn quantile_moment_matches_zip_mean() {
        let (phi, mu) = (0.3, 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| zip_quantile(rng.random::<f64>(), phi, mu) as f64)
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!((mean - (1.0 - phi) * mu).abs() < 3.0 * se, "mean {mean}");
    }
}
