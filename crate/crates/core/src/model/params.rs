use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{logistic, logit, Real};
use crate::strata::PrincipalStratum;
use crate::study::{Arm, StudyData};

/// Number of free outcome cells (Poisson intercepts and zero-inflation
/// probabilities): four strata under flyer, four under presentation, and
/// reward compliers under reward. The other strata share their
/// presentation cell under reward.
pub const N_CELLS: usize = 9;

/// Non-reference strata of the multinomial logit, in canonical order.
pub const LOGIT_STRATA: [PrincipalStratum; 3] = [
    PrincipalStratum::PresentationComplier,
    PrincipalStratum::RewardComplier,
    PrincipalStratum::NeverTaker,
];

/// How the mediator slope is shared under the reward arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeTying {
    /// Strata other than reward compliers reuse the presentation slope.
    #[default]
    Shared,
    /// One extra free slope for strata other than reward compliers under reward.
    /// Breaks the reward-vs-presentation structural zeros.
    FreeReward,
}

impl SlopeTying {
    pub fn n_slopes(self) -> usize {
        match self {
            SlopeTying::Shared => 3,
            SlopeTying::FreeReward => 4,
        }
    }
}

/// Indices of the free parameters an outcome density uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OutcomeCell {
    /// Index into the intercept and zero-inflation arrays.
    pub cell: usize,
    /// Index into the mediator slope vector.
    pub slope: usize,
}

impl OutcomeCell {
    pub fn resolve(g: PrincipalStratum, arm: Arm, tying: SlopeTying) -> Self {
        let cell = match arm {
            Arm::Flyer => g.index(),
            Arm::Presentation => 4 + g.index(),
            Arm::Reward if g == PrincipalStratum::RewardComplier => 8,
            Arm::Reward => 4 + g.index(),
        };
        let slope = match arm {
            Arm::Flyer => 0,
            Arm::Presentation => 1,
            Arm::Reward if g == PrincipalStratum::RewardComplier => 2,
            Arm::Reward => match tying {
                SlopeTying::Shared => 1,
                SlopeTying::FreeReward => 3,
            },
        };
        OutcomeCell { cell, slope }
    }
}

fn cell_name(cell: usize) -> String {
    if cell == 8 {
        "001_3".to_owned()
    } else {
        format!("{}_{}", PrincipalStratum::from_index(cell % 4).code(), cell / 4 + 1)
    }
}

fn slope_name(slope: usize) -> &'static str {
    ["1", "2", "001_3", "3"][slope]
}

/// Weakly informative prior scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// SD of the normal prior on strata-model coefficients.
    pub sd_strata_coef: f64,
    /// SD of the normal prior on outcome-model coefficients.
    pub sd_outcome_coef: f64,
    /// Scale of the half-normal prior on the random-intercept SDs.
    pub sd_sigma: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            sd_strata_coef: 2.5,
            sd_outcome_coef: 1.0,
            sd_sigma: 0.5,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sd_strata_coef", self.sd_strata_coef),
            ("sd_outcome_coef", self.sd_outcome_coef),
            ("sd_sigma", self.sd_sigma),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("prior {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Full parameter state on the constrained scale.
///
/// Only free parameters are stored; tied quantities are resolved through
/// [`OutcomeCell::resolve`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    /// Strata-logit intercepts for PC, RC, NT (AT is the reference).
    pub strata_intercept: [T; 3],
    /// Strata-logit covariate slopes, same order as the intercepts.
    pub strata_slopes: [Vec<T>; 3],
    pub sigma_a: T,
    /// Class random intercepts of the strata model.
    pub a: Vec<T>,
    /// Poisson intercepts per outcome cell.
    pub alpha: [T; N_CELLS],
    /// Mediator slopes: flyer, presentation, reward compliers under reward
    /// (and a fourth under [`SlopeTying::FreeReward`]).
    pub beta_s: Vec<T>,
    /// Covariate slopes shared across strata and arms.
    pub beta_x: Vec<T>,
    /// Zero-inflation probabilities per outcome cell.
    pub phi: [T; N_CELLS],
    pub sigma_b: T,
    /// Class random intercepts of the outcome model.
    pub b: Vec<T>,
    pub tying: SlopeTying,
}

impl<T: Real> ModelParams<T> {
    /// All coefficients zero, unit SDs, `phi = 0.5`.
    pub fn zeros(layout: &Layout) -> Self {
        ModelParams {
            strata_intercept: [T::zero(); 3],
            strata_slopes: std::array::from_fn(|_| vec![T::zero(); layout.k_strata]),
            sigma_a: T::one(),
            a: vec![T::zero(); layout.n_classes],
            alpha: [T::zero(); N_CELLS],
            beta_s: vec![T::zero(); layout.tying.n_slopes()],
            beta_x: vec![T::zero(); layout.k_outcome],
            phi: [T::lit(0.5); N_CELLS],
            sigma_b: T::one(),
            b: vec![T::zero(); layout.n_classes],
            tying: layout.tying,
        }
    }

    #[inline]
    pub fn cell(&self, g: PrincipalStratum, arm: Arm) -> OutcomeCell {
        OutcomeCell::resolve(g, arm, self.tying)
    }

    /// Converts to another scalar type.
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let c = |x: T| U::lit(x.to_f64_lossy());
        let v = |x: &Vec<T>| x.iter().map(|&e| c(e)).collect::<Vec<U>>();
        ModelParams {
            strata_intercept: self.strata_intercept.map(c),
            strata_slopes: std::array::from_fn(|r| v(&self.strata_slopes[r])),
            sigma_a: c(self.sigma_a),
            a: v(&self.a),
            alpha: self.alpha.map(c),
            beta_s: v(&self.beta_s),
            beta_x: v(&self.beta_x),
            phi: self.phi.map(c),
            sigma_b: c(self.sigma_b),
            b: v(&self.b),
            tying: self.tying,
        }
    }
}

/// Shape of the parameter vector for a given design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub k_strata: usize,
    pub k_outcome: usize,
    pub n_classes: usize,
    pub tying: SlopeTying,
    pub strata_covariates: Vec<String>,
    pub outcome_covariates: Vec<String>,
    pub class_ids: Vec<String>,
}

/// Offsets of each block in the flat vector (shared by both scales).
#[derive(Debug, Clone, Copy)]
pub struct Offsets {
    pub strata: usize,
    pub sigma_a: usize,
    pub a: usize,
    pub alpha: usize,
    pub beta_s: usize,
    pub beta_x: usize,
    pub phi: usize,
    pub sigma_b: usize,
    pub b: usize,
    pub dim: usize,
}

impl Layout {
    pub fn for_study(data: &StudyData, tying: SlopeTying) -> Self {
        let spec = data.covariates();
        let strata_covariates = spec.strata_names();
        let outcome_covariates = spec.outcome_names();
        Layout {
            k_strata: strata_covariates.len(),
            k_outcome: outcome_covariates.len(),
            n_classes: data.n_classes(),
            tying,
            strata_covariates,
            outcome_covariates,
            class_ids: data.classes().iter().map(|c| c.id.clone()).collect(),
        }
    }

    /// Layout with generated covariate and class names.
    pub fn anonymous(k_strata: usize, k_outcome: usize, n_classes: usize, tying: SlopeTying) -> Self {
        Layout {
            k_strata,
            k_outcome,
            n_classes,
            tying,
            strata_covariates: (0..k_strata).map(|k| format!("x{k}")).collect(),
            outcome_covariates: (0..k_outcome).map(|k| format!("x{k}")).collect(),
            class_ids: (0..n_classes).map(|j| format!("c{j}")).collect(),
        }
    }

    pub fn offsets(&self) -> Offsets {
        let strata = 0;
        let sigma_a = strata + 3 * (1 + self.k_strata);
        let a = sigma_a + 1;
        let alpha = a + self.n_classes;
        let beta_s = alpha + N_CELLS;
        let beta_x = beta_s + self.tying.n_slopes();
        let phi = beta_x + self.k_outcome;
        let sigma_b = phi + N_CELLS;
        let b = sigma_b + 1;
        let dim = b + self.n_classes;
        Offsets {
            strata,
            sigma_a,
            a,
            alpha,
            beta_s,
            beta_x,
            phi,
            sigma_b,
            b,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.offsets().dim
    }

    /// Number of free parameters other than the class random intercepts.
    pub fn n_fixed(&self) -> usize {
        self.dim() - 2 * self.n_classes
    }

    /// Names of the constrained parameters, in vector order.
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        for g in LOGIT_STRATA {
            names.push(format!("gamma_{}", g.code()));
            for c in &self.strata_covariates {
                names.push(format!("delta_{}.{c}", g.code()));
            }
        }
        names.push("sigma_a".into());
        names.extend(self.class_ids.iter().map(|id| format!("a[{id}]")));
        names.extend((0..N_CELLS).map(|c| format!("alpha_{}", cell_name(c))));
        names.extend((0..self.tying.n_slopes()).map(|s| format!("beta_s_{}", slope_name(s))));
        names.extend(self.outcome_covariates.iter().map(|c| format!("beta_x.{c}")));
        names.extend((0..N_CELLS).map(|c| format!("phi_{}", cell_name(c))));
        names.push("sigma_b".into());
        names.extend(self.class_ids.iter().map(|id| format!("b[{id}]")));
        names
    }

    /// Flattens constrained parameters in [`Layout::names`] order.
    pub fn flatten<T: Real>(&self, p: &ModelParams<T>) -> Vec<T> {
        let mut v = Vec::with_capacity(self.dim());
        for r in 0..3 {
            v.push(p.strata_intercept[r]);
            v.extend_from_slice(&p.strata_slopes[r]);
        }
        v.push(p.sigma_a);
        v.extend_from_slice(&p.a);
        v.extend_from_slice(&p.alpha);
        v.extend_from_slice(&p.beta_s);
        v.extend_from_slice(&p.beta_x);
        v.extend_from_slice(&p.phi);
        v.push(p.sigma_b);
        v.extend_from_slice(&p.b);
        v
    }

    /// Inverse of [`Layout::flatten`].
    pub fn unflatten<T: Real>(&self, v: &[T]) -> Result<ModelParams<T>> {
        if v.len() != self.dim() {
            return Err(Error::invalid(format!(
                "parameter vector has length {}, layout expects {}",
                v.len(),
                self.dim()
            )));
        }
        let o = self.offsets();
        let kg = self.k_strata;
        Ok(ModelParams {
            strata_intercept: std::array::from_fn(|r| v[o.strata + r * (1 + kg)]),
            strata_slopes: std::array::from_fn(|r| {
                let start = o.strata + r * (1 + kg) + 1;
                v[start..start + kg].to_vec()
            }),
            sigma_a: v[o.sigma_a],
            a: v[o.a..o.alpha].to_vec(),
            alpha: std::array::from_fn(|c| v[o.alpha + c]),
            beta_s: v[o.beta_s..o.beta_x].to_vec(),
            beta_x: v[o.beta_x..o.phi].to_vec(),
            phi: std::array::from_fn(|c| v[o.phi + c]),
            sigma_b: v[o.sigma_b],
            b: v[o.b..o.dim].to_vec(),
            tying: self.tying,
        })
    }

    /// Maps an unconstrained vector to parameters: log SDs, non-centered
    /// class intercepts (`a_j = sigma_a * raw_j`) and logit zero-inflation.
    pub fn constrain<T: Real>(&self, theta: &[T]) -> Result<ModelParams<T>> {
        if theta.len() != self.dim() {
            return self.unflatten(theta);
        }
        let mut v = theta.to_vec();
        let o = self.offsets();
        let sigma_a = v[o.sigma_a].exp();
        let sigma_b = v[o.sigma_b].exp();
        v[o.sigma_a] = sigma_a;
        v[o.sigma_b] = sigma_b;
        for x in &mut v[o.a..o.alpha] {
            *x *= sigma_a;
        }
        for x in &mut v[o.b..o.dim] {
            *x *= sigma_b;
        }
        for x in &mut v[o.phi..o.sigma_b] {
            *x = logistic(*x);
        }
        self.unflatten(&v)
    }

    /// Inverse of [`Layout::constrain`]. Fails on boundary values.
    pub fn unconstrain<T: Real>(&self, p: &ModelParams<T>) -> Result<Vec<T>> {
        if !(p.sigma_a > T::zero() && p.sigma_b > T::zero()) {
            return Err(Error::invalid("random-intercept SDs must be positive"));
        }
        if p.phi.iter().any(|&f| !(f > T::zero() && f < T::one())) {
            return Err(Error::invalid(
                "zero-inflation probabilities must lie strictly inside (0,1)",
            ));
        }
        let mut v = self.flatten(p);
        let o = self.offsets();
        for x in &mut v[o.a..o.alpha] {
            *x /= p.sigma_a;
        }
        for x in &mut v[o.b..o.dim] {
            *x /= p.sigma_b;
        }
        for x in &mut v[o.phi..o.sigma_b] {
            *x = logit(*x);
        }
        v[o.sigma_a] = p.sigma_a.ln();
        v[o.sigma_b] = p.sigma_b.ln();
        Ok(v)
    }
}

pub const PARAMS_FORMAT: &str = "netstrat-params";
pub const PARAMS_VERSION: u32 = 1;

/// Flat named-vector serialization of constrained parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedParams {
    pub format: String,
    pub version: u32,
    pub tying: SlopeTying,
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl NamedParams {
    pub fn from_params(layout: &Layout, p: &ModelParams<f64>) -> Self {
        NamedParams {
            format: PARAMS_FORMAT.into(),
            version: PARAMS_VERSION,
            tying: layout.tying,
            names: layout.names(),
            values: layout.flatten(p),
        }
    }

    /// Reads values back, checking the name map against `layout`.
    pub fn to_params(&self, layout: &Layout) -> Result<ModelParams<f64>> {
        if self.format != PARAMS_FORMAT || self.version != PARAMS_VERSION {
            return Err(Error::invalid(format!(
                "unsupported parameter format {} v{}",
                self.format, self.version
            )));
        }
        if self.names != layout.names() {
            return Err(Error::invalid("parameter names do not match the model layout"));
        }
        layout.unflatten(&self.values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use PrincipalStratum::*;

    #[test]
    fn free_parameter_count() {
        let l = Layout::anonymous(7, 8, 15, SlopeTying::Shared);
        // 3(1+K_G) + sigma_a + 9 alpha + 3 beta_s + K_Y + 9 phi + sigma_b
        assert_eq!(l.n_fixed(), 3 * 8 + 1 + 9 + 3 + 8 + 9 + 1);
        assert_eq!(l.names().len(), l.dim());
        let free = Layout::anonymous(7, 8, 15, SlopeTying::FreeReward);
        assert_eq!(free.n_fixed(), l.n_fixed() + 1);
    }

    #[test]
    fn tied_cells_under_reward() {
        for g in [NeverTaker, AlwaysTaker, PresentationComplier] {
            assert_eq!(
                OutcomeCell::resolve(g, Arm::Reward, SlopeTying::Shared),
                OutcomeCell::resolve(g, Arm::Presentation, SlopeTying::Shared)
            );
            let free = OutcomeCell::resolve(g, Arm::Reward, SlopeTying::FreeReward);
            assert_eq!(free.slope, 3);
        }
        let rc3 = OutcomeCell::resolve(RewardComplier, Arm::Reward, SlopeTying::Shared);
        let rc2 = OutcomeCell::resolve(RewardComplier, Arm::Presentation, SlopeTying::Shared);
        assert_ne!(rc3, rc2);
        assert_eq!(rc3, OutcomeCell { cell: 8, slope: 2 });
        // mediator slope is shared across strata within flyer and presentation
        for g in PrincipalStratum::ALL {
            assert_eq!(OutcomeCell::resolve(g, Arm::Flyer, SlopeTying::Shared).slope, 0);
            assert_eq!(OutcomeCell::resolve(g, Arm::Presentation, SlopeTying::Shared).slope, 1);
        }
    }

    #[test]
    fn every_cell_reachable_once() {
        let mut seen = [0; N_CELLS];
        for g in PrincipalStratum::ALL {
            for arm in [Arm::Flyer, Arm::Presentation] {
                seen[OutcomeCell::resolve(g, arm, SlopeTying::Shared).cell] += 1;
            }
        }
        seen[OutcomeCell::resolve(RewardComplier, Arm::Reward, SlopeTying::Shared).cell] += 1;
        assert_eq!(seen, [1; N_CELLS]);
    }

    #[test]
    fn constrain_round_trip() {
        let l = Layout::anonymous(2, 3, 4, SlopeTying::Shared);
        let theta: Vec<f64> = (0..l.dim()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let p = l.constrain(&theta).unwrap();
        assert!(p.sigma_a > 0.0 && p.phi.iter().all(|&f| f > 0.0 && f < 1.0));
        let back = l.unconstrain(&p).unwrap();
        for (a, b) in theta.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(l.unflatten(&l.flatten(&p)).unwrap(), p);
    }

    #[test]
    fn named_params_check_names() {
        let l = Layout::anonymous(1, 1, 2, SlopeTying::Shared);
        let p = ModelParams::<f64>::zeros(&l);
        let named = NamedParams::from_params(&l, &p);
        let json = serde_json::to_string(&named).unwrap();
        let back: NamedParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_params(&l).unwrap(), p);
        let other = Layout::anonymous(2, 1, 2, SlopeTying::Shared);
        assert!(back.to_params(&other).is_err());
    }
}
