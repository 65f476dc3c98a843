//! Finite-population principal causal, natural and controlled effects.

use serde::{Deserialize, Serialize};

use super::augment::AugmentedDraw;
use crate::error::{Error, Result};
use crate::strata::PrincipalStratum;
use crate::study::Arm;

/// Mediator value entering a potential outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mediator {
    /// The student's own potential mediator `S(z)`.
    Potential(Arm),
    /// A fixed value.
    Fixed(f64),
}

/// A causal estimand; each is a stratum mean of `Y(treat) - Y(control)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimand {
    /// `Y(z, S(z)) - Y(z', S(z'))`.
    Pce { z: Arm, z_prime: Arm },
    /// `Y(z, S(z'')) - Y(z', S(z''))`.
    Nde { z: Arm, z_prime: Arm, z_dprime: Arm },
    /// `Y(z'', S(z)) - Y(z'', S(z'))`.
    Nie { z_dprime: Arm, z: Arm, z_prime: Arm },
    /// `Y(z, s) - Y(z', s)`.
    Cde { z: Arm, z_prime: Arm, s: f64 },
    /// `Y(z, s_high) - Y(z, s_low)`.
    Cse { z: Arm, s_high: f64, s_low: f64 },
}

impl Estimand {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |s: f64| (0.0..=1.0).contains(&s);
        match *self {
            Estimand::Nde { z, z_prime, z_dprime } | Estimand::Nie { z_dprime, z, z_prime } => {
                if z == z_prime {
                    return Err(Error::invalid(format!("{} needs two different arms", self.label())));
                }
                if z_dprime != z && z_dprime != z_prime {
                    return Err(Error::invalid(format!(
                        "{}: z'' must be one of the contrasted arms",
                        self.label()
                    )));
                }
            }
            Estimand::Cde { s, .. } if !in_unit(s) => {
                return Err(Error::invalid(format!("mediator value {s} is outside [0,1]")));
            }
            Estimand::Cse { s_high, s_low, .. } if !in_unit(s_high) || !in_unit(s_low) => {
                return Err(Error::invalid("mediator values must lie in [0,1]"));
            }
            _ => {}
        }
        Ok(())
    }

    /// The two potential outcomes being contrasted.
    pub fn sides(&self) -> ((Arm, Mediator), (Arm, Mediator)) {
        use Mediator::{Fixed, Potential};
        match *self {
            Estimand::Pce { z, z_prime } => ((z, Potential(z)), (z_prime, Potential(z_prime))),
            Estimand::Nde { z, z_prime, z_dprime } => ((z, Potential(z_dprime)), (z_prime, Potential(z_dprime))),
            Estimand::Nie { z_dprime, z, z_prime } => ((z_dprime, Potential(z)), (z_dprime, Potential(z_prime))),
            Estimand::Cde { z, z_prime, s } => ((z, Fixed(s)), (z_prime, Fixed(s))),
            Estimand::Cse { z, s_high, s_low } => ((z, Fixed(s_high)), (z, Fixed(s_low))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Estimand::Pce { .. } => "PCE",
            Estimand::Nde { .. } => "NDE",
            Estimand::Nie { .. } => "NIE",
            Estimand::Cde { .. } => "CDE",
            Estimand::Cse { .. } => "CSE",
        }
    }

    /// Display label in the usual notation, e.g. `NDE(2 vs 1, S(2))`.
    pub fn label(&self) -> String {
        match *self {
            Estimand::Pce { z, z_prime } => format!("PCE({} vs {})", z.level(), z_prime.level()),
            Estimand::Nde { z, z_prime, z_dprime } => {
                format!("NDE({} vs {}, S({}))", z.level(), z_prime.level(), z_dprime.level())
            }
            Estimand::Nie { z_dprime, z, z_prime } => {
                format!("NIE({}, S({}) vs S({}))", z_dprime.level(), z.level(), z_prime.level())
            }
            Estimand::Cde { z, z_prime, s } => format!("CDE({} vs {}, s={s})", z.level(), z_prime.level()),
            Estimand::Cse { z, s_high, s_low } => format!("CSE({}, {s_high} vs {s_low})", z.level()),
        }
    }
}

/// Default CDE/CSE mediator grid.
pub const DEFAULT_S_GRID: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

/// Default contrasts `(z, z')`.
pub const DEFAULT_CONTRASTS: [(Arm, Arm); 3] = [
    (Arm::Presentation, Arm::Flyer),
    (Arm::Reward, Arm::Presentation),
    (Arm::Reward, Arm::Flyer),
];

/// PCE, both NDE and NIE orderings and CDE on the grid for every contrast,
/// then CSE between consecutive grid points for every arm.
pub fn default_requests(contrasts: &[(Arm, Arm)], s_grid: &[f64]) -> Vec<Estimand> {
    let mut out = Vec::new();
    for &(z, z_prime) in contrasts {
        out.push(Estimand::Pce { z, z_prime });
        out.push(Estimand::Nde {
            z,
            z_prime,
            z_dprime: z,
        });
        out.push(Estimand::Nde {
            z,
            z_prime,
            z_dprime: z_prime,
        });
        out.push(Estimand::Nie {
            z_dprime: z,
            z,
            z_prime,
        });
        out.push(Estimand::Nie {
            z_dprime: z_prime,
            z,
            z_prime,
        });
        for &s in s_grid {
            out.push(Estimand::Cde { z, z_prime, s });
        }
    }
    for z in Arm::ALL {
        for w in s_grid.windows(2) {
            out.push(Estimand::Cse {
                z,
                s_high: w[1],
                s_low: w[0],
            });
        }
    }
    out
}

/// Per-stratum values of each requested estimand in one draw; `NaN` where
/// the stratum is empty. Indexed `[request][stratum]`.
pub fn draw_effects(aug: &AugmentedDraw<'_>, requests: &[Estimand]) -> Vec<[f64; 4]> {
    let n = aug.strata().len();
    let mut sums = vec![[0i64; 4]; requests.len()];
    let mut counts = [0usize; 4];
    let sides: Vec<_> = requests.iter().map(Estimand::sides).collect();
    let mut cache: Vec<(Arm, u64, i64)> = Vec::new();
    for i in 0..n {
        let g = aug.strata()[i].index();
        counts[g] += 1;
        cache.clear();
        let mut value = |(z, m): (Arm, Mediator)| -> i64 {
            let s = match m {
                Mediator::Potential(w) => aug.mediator(i, w),
                Mediator::Fixed(s) => s,
            };
            if let Some(&(_, _, y)) = cache.iter().find(|c| c.0 == z && c.1 == s.to_bits()) {
                return y;
            }
            let y = aug.outcome(i, z, s) as i64;
            cache.push((z, s.to_bits(), y));
            y
        };
        for (r, &(treat, control)) in sides.iter().enumerate() {
            sums[r][g] += value(treat) - value(control);
        }
    }
    sums.iter()
        .map(|row| {
            std::array::from_fn(|g| {
                if counts[g] == 0 {
                    f64::NAN
                } else {
                    row[g] as f64 / counts[g] as f64
                }
            })
        })
        .collect()
}

/// Stratum mean of `Y(z, S(z)) - Y(z', S(z'))`.
pub fn effect_pce(aug: &AugmentedDraw<'_>, g: PrincipalStratum, z: Arm, z_prime: Arm) -> f64 {
    draw_effects(aug, &[Estimand::Pce { z, z_prime }])[0][g.index()]
}

pub fn effect_nde(aug: &AugmentedDraw<'_>, g: PrincipalStratum, z: Arm, z_prime: Arm, z_dprime: Arm) -> f64 {
    draw_effects(aug, &[Estimand::Nde { z, z_prime, z_dprime }])[0][g.index()]
}

pub fn effect_nie(aug: &AugmentedDraw<'_>, g: PrincipalStratum, z_dprime: Arm, z: Arm, z_prime: Arm) -> f64 {
    draw_effects(aug, &[Estimand::Nie { z_dprime, z, z_prime }])[0][g.index()]
}

pub fn effect_cde(aug: &AugmentedDraw<'_>, g: PrincipalStratum, z: Arm, z_prime: Arm, s: f64) -> f64 {
    draw_effects(aug, &[Estimand::Cde { z, z_prime, s }])[0][g.index()]
}

pub fn effect_cse(aug: &AugmentedDraw<'_>, g: PrincipalStratum, z: Arm, s_high: f64, s_low: f64) -> f64 {
    draw_effects(aug, &[Estimand::Cse { z, s_high, s_low }])[0][g.index()]
}
