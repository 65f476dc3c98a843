//! Principal strata under monotone compliance and their nonparametric
//! method-of-moments proportions.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::{stream_rng, Stream};
use crate::study::{Arm, StudyData};

/// Compliance type: potential uptake under flyer, presentation and reward.
///
/// The declaration order (AT, PC, RC, NT) is the canonical order of every
/// 4-vector indexed by stratum in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum PrincipalStratum {
    /// 111
    AlwaysTaker,
    /// 011
    PresentationComplier,
    /// 001
    RewardComplier,
    /// 000
    NeverTaker,
}

impl PrincipalStratum {
    pub const ALL: [PrincipalStratum; 4] = [
        PrincipalStratum::AlwaysTaker,
        PrincipalStratum::PresentationComplier,
        PrincipalStratum::RewardComplier,
        PrincipalStratum::NeverTaker,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> PrincipalStratum {
        Self::ALL[i]
    }

    pub fn code(self) -> &'static str {
        match self {
            PrincipalStratum::AlwaysTaker => "111",
            PrincipalStratum::PresentationComplier => "011",
            PrincipalStratum::RewardComplier => "001",
            PrincipalStratum::NeverTaker => "000",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PrincipalStratum::AlwaysTaker => "AlwaysTaker",
            PrincipalStratum::PresentationComplier => "PresentationComplier",
            PrincipalStratum::RewardComplier => "RewardComplier",
            PrincipalStratum::NeverTaker => "NeverTaker",
        }
    }

    /// Whether a member of this stratum takes up the treatment under `arm`.
    #[inline]
    pub fn potential_treatment(self, arm: Arm) -> bool {
        match self {
            PrincipalStratum::AlwaysTaker => true,
            PrincipalStratum::PresentationComplier => arm != Arm::Flyer,
            PrincipalStratum::RewardComplier => arm == Arm::Reward,
            PrincipalStratum::NeverTaker => false,
        }
    }
}

impl fmt::Display for PrincipalStratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for PrincipalStratum {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "111" | "AT" | "AlwaysTaker" => Ok(PrincipalStratum::AlwaysTaker),
            "011" | "PC" | "PresentationComplier" => Ok(PrincipalStratum::PresentationComplier),
            "001" | "RC" | "RewardComplier" => Ok(PrincipalStratum::RewardComplier),
            "000" | "NT" | "NeverTaker" => Ok(PrincipalStratum::NeverTaker),
            other => {
                let defier = other.len() == 3 && other.chars().all(|c| c == '0' || c == '1');
                if defier {
                    Err(Error::invalid(format!(
                        "stratum {other} is a defier type, excluded by monotone compliance"
                    )))
                } else {
                    Err(Error::invalid(format!("unknown principal stratum '{other}'")))
                }
            }
        }
    }
}

impl From<PrincipalStratum> for String {
    fn from(g: PrincipalStratum) -> String {
        g.code().to_owned()
    }
}

impl TryFrom<String> for PrincipalStratum {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

use PrincipalStratum::{AlwaysTaker as AT, NeverTaker as NT, PresentationComplier as PC, RewardComplier as RC};

/// Strata consistent with observing uptake `m` under `arm`.
pub fn compatible_strata(arm: Arm, m: bool) -> &'static [PrincipalStratum] {
    match (arm, m) {
        (Arm::Flyer, false) => &[PC, RC, NT],
        (Arm::Flyer, true) => &[AT],
        (Arm::Presentation, false) => &[RC, NT],
        (Arm::Presentation, true) => &[AT, PC],
        (Arm::Reward, false) => &[NT],
        (Arm::Reward, true) => &[AT, PC, RC],
    }
}

/// Per-arm uptake counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmCounts {
    pub arm: Arm,
    pub untreated: usize,
    pub treated: usize,
}

impl ArmCounts {
    pub fn total(&self) -> usize {
        self.untreated + self.treated
    }

    pub fn uptake(&self) -> f64 {
        self.treated as f64 / self.total() as f64
    }
}

/// Method-of-moments stratum proportions in canonical order (111, 011, 001, 000).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomEstimate {
    pub proportions: [f64; 4],
    pub standard_errors: [f64; 4],
    pub arm_counts: Vec<ArmCounts>,
    pub bootstrap_replicates: usize,
    pub warnings: Vec<String>,
}

/// Raw moment identities from uptake probabilities under arms 1, 2, 3.
pub fn mom_from_uptake(p: [f64; 3]) -> [f64; 4] {
    let always = p[0];
    let never = 1.0 - p[2];
    let reward = (1.0 - p[1]) - never;
    let presentation = p[1] - always;
    [always, presentation, reward, never]
}

pub const DEFAULT_BOOTSTRAP: usize = 2000;

/// Method-of-moments proportions with cluster-bootstrap standard errors.
///
/// Bootstrap replicates resample classes with replacement within each arm.
/// Negative raw proportions (monotonicity violated in the sample) are kept
/// and reported as warnings.
pub fn mom_estimate(data: &StudyData, replicates: usize, seed: u64) -> Result<MomEstimate> {
    // per-arm list of (class size, treated count)
    let mut per_arm: [Vec<(usize, usize)>; 3] = Default::default();
    for class in data.classes() {
        let treated = class.members.iter().filter(|&&i| data.students()[i].m).count();
        per_arm[class.arm.index()].push((class.members.len(), treated));
    }
    if let Some(arm) = Arm::ALL.iter().find(|a| per_arm[a.index()].is_empty()) {
        return Err(Error::invalid(format!("no classes assigned to encouragement {arm}")));
    }
    let arm_counts: Vec<ArmCounts> = Arm::ALL
        .iter()
        .map(|&arm| {
            let (n, t) = per_arm[arm.index()]
                .iter()
                .fold((0, 0), |(n, t), &(cn, ct)| (n + cn, t + ct));
            ArmCounts {
                arm,
                untreated: n - t,
                treated: t,
            }
        })
        .collect();
    let uptake = [arm_counts[0].uptake(), arm_counts[1].uptake(), arm_counts[2].uptake()];
    let proportions = mom_from_uptake(uptake);

    let mut warnings = Vec::new();
    for (g, &p) in PrincipalStratum::ALL.iter().zip(&proportions) {
        if p < 0.0 {
            let msg =
                format!("raw proportion for stratum {g} is negative ({p:.4}); uptake is not monotone in the sample");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }

    let mut rng = stream_rng(seed, Stream::Bootstrap);
    let mut sums = [0.0; 4];
    let mut sq = [0.0; 4];
    for _ in 0..replicates {
        let mut p = [0.0; 3];
        for (a, classes) in per_arm.iter().enumerate() {
            let (mut n, mut t) = (0usize, 0usize);
            for _ in 0..classes.len() {
                let (cn, ct) = classes[rng.random_range(0..classes.len())];
                n += cn;
                t += ct;
            }
            p[a] = t as f64 / n as f64;
        }
        let est = mom_from_uptake(p);
        for g in 0..4 {
            sums[g] += est[g];
            sq[g] += est[g] * est[g];
        }
    }
    let mut standard_errors = [0.0; 4];
    if replicates > 1 {
        let r = replicates as f64;
        for g in 0..4 {
            let mean = sums[g] / r;
            standard_errors[g] = ((sq[g] - r * mean * mean) / (r - 1.0)).max(0.0).sqrt();
        }
    }

    Ok(MomEstimate {
        proportions,
        standard_errors,
        arm_counts,
        bootstrap_replicates: replicates,
        warnings,
    })
}
