use rand::Rng;
use rand_distr::StandardNormal;

use super::GroundTruth;
use crate::error::{Error, Result};
use crate::estimands::{Estimand, Mediator};
use crate::model::{poisson_mean, strata_probs, zip_log_pmf, Layout, ModelParams, N_CELLS};
use crate::strata::{compatible_strata, PrincipalStratum};
use crate::study::{Arm, ClassRecord, CovariateSelection, StudentRecord, StudyData};

/// Largest study [`brute_force_likelihood`] will enumerate.
pub const BRUTE_FORCE_MAX: usize = 8;

/// True finite-population estimands, `values[request][stratum]`; `NaN`
/// where the true stratum is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleEstimates {
    pub values: Vec<[f64; 4]>,
    pub counts: [usize; 4],
}

/// Evaluates each request on the complete potential-outcome table.
pub fn oracle_estimands(truth: &GroundTruth, requests: &[Estimand]) -> OracleEstimates {
    let mut counts = [0usize; 4];
    for g in &truth.strata {
        counts[g.index()] += 1;
    }
    let y = |i: usize, (z, m): (Arm, Mediator)| -> f64 {
        let s = match m {
            Mediator::Potential(w) => truth.potential_mediator(i, w),
            Mediator::Fixed(s) => s,
        };
        truth.potential_outcome(i, z, s) as f64
    };
    let values = requests
        .iter()
        .map(|e| {
            let (treat, control) = e.sides();
            let mut sums = [0.0; 4];
            for i in 0..truth.n_students() {
                sums[truth.strata[i].index()] += y(i, treat) - y(i, control);
            }
            std::array::from_fn(|g| {
                if counts[g] == 0 {
                    f64::NAN
                } else {
                    sums[g] / counts[g] as f64
                }
            })
        })
        .collect();
    OracleEstimates { values, counts }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Observed-data log-likelihood by enumerating every joint stratum
/// assignment of at most [`BRUTE_FORCE_MAX`] students.
pub fn brute_force_likelihood(data: &StudyData, params: &ModelParams<f64>) -> Result<f64> {
    let n = data.n_students();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::invalid(format!(
            "brute-force likelihood is limited to {BRUTE_FORCE_MAX} students, got {n}"
        )));
    }
    // log pi_g + log f_g(y) for every student and stratum, -inf if incompatible
    let mut table = Vec::with_capacity(n);
    for (i, st) in data.students().iter().enumerate() {
        let z = data.arm_of(i);
        let probs = strata_probs(data.strata_covariates(i), params.a[st.class], params)?;
        let allowed = compatible_strata(z, st.m);
        let mut row = [f64::NEG_INFINITY; 4];
        for g in PrincipalStratum::ALL {
            if allowed.contains(&g) {
                let mu = poisson_mean(
                    g,
                    z,
                    data.observed_share(i),
                    data.outcome_covariates(i),
                    params.b[st.class],
                    params,
                );
                let phi = params.phi[params.cell(g, z).cell];
                row[g.index()] = probs[g.index()].ln() + zip_log_pmf(st.y, phi, mu)?;
            }
        }
        table.push(row);
    }
    let mut terms = Vec::with_capacity(4usize.pow(n as u32));
    for code in 0..4usize.pow(n as u32) {
        let mut c = code;
        let mut total = 0.0;
        for row in &table {
            total += row[c % 4];
            c /= 4;
        }
        terms.push(total);
    }
    Ok(log_sum_exp(&terms))
}

/// Random parameters of moderate scale for `layout`.
pub fn random_params(layout: &Layout, rng: &mut impl Rng) -> ModelParams<f64> {
    let mut normal = |sd: f64| sd * rng.sample::<f64, _>(StandardNormal);
    let mut p = ModelParams::zeros(layout);
    p.strata_intercept = std::array::from_fn(|_| normal(1.0));
    for slopes in &mut p.strata_slopes {
        slopes.iter_mut().for_each(|v| *v = normal(0.5));
    }
    p.alpha = std::array::from_fn(|_| normal(0.7));
    p.beta_s.iter_mut().for_each(|v| *v = normal(1.0));
    p.beta_x.iter_mut().for_each(|v| *v = normal(0.5));
    p.sigma_a = rng.random_range(0.2..1.5);
    p.sigma_b = rng.random_range(0.2..1.5);
    let (sa, sb) = (p.sigma_a, p.sigma_b);
    p.a.iter_mut()
        .for_each(|v| *v = sa * rng.sample::<f64, _>(StandardNormal));
    p.b.iter_mut()
        .for_each(|v| *v = sb * rng.sample::<f64, _>(StandardNormal));
    p.phi = [0.0; N_CELLS].map(|_| rng.random_range(0.05..0.95));
    p
}

/// A tiny random study: up to three classes with random arms, one binary
/// and one continuous covariate, random within-class friendships.
pub fn random_small_study(n_students: usize, rng: &mut impl Rng) -> Result<StudyData> {
    if n_students == 0 {
        return Err(Error::invalid("need at least one student"));
    }
    let n_classes = rng.random_range(1..=n_students.min(3));
    let classes: Vec<ClassRecord> = (0..n_classes)
        .map(|j| ClassRecord {
            id: format!("c{j}"),
            arm: Arm::ALL[rng.random_range(0..3)],
        })
        .collect();
    let students: Vec<StudentRecord> = (0..n_students)
        .map(|i| StudentRecord {
            id: format!("s{i}"),
            class_id: format!("c{}", i % n_classes),
            m: rng.random_bool(0.5),
            y: rng.random_range(0..6),
            covariates: vec![f64::from(u8::from(rng.random_bool(0.5))), rng.sample(StandardNormal)],
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n_students {
        for k in i + 1..n_students {
            if i % n_classes == k % n_classes && rng.random_bool(0.5) {
                edges.push((format!("s{i}"), format!("s{k}")));
            }
        }
    }
    StudyData::from_records(
        classes,
        students,
        &edges,
        vec!["x_bin".into(), "x_cont".into()],
        &CovariateSelection::default(),
    )
}
