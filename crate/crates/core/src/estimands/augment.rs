//! Per-draw imputation of latent strata, potential mediators and
//! counterfactual outcomes.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{conditional_uniform, poisson_mean, strata_log_probs, zip_log_pmf, zip_quantile, ModelParams};
use crate::scalar::log_sum_exp;
use crate::strata::{compatible_strata, PrincipalStratum};
use crate::study::{Arm, FriendshipNetwork, StudyData};

/// Posterior membership weights of one student over its compatible strata.
pub fn strata_weights(
    data: &StudyData,
    params: &ModelParams<f64>,
    student: usize,
) -> Result<Vec<(PrincipalStratum, f64)>> {
    let st = &data.students()[student];
    let arm = data.arm_of(student);
    let log_pi = strata_log_probs(data.strata_covariates(student), params.a[st.class], params);
    let s = data.observed_share(student);
    let x = data.outcome_covariates(student);
    let b = params.b[st.class];
    let comp = compatible_strata(arm, st.m);
    let mut lw = Vec::with_capacity(comp.len());
    for &g in comp {
        let mu = poisson_mean(g, arm, s, x, b, params);
        let cell = params.cell(g, arm);
        let lf = zip_log_pmf(st.y, params.phi[cell.cell], mu).unwrap_or(f64::NEG_INFINITY);
        lw.push(log_pi[g.index()] + lf);
    }
    let total = log_sum_exp(&lw);
    if !total.is_finite() {
        return Err(Error::invalid(format!(
            "student '{}' has zero posterior weight on every compatible stratum",
            st.id
        )));
    }
    Ok(comp.iter().zip(lw).map(|(&g, l)| (g, (l - total).exp())).collect())
}

fn draw_categorical(weights: &[(PrincipalStratum, f64)], u: f64) -> PrincipalStratum {
    let mut acc = 0.0;
    for &(g, w) in weights {
        acc += w;
        if u < acc {
            return g;
        }
    }
    weights[weights.len() - 1].0
}

/// Draws each student's stratum from its posterior membership weights.
pub fn impute_strata<R: Rng>(
    data: &StudyData,
    params: &ModelParams<f64>,
    rng: &mut R,
) -> Result<Vec<PrincipalStratum>> {
    (0..data.n_students())
        .map(|i| {
            let w = strata_weights(data, params, i)?;
            Ok(if w.len() == 1 {
                w[0].0
            } else {
                draw_categorical(&w, rng.random())
            })
        })
        .collect()
}

/// Potential mediator `S(z)` of every student given imputed strata.
pub fn potential_mediator(strata: &[PrincipalStratum], network: &FriendshipNetwork, z: Arm) -> Vec<f64> {
    (0..network.n_nodes())
        .map(|i| network.share(i, |k| strata[k].potential_treatment(z)))
        .collect()
}

/// A single counterfactual outcome draw. Returns the observed outcome when
/// `(z, s)` is the student's realized arm and mediator.
pub fn impute_outcome<R: Rng>(
    data: &StudyData,
    params: &ModelParams<f64>,
    student: usize,
    g: PrincipalStratum,
    z: Arm,
    s: f64,
    rng: &mut R,
) -> u64 {
    let st = &data.students()[student];
    if z == data.arm_of(student) && s.to_bits() == data.observed_share(student).to_bits() {
        return st.y;
    }
    let mu = poisson_mean(g, z, s, data.outcome_covariates(student), params.b[st.class], params);
    zip_quantile(rng.random(), params.phi[params.cell(g, z).cell], mu)
}

/// Identity of an outcome distribution after tying: cell, slope and mediator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct OutcomeKey {
    cell: usize,
    slope: usize,
    s_bits: u64,
}

/// One posterior draw with all latent quantities imputed.
///
/// Counterfactual outcomes share one uniform per student (the comonotone
/// coupling), drawn conditionally on the observed outcome. Any potential
/// outcome with the same tied distribution as the realized one equals the
/// observed outcome.
#[derive(Debug, Clone)]
pub struct AugmentedDraw<'a> {
    data: &'a StudyData,
    params: &'a ModelParams<f64>,
    strata: Vec<PrincipalStratum>,
    mediators: [Vec<f64>; 3],
    uniforms: Vec<f64>,
    realized: Vec<OutcomeKey>,
}

impl<'a> AugmentedDraw<'a> {
    pub fn new<R: Rng>(data: &'a StudyData, params: &'a ModelParams<f64>, rng: &mut R) -> Result<Self> {
        let strata = impute_strata(data, params, rng)?;
        let mut uniforms = Vec::with_capacity(strata.len());
        for (i, &g) in strata.iter().enumerate() {
            let st = &data.students()[i];
            let arm = data.arm_of(i);
            let mu = poisson_mean(
                g,
                arm,
                data.observed_share(i),
                data.outcome_covariates(i),
                params.b[st.class],
                params,
            );
            let phi = params.phi[params.cell(g, arm).cell];
            uniforms.push(conditional_uniform(rng.random(), st.y, phi, mu));
        }
        Ok(Self::from_parts(data, params, strata, uniforms))
    }

    /// Builds a draw from given strata and coupling uniforms.
    pub fn from_parts(
        data: &'a StudyData,
        params: &'a ModelParams<f64>,
        strata: Vec<PrincipalStratum>,
        uniforms: Vec<f64>,
    ) -> Self {
        let mediators = Arm::ALL.map(|z| potential_mediator(&strata, data.network(), z));
        let realized = (0..strata.len())
            .map(|i| {
                let arm = data.arm_of(i);
                let cell = params.cell(strata[i], arm);
                OutcomeKey {
                    cell: cell.cell,
                    slope: cell.slope,
                    s_bits: data.observed_share(i).to_bits(),
                }
            })
            .collect();
        AugmentedDraw {
            data,
            params,
            strata,
            mediators,
            uniforms,
            realized,
        }
    }

    pub fn data(&self) -> &StudyData {
        self.data
    }

    pub fn strata(&self) -> &[PrincipalStratum] {
        &self.strata
    }

    /// `S_i(z)`.
    pub fn mediator(&self, student: usize, z: Arm) -> f64 {
        self.mediators[z.index()][student]
    }

    pub fn potential_treatment(&self, student: usize, z: Arm) -> bool {
        self.strata[student].potential_treatment(z)
    }

    /// `Y_i(z, s)` under the imputed stratum.
    pub fn outcome(&self, student: usize, z: Arm, s: f64) -> u64 {
        let g = self.strata[student];
        let cell = self.params.cell(g, z);
        let key = OutcomeKey {
            cell: cell.cell,
            slope: cell.slope,
            s_bits: s.to_bits(),
        };
        if key == self.realized[student] {
            return self.data.students()[student].y;
        }
        let st = &self.data.students()[student];
        let mu = poisson_mean(
            g,
            z,
            s,
            self.data.outcome_covariates(student),
            self.params.b[st.class],
            self.params,
        );
        zip_quantile(self.uniforms[student], self.params.phi[cell.cell], mu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Layout, SlopeTying};
    use crate::study::{ClassRecord, CovariateSelection, StudentRecord};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> StudyData {
        let classes = vec![
            ClassRecord {
                id: "c1".into(),
                arm: Arm::Flyer,
            },
            ClassRecord {
                id: "c2".into(),
                arm: Arm::Presentation,
            },
            ClassRecord {
                id: "c3".into(),
                arm: Arm::Reward,
            },
        ];
        let rec = |id: &str, c: &str, m: bool, y: u64| StudentRecord {
            id: id.into(),
            class_id: c.into(),
            m,
            y,
            covariates: vec![],
        };
        let students = vec![
            rec("a", "c1", true, 2),
            rec("b", "c1", false, 0),
            rec("c", "c2", false, 1),
            rec("d", "c2", true, 3),
            rec("e", "c3", false, 0),
            rec("f", "c3", true, 4),
        ];
        let edges = vec![
            ("a".into(), "b".into()),
            ("c".into(), "d".into()),
            ("e".into(), "f".into()),
        ];
        StudyData::from_records(classes, students, &edges, vec![], &CovariateSelection::default()).unwrap()
    }

    fn params(data: &StudyData) -> ModelParams<f64> {
        let layout = Layout::for_study(data, SlopeTying::Shared);
        let mut p = ModelParams::zeros(&layout);
        p.strata_intercept = [-0.5, 0.8, 1.2];
        p.alpha = [0.2, -0.1, 0.4, 0.0, 0.3, 0.1, -0.2, 0.5, 0.9];
        p.beta_s = vec![0.3, -0.6, 1.1];
        p.phi = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.2, 0.15];
        p
    }

    #[test]
    fn single_stratum_cells_are_certain() {
        let data = tiny();
        let p = params(&data);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let g = impute_strata(&data, &p, &mut rng).unwrap();
            assert_eq!(g[0], PrincipalStratum::AlwaysTaker);
            assert_eq!(g[4], PrincipalStratum::NeverTaker);
        }
    }

    #[test]
    fn two_stratum_weights_match_hand_bayes() {
        let data = tiny();
        let p = params(&data);
        // student c: presentation, m = 0, y = 1, friend d treated so s = 1
        let w = strata_weights(&data, &p, 2).unwrap();
        let eta = [0.0f64, -0.5, 0.8, 1.2];
        let den: f64 = eta.iter().map(|e| e.exp()).sum();
        let pi = |k: usize| eta[k].exp() / den;
        let f = |cell: usize| {
            let mu = (p.alpha[cell] + p.beta_s[1] * 1.0f64).exp();
            (1.0 - p.phi[cell]) * mu * (-mu).exp()
        };
        let rc = pi(2) * f(6);
        let nt = pi(3) * f(7);
        assert_eq!(w[0].0, PrincipalStratum::RewardComplier);
        assert!((w[0].1 - rc / (rc + nt)).abs() < 1e-12);
        assert!((w[1].1 - nt / (rc + nt)).abs() < 1e-12);
    }

    #[test]
    fn mediator_examples() {
        use PrincipalStratum::*;
        let net = FriendshipNetwork::from_pairs(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]);
        let g = [
            NeverTaker,
            AlwaysTaker,
            PresentationComplier,
            RewardComplier,
            NeverTaker,
        ];
        assert_eq!(potential_mediator(&g, &net, Arm::Presentation)[0], 0.5);
        let g2 = [NeverTaker, AlwaysTaker, RewardComplier, NeverTaker, NeverTaker];
        let net2 = FriendshipNetwork::from_pairs(3, &[(0, 1), (0, 2)]);
        assert_eq!(potential_mediator(&g2[..3], &net2, Arm::Flyer)[0], 0.5);
        let all_nt = [NeverTaker; 5];
        for z in Arm::ALL {
            assert!(potential_mediator(&all_nt, &net, z).iter().all(|&s| s == 0.0));
        }
    }

    #[test]
    fn realized_outcome_is_observed() {
        let data = tiny();
        let p = params(&data);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let aug = AugmentedDraw::new(&data, &p, &mut rng).unwrap();
            for i in 0..data.n_students() {
                let z = data.arm_of(i);
                assert_eq!(aug.mediator(i, z), data.observed_share(i));
                assert_eq!(aug.outcome(i, z, aug.mediator(i, z)), data.students()[i].y);
                assert_eq!(aug.potential_treatment(i, z), data.students()[i].m);
                assert!(aug.mediator(i, Arm::Flyer) <= aug.mediator(i, Arm::Presentation));
                assert!(aug.mediator(i, Arm::Presentation) <= aug.mediator(i, Arm::Reward));
            }
        }
    }

    #[test]
    fn impute_outcome_moments_and_anchoring() {
        let data = tiny();
        let mut p = params(&data);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(
            impute_outcome(
                &data,
                &p,
                3,
                PrincipalStratum::AlwaysTaker,
                Arm::Presentation,
                0.0,
                &mut rng
            ),
            3
        );
        let (g, z, s) = (PrincipalStratum::NeverTaker, Arm::Flyer, 0.3);
        let mu = poisson_mean(g, z, s, &[], 0.0, &p);
        let phi = p.phi[p.cell(g, z).cell];
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| impute_outcome(&data, &p, 2, g, z, s, &mut rng) as f64)
            .collect();
        let m = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((m - (1.0 - phi) * mu).abs() < 3.0 * (var / n as f64).sqrt());
        p.phi = [1.0; 9];
        for _ in 0..100 {
            assert_eq!(impute_outcome(&data, &p, 2, g, z, s, &mut rng), 0);
        }
    }
}
