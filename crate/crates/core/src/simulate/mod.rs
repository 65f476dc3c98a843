//! Synthetic studies with known ground truth, and brute-force oracles.

mod oracle;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimands::{default_requests, Estimand, DEFAULT_CONTRASTS, DEFAULT_S_GRID};
use crate::model::{poisson_mean, strata_probs, zip_quantile, Layout, ModelParams, NamedParams, SlopeTying, N_CELLS};
use crate::posterior::{stream_rng, Stream};
use crate::strata::PrincipalStratum;
use crate::study::{Arm, ClassRecord, CovariateSelection, StudentRecord, StudyData};

pub use oracle::{
    brute_force_likelihood, oracle_estimands, random_params, random_small_study, OracleEstimates, BRUTE_FORCE_MAX,
};

/// Marginal distribution of a generated covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum CovariateDist {
    Bernoulli { p: f64 },
    Normal { mean: f64, sd: f64 },
    Poisson { mean: f64 },
}

/// A generated covariate and its true coefficients on the model scale.
///
/// Continuous columns are standardized by the study before the
/// coefficients apply, exactly as in a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateGen {
    pub name: String,
    #[serde(flatten)]
    pub dist: CovariateDist,
    /// Strata-model slopes for 011, 001, 000.
    #[serde(default)]
    pub strata_coef: [f64; 3],
    #[serde(default)]
    pub outcome_coef: f64,
}

/// True values of the non-covariate parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrueModel {
    /// Strata-model intercepts for 011, 001, 000 against 111.
    pub strata_intercept: [f64; 3],
    pub sigma_a: f64,
    pub alpha: [f64; N_CELLS],
    pub beta_s: Vec<f64>,
    pub phi: [f64; N_CELLS],
    pub sigma_b: f64,
    pub tying: SlopeTying,
}

impl Default for TrueModel {
    /// Roughly 9.5% always takers, 2% presentation compliers, 30% reward
    /// compliers and 58.5% never takers.
    fn default() -> Self {
        TrueModel {
            strata_intercept: [-1.56, 1.15, 1.82],
            sigma_a: 0.3,
            // cells: 111_1 011_1 001_1 000_1 111_2 011_2 001_2 000_2 001_3
            alpha: [0.9, 0.2, 0.1, 0.0, 0.9, 0.8, 0.1, 0.0, 0.8],
            beta_s: vec![0.6, 0.8, 0.8],
            phi: [0.2, 0.3, 0.3, 0.4, 0.2, 0.2, 0.3, 0.4, 0.2],
            sigma_b: 0.2,
            tying: SlopeTying::Shared,
        }
    }
}

/// Settings of a synthetic study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Number of classes; a multiple of 3 so arms are balanced.
    pub n_classes: usize,
    pub class_size: usize,
    /// Within-class Bernoulli edge probability.
    pub edge_probability: f64,
    /// Edge probabilities are scaled by `exp(-homophily * |x_i - x_k|)` on
    /// `homophily_covariate`.
    pub homophily: f64,
    pub homophily_covariate: Option<String>,
    pub covariates: Vec<CovariateGen>,
    pub truth: TrueModel,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_classes: 60,
            class_size: 20,
            edge_probability: 0.15,
            homophily: 0.0,
            homophily_covariate: None,
            covariates: vec![
                CovariateGen {
                    name: "male".into(),
                    dist: CovariateDist::Bernoulli { p: 0.5 },
                    strata_coef: [0.1, -0.2, 0.3],
                    outcome_coef: 0.1,
                },
                CovariateGen {
                    name: "grade".into(),
                    dist: CovariateDist::Normal { mean: 10.0, sd: 1.5 },
                    strata_coef: [0.1, 0.0, -0.2],
                    outcome_coef: 0.1,
                },
                CovariateGen {
                    name: "friends_visits".into(),
                    dist: CovariateDist::Poisson { mean: 3.0 },
                    strata_coef: [0.0, 0.0, 0.0],
                    outcome_coef: 0.15,
                },
            ],
            truth: TrueModel::default(),
            seed: 1,
        }
    }
}

impl SimConfig {
    /// The same design with every mediator slope set to zero.
    pub fn without_spillover(mut self) -> Self {
        self.truth.beta_s.iter_mut().for_each(|b| *b = 0.0);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || !self.n_classes.is_multiple_of(3) {
            return Err(Error::invalid(format!(
                "number of classes must be a positive multiple of 3, got {}",
                self.n_classes
            )));
        }
        if self.class_size == 0 {
            return Err(Error::invalid("class size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.edge_probability) {
            return Err(Error::invalid(format!(
                "edge probability {} is outside [0,1]",
                self.edge_probability
            )));
        }
        if !(self.homophily.is_finite() && self.homophily >= 0.0) {
            return Err(Error::invalid("homophily must be finite and nonnegative"));
        }
        if let Some(name) = &self.homophily_covariate {
            if !self.covariates.iter().any(|c| &c.name == name) {
                return Err(Error::invalid(format!("homophily covariate '{name}' is not generated")));
            }
        }
        for (i, c) in self.covariates.iter().enumerate() {
            if ["student_id", "class_id", "m", "y"].contains(&c.name.as_str())
                || self.covariates[..i].iter().any(|d| d.name == c.name)
            {
                return Err(Error::invalid(format!(
                    "covariate name '{}' is reserved or repeated",
                    c.name
                )));
            }
            let ok = match c.dist {
                CovariateDist::Bernoulli { p } => (0.0..=1.0).contains(&p),
                CovariateDist::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
                CovariateDist::Poisson { mean } => mean.is_finite() && mean > 0.0,
            };
            let finite = c.strata_coef.iter().all(|v| v.is_finite()) && c.outcome_coef.is_finite();
            if !ok || !finite {
                return Err(Error::invalid(format!("covariate '{}' has invalid settings", c.name)));
            }
        }
        let t = &self.truth;
        if t.beta_s.len() != t.tying.n_slopes() {
            return Err(Error::invalid(format!(
                "{} mediator slopes given, {:?} tying needs {}",
                t.beta_s.len(),
                t.tying,
                t.tying.n_slopes()
            )));
        }
        if !(t.sigma_a > 0.0 && t.sigma_b > 0.0 && t.sigma_a.is_finite() && t.sigma_b.is_finite()) {
            return Err(Error::invalid("random-intercept SDs must be positive"));
        }
        if t.phi.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::invalid("zero-inflation probabilities must lie in [0,1)"));
        }
        let finite = t
            .strata_intercept
            .iter()
            .chain(&t.alpha)
            .chain(&t.beta_s)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("true coefficients must be finite"));
        }
        Ok(())
    }
}

/// Everything the generator knows about the simulated students.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// True parameters including the realized class intercepts.
    pub params: ModelParams<f64>,
    pub layout: Layout,
    pub strata: Vec<PrincipalStratum>,
    /// Outcome uniforms; `Y(z, s)` is the ZIP quantile of these.
    pub uniforms: Vec<f64>,
    /// `S_i(z)` for every arm.
    pub mediators: Vec<[f64; 3]>,
    pub class_of: Vec<usize>,
    /// Standardized outcome covariates.
    pub x_outcome: Vec<Vec<f64>>,
    pub seed: u64,
}

impl GroundTruth {
    pub fn n_students(&self) -> usize {
        self.strata.len()
    }

    pub fn potential_treatment(&self, i: usize, z: Arm) -> bool {
        self.strata[i].potential_treatment(z)
    }

    pub fn potential_mediator(&self, i: usize, z: Arm) -> f64 {
        self.mediators[i][z.index()]
    }

    /// `Y_i(z, s)`.
    pub fn potential_outcome(&self, i: usize, z: Arm, s: f64) -> u64 {
        let p = &self.params;
        let g = self.strata[i];
        let mu = poisson_mean(g, z, s, &self.x_outcome[i], p.b[self.class_of[i]], p);
        zip_quantile(self.uniforms[i], p.phi[p.cell(g, z).cell], mu)
    }

    /// Realized stratum shares.
    pub fn shares(&self) -> [f64; 4] {
        let mut c = [0usize; 4];
        for g in &self.strata {
            c[g.index()] += 1;
        }
        c.map(|v| v as f64 / self.n_students() as f64)
    }

    /// Writes parameters, per-student potential values and the oracle
    /// estimands for `requests` as JSON.
    pub fn write_json(&self, data: &StudyData, requests: &[Estimand], s_grid: &[f64], path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct StudentTruth<'a> {
            id: &'a str,
            stratum: PrincipalStratum,
            uniform: f64,
            m: [bool; 3],
            s: [f64; 3],
            /// `Y(z, S(z'))`, rows `z`, columns `z'`.
            y_potential: [[u64; 3]; 3],
            /// `Y(z, s)` on the grid, rows `z`.
            y_grid: [Vec<u64>; 3],
        }
        #[derive(Serialize)]
        struct EstimandTruth {
            stratum: PrincipalStratum,
            label: String,
            estimand: Estimand,
            value: Option<f64>,
            count: usize,
        }
        #[derive(Serialize)]
        struct Out<'a> {
            seed: u64,
            parameters: NamedParams,
            shares: [f64; 4],
            s_grid: &'a [f64],
            estimands: Vec<EstimandTruth>,
            students: Vec<StudentTruth<'a>>,
        }
        let oracle = oracle_estimands(self, requests);
        let mut estimands = Vec::with_capacity(requests.len() * 4);
        for (r, e) in requests.iter().enumerate() {
            for g in PrincipalStratum::ALL {
                let v = oracle.values[r][g.index()];
                estimands.push(EstimandTruth {
                    stratum: g,
                    label: e.label(),
                    estimand: *e,
                    value: (!v.is_nan()).then_some(v),
                    count: oracle.counts[g.index()],
                });
            }
        }
        let students = (0..self.n_students())
            .map(|i| StudentTruth {
                id: &data.students()[i].id,
                stratum: self.strata[i],
                uniform: self.uniforms[i],
                m: Arm::ALL.map(|z| self.potential_treatment(i, z)),
                s: self.mediators[i],
                y_potential: Arm::ALL
                    .map(|z| Arm::ALL.map(|w| self.potential_outcome(i, z, self.potential_mediator(i, w)))),
                y_grid: Arm::ALL.map(|z| s_grid.iter().map(|&s| self.potential_outcome(i, z, s)).collect()),
            })
            .collect();
        let out = Out {
            seed: self.seed,
            parameters: NamedParams::from_params(&self.layout, &self.params),
            shares: self.shares(),
            s_grid,
            estimands,
            students,
        };
        fs::write(path, serde_json::to_string_pretty(&out)?)
            .map_err(|e| Error::io(format!("write {}", path.display()), e))
    }
}

fn draw_covariate(dist: CovariateDist, rng: &mut impl Rng) -> f64 {
    match dist {
        CovariateDist::Bernoulli { p } => f64::from(u8::from(rng.random_bool(p))),
        CovariateDist::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
        CovariateDist::Poisson { mean } => Poisson::new(mean).expect("validated mean").sample(rng),
    }
}

fn draw_stratum(p: [f64; 4], u: f64) -> PrincipalStratum {
    let mut acc = 0.0;
    for (g, pg) in p.iter().enumerate() {
        acc += pg;
        if u < acc {
            return PrincipalStratum::from_index(g);
        }
    }
    PrincipalStratum::NeverTaker
}

/// Generates a study and its ground truth. Deterministic given the seed.
pub fn generate(config: &SimConfig) -> Result<(StudyData, GroundTruth)> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, Stream::Simulation);
    let t = &config.truth;
    let n_classes = config.n_classes;

    let mut arms: Vec<Arm> = (0..n_classes).map(|j| Arm::ALL[j % 3]).collect();
    arms.shuffle(&mut rng);
    let normal = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);
    let a: Vec<f64> = (0..n_classes).map(|_| t.sigma_a * normal(&mut rng)).collect();
    let b: Vec<f64> = (0..n_classes).map(|_| t.sigma_b * normal(&mut rng)).collect();

    let classes: Vec<ClassRecord> = arms
        .iter()
        .enumerate()
        .map(|(j, &arm)| ClassRecord {
            id: format!("c{j:03}"),
            arm,
        })
        .collect();
    let mut students = Vec::with_capacity(n_classes * config.class_size);
    for class in &classes {
        for k in 0..config.class_size {
            students.push(StudentRecord {
                id: format!("{}s{k:02}", class.id),
                class_id: class.id.clone(),
                m: false,
                y: 0,
                covariates: config
                    .covariates
                    .iter()
                    .map(|c| draw_covariate(c.dist, &mut rng))
                    .collect(),
            });
        }
    }
    let homophily_col = config
        .homophily_covariate
        .as_ref()
        .and_then(|name| config.covariates.iter().position(|c| &c.name == name));
    let mut edges = Vec::new();
    for j in 0..n_classes {
        let members = &students[j * config.class_size..(j + 1) * config.class_size];
        for (x, sx) in members.iter().enumerate() {
            for sy in &members[x + 1..] {
                let scale = homophily_col.map_or(1.0, |c| {
                    (-config.homophily * (sx.covariates[c] - sy.covariates[c]).abs()).exp()
                });
                if rng.random_bool((config.edge_probability * scale).clamp(0.0, 1.0)) {
                    edges.push((sx.id.clone(), sy.id.clone()));
                }
            }
        }
    }
    let names: Vec<String> = config.covariates.iter().map(|c| c.name.clone()).collect();
    let selection = CovariateSelection::default();
    let design = StudyData::from_records(classes.clone(), students.clone(), &edges, names.clone(), &selection)?;

    let layout = Layout::for_study(&design, t.tying);
    let params = ModelParams {
        strata_intercept: t.strata_intercept,
        strata_slopes: std::array::from_fn(|r| config.covariates.iter().map(|c| c.strata_coef[r]).collect()),
        sigma_a: t.sigma_a,
        a,
        alpha: t.alpha,
        beta_s: t.beta_s.clone(),
        beta_x: config.covariates.iter().map(|c| c.outcome_coef).collect(),
        phi: t.phi,
        sigma_b: t.sigma_b,
        b,
        tying: t.tying,
    };

    let n = design.n_students();
    let class_of: Vec<usize> = design.students().iter().map(|s| s.class).collect();
    let strata = (0..n)
        .map(|i| {
            let p = strata_probs(design.strata_covariates(i), params.a[class_of[i]], &params)?;
            Ok(draw_stratum(p, rng.random()))
        })
        .collect::<Result<Vec<_>>>()?;
    let network = design.network();
    let mediators: Vec<[f64; 3]> = (0..n)
        .map(|i| Arm::ALL.map(|z| network.share(i, |k| strata[k].potential_treatment(z))))
        .collect();
    let uniforms: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let truth = GroundTruth {
        params,
        layout,
        strata,
        uniforms,
        mediators,
        class_of,
        x_outcome: (0..n).map(|i| design.outcome_covariates(i).to_vec()).collect(),
        seed: config.seed,
    };

    for (i, st) in students.iter_mut().enumerate() {
        let z = design.arm_of(i);
        st.m = truth.potential_treatment(i, z);
        st.y = truth.potential_outcome(i, z, truth.potential_mediator(i, z));
    }
    let data = StudyData::from_records(classes, students, &edges, names, &selection)?;
    Ok((data, truth))
}

/// Writes the study CSVs and `truth.json` into `dir`.
pub fn write_simulation(data: &StudyData, truth: &GroundTruth, dir: &Path) -> Result<()> {
    crate::study::write_study(data, dir)?;
    let requests = default_requests(&DEFAULT_CONTRASTS, &DEFAULT_S_GRID);
    truth.write_json(data, &requests, &DEFAULT_S_GRID, &dir.join("truth.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            n_classes: 6,
            class_size: 8,
            edge_probability: 0.3,
            ..SimConfig::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (d1, t1) = generate(&small()).unwrap();
        let (d2, t2) = generate(&small()).unwrap();
        assert_eq!(t1, t2);
        let ys = |d: &StudyData| d.students().iter().map(|s| (s.y, s.m)).collect::<Vec<_>>();
        assert_eq!(ys(&d1), ys(&d2));
        let (d3, _) = generate(&SimConfig { seed: 2, ..small() }).unwrap();
        assert_ne!(ys(&d1), ys(&d3));
    }

    #[test]
    fn balanced_arms_and_consistent_mediator() {
        let (data, truth) = generate(&small()).unwrap();
        for arm in Arm::ALL {
            assert_eq!(data.classes().iter().filter(|c| c.arm == arm).count(), 2);
        }
        for i in 0..data.n_students() {
            let z = data.arm_of(i);
            assert_eq!(data.observed_share(i), truth.potential_mediator(i, z));
            assert_eq!(data.students()[i].m, truth.potential_treatment(i, z));
            assert_eq!(
                data.students()[i].y,
                truth.potential_outcome(i, z, data.observed_share(i))
            );
        }
    }

    #[test]
    fn monotone_potential_treatments() {
        let (_, truth) = generate(&small()).unwrap();
        for i in 0..truth.n_students() {
            let m = Arm::ALL.map(|z| truth.potential_treatment(i, z));
            assert!(m[0] <= m[1] && m[1] <= m[2]);
            let s = truth.mediators[i];
            assert!(s[0] <= s[1] && s[1] <= s[2]);
        }
    }

    #[test]
    fn never_taker_truth_has_no_uptake() {
        let mut cfg = small();
        cfg.truth.strata_intercept = [-40.0, -40.0, 40.0];
        let (data, truth) = generate(&cfg).unwrap();
        assert!(data.students().iter().all(|s| !s.m));
        assert_eq!(truth.shares(), [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(generate(&SimConfig {
            n_classes: 4,
            ..small()
        })
        .is_err());
        assert!(generate(&SimConfig {
            edge_probability: 1.5,
            ..small()
        })
        .is_err());
        let mut cfg = small();
        cfg.truth.beta_s.push(0.0);
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.homophily_covariate = Some("height".into());
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn homophily_thins_cross_group_edges() {
        let cfg = SimConfig {
            n_classes: 30,
            class_size: 20,
            edge_probability: 0.5,
            homophily: 5.0,
            homophily_covariate: Some("male".into()),
            ..SimConfig::default()
        };
        let (data, _) = generate(&cfg).unwrap();
        let male = |i: usize| data.students()[i].covariates[0];
        let (same, cross) =
            data.network().edges().fold(
                (0, 0),
                |(s, c), (a, b)| if male(a) == male(b) { (s + 1, c) } else { (s, c + 1) },
            );
        assert!(cross * 20 < same, "same {same} cross {cross}");
    }

    #[test]
    fn writes_truth_json() {
        let dir = tempfile::tempdir().unwrap();
        let (data, truth) = generate(&small()).unwrap();
        write_simulation(&data, &truth, dir.path()).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("truth.json")).unwrap()).unwrap();
        assert_eq!(v["students"].as_array().unwrap().len(), 48);
        assert!(dir.path().join("students.csv").exists());
    }
}
