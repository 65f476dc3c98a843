//! Study data: classes, students, the within-class friendship network and
//! the covariate design used by the strata and outcome models.

mod io;
mod network;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_study, write_study};
pub use network::FriendshipNetwork;

/// Encouragement level assigned to a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Arm {
    Flyer,
    Presentation,
    Reward,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Flyer, Arm::Presentation, Arm::Reward];

    /// Level on the 1..=3 scale used in the input files.
    pub fn level(self) -> u8 {
        self.index() as u8 + 1
    }

    /// Zero-based index.
    pub fn index(self) -> usize {
        match self {
            Arm::Flyer => 0,
            Arm::Presentation => 1,
            Arm::Reward => 2,
        }
    }

    pub fn from_level(level: u8) -> Option<Arm> {
        match level {
            1 => Some(Arm::Flyer),
            2 => Some(Arm::Presentation),
            3 => Some(Arm::Reward),
            _ => None,
        }
    }
}

impl From<Arm> for u8 {
    fn from(arm: Arm) -> u8 {
        arm.level()
    }
}

impl TryFrom<u8> for Arm {
    type Error = String;

    fn try_from(level: u8) -> std::result::Result<Self, Self::Error> {
        Arm::from_level(level).ok_or_else(|| format!("encouragement level {level} not in 1..=3"))
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.level())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Student {
    pub id: String,
    pub class_id: String,
    /// Index into [`StudyData::classes`].
    pub class: usize,
    pub m: bool,
    pub y: u64,
    /// Raw covariates in the column order of [`CovariateSpec::names`].
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRoom {
    pub id: String,
    pub arm: Arm,
    /// Indices into [`StudyData::students`].
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Binary,
    Continuous,
}

/// Affine map applied to a continuous covariate before it enters a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub sd: f64,
}

impl Standardizer {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.sd
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

/// Names, kinds and model inclusion of the covariate columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub names: Vec<String>,
    pub kinds: Vec<CovariateKind>,
    /// Columns entering the principal strata model.
    pub strata_mask: Vec<bool>,
    /// Columns entering the outcome model.
    pub outcome_mask: Vec<bool>,
    /// Standardization of continuous columns, `None` for binary ones.
    pub standardization: Vec<Option<Standardizer>>,
}

impl CovariateSpec {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn strata_names(&self) -> Vec<String> {
        masked(&self.names, &self.strata_mask)
    }

    pub fn outcome_names(&self) -> Vec<String> {
        masked(&self.names, &self.outcome_mask)
    }

    fn design_row(&self, raw: &[f64], mask: &[bool]) -> Vec<f64> {
        raw.iter()
            .zip(mask)
            .zip(&self.standardization)
            .filter(|((_, &keep), _)| keep)
            .map(|((&x, _), st)| st.map_or(x, |s| s.apply(x)))
            .collect()
    }
}

fn masked(names: &[String], mask: &[bool]) -> Vec<String> {
    names
        .iter()
        .zip(mask)
        .filter(|(_, &keep)| keep)
        .map(|(n, _)| n.clone())
        .collect()
}

/// Which covariate columns enter which model. `None` selects every column.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateSelection {
    #[serde(default)]
    pub strata: Option<Vec<String>>,
    #[serde(default)]
    pub outcome: Option<Vec<String>>,
}

impl CovariateSelection {
    fn mask(names: &[String], chosen: &Option<Vec<String>>, model: &str) -> Result<Vec<bool>> {
        match chosen {
            None => Ok(vec![true; names.len()]),
            Some(list) => {
                for c in list {
                    if !names.contains(c) {
                        return Err(Error::validation(format!(
                            "{model} covariate '{c}' is not a column of the student file"
                        )));
                    }
                }
                Ok(names.iter().map(|n| list.contains(n)).collect())
            }
        }
    }
}

/// Validated, immutable study.
#[derive(Debug, Clone)]
pub struct StudyData {
    classes: Vec<ClassRoom>,
    students: Vec<Student>,
    network: FriendshipNetwork,
    covariates: CovariateSpec,
    x_strata: Vec<Vec<f64>>,
    x_outcome: Vec<Vec<f64>>,
    s_obs: Vec<f64>,
    student_index: HashMap<String, usize>,
}

/// Class row before validation.
#[derive(Debug, Clone)]
pub struct ClassRecord {
    pub id: String,
    pub arm: Arm,
}

/// Student row before validation.
#[derive(Debug, Clone)]
pub struct StudentRecord {
    pub id: String,
    pub class_id: String,
    pub m: bool,
    pub y: u64,
    pub covariates: Vec<f64>,
}

impl StudyData {
    /// Builds and validates a study from in-memory records.
    ///
    /// Edges are given as pairs of student ids; duplicates and reversed
    /// duplicates collapse to one undirected edge.
    pub fn from_records(
        classes: Vec<ClassRecord>,
        students: Vec<StudentRecord>,
        edges: &[(String, String)],
        covariate_names: Vec<String>,
        selection: &CovariateSelection,
    ) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::validation("no classes"));
        }
        if students.is_empty() {
            return Err(Error::validation("no students"));
        }
        let mut class_index = HashMap::with_capacity(classes.len());
        let mut rooms = Vec::with_capacity(classes.len());
        for c in classes {
            if class_index.insert(c.id.clone(), rooms.len()).is_some() {
                return Err(Error::validation(format!("duplicate class id '{}'", c.id)));
            }
            rooms.push(ClassRoom {
                id: c.id,
                arm: c.arm,
                members: Vec::new(),
            });
        }

        let k = covariate_names.len();
        let mut student_index = HashMap::with_capacity(students.len());
        let mut out = Vec::with_capacity(students.len());
        for s in students {
            let Some(&class) = class_index.get(&s.class_id) else {
                return Err(Error::validation(format!(
                    "student '{}' references unknown class '{}'",
                    s.id, s.class_id
                )));
            };
            if s.covariates.len() != k {
                return Err(Error::validation(format!(
                    "student '{}' has {} covariates, expected {k}",
                    s.id,
                    s.covariates.len()
                )));
            }
            if let Some(bad) = s.covariates.iter().position(|x| !x.is_finite()) {
                return Err(Error::validation(format!(
                    "student '{}' covariate '{}' is not finite",
                    s.id, covariate_names[bad]
                )));
            }
            let idx = out.len();
            if student_index.insert(s.id.clone(), idx).is_some() {
                return Err(Error::validation(format!("duplicate student id '{}'", s.id)));
            }
            rooms[class].members.push(idx);
            out.push(Student {
                id: s.id,
                class_id: s.class_id,
                class,
                m: s.m,
                y: s.y,
                covariates: s.covariates,
            });
        }
        if let Some(empty) = rooms.iter().find(|c| c.members.is_empty()) {
            return Err(Error::validation(format!("class '{}' has no students", empty.id)));
        }

        let mut pairs = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            let lookup = |id: &String| {
                student_index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::validation(format!("edge references unknown student '{id}'")))
            };
            let (ia, ib) = (lookup(a)?, lookup(b)?);
            if ia == ib {
                return Err(Error::validation(format!("self-loop on student '{a}'")));
            }
            if out[ia].class != out[ib].class {
                return Err(Error::validation(format!(
                    "edge ({a},{b}) connects students of different classes ('{}' and '{}')",
                    out[ia].class_id, out[ib].class_id
                )));
            }
            pairs.push((ia, ib));
        }
        let network = FriendshipNetwork::from_pairs(out.len(), &pairs);

        let kinds: Vec<CovariateKind> = (0..k)
            .map(|c| {
                if out.iter().all(|s| s.covariates[c] == 0.0 || s.covariates[c] == 1.0) {
                    CovariateKind::Binary
                } else {
                    CovariateKind::Continuous
                }
            })
            .collect();
        let standardization = (0..k)
            .map(|c| match kinds[c] {
                CovariateKind::Binary => None,
                CovariateKind::Continuous => Some(standardizer(out.iter().map(|s| s.covariates[c]))),
            })
            .collect();
        let covariates = CovariateSpec {
            strata_mask: CovariateSelection::mask(&covariate_names, &selection.strata, "strata")?,
            outcome_mask: CovariateSelection::mask(&covariate_names, &selection.outcome, "outcome")?,
            names: covariate_names,
            kinds,
            standardization,
        };

        let x_strata = out
            .iter()
            .map(|s| covariates.design_row(&s.covariates, &covariates.strata_mask))
            .collect();
        let x_outcome = out
            .iter()
            .map(|s| covariates.design_row(&s.covariates, &covariates.outcome_mask))
            .collect();
        let s_obs = (0..out.len()).map(|i| network.share(i, |k| out[k].m)).collect();

        let data = StudyData {
            classes: rooms,
            students: out,
            network,
            covariates,
            x_strata,
            x_outcome,
            s_obs,
            student_index,
        };
        let isolated = data.network.isolated().count();
        if isolated > 0 {
            log::warn!("{isolated} student(s) have no friends; their neighbor share is set to 0");
        }
        Ok(data)
    }

    pub fn classes(&self) -> &[ClassRoom] {
        &self.classes
    }

    pub fn students(&self) -> &[Student] {
        &self.students
    }

    pub fn network(&self) -> &FriendshipNetwork {
        &self.network
    }

    pub fn covariates(&self) -> &CovariateSpec {
        &self.covariates
    }

    pub fn n_students(&self) -> usize {
        self.students.len()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn arm_of(&self, student: usize) -> Arm {
        self.classes[self.students[student].class].arm
    }

    pub fn student_index(&self, id: &str) -> Option<usize> {
        self.student_index.get(id).copied()
    }

    /// Standardized strata-model covariates of a student.
    pub fn strata_covariates(&self, student: usize) -> &[f64] {
        &self.x_strata[student]
    }

    /// Standardized outcome-model covariates of a student.
    pub fn outcome_covariates(&self, student: usize) -> &[f64] {
        &self.x_outcome[student]
    }

    /// Observed share of friends who took up the treatment.
    pub fn observed_share(&self, student: usize) -> f64 {
        self.s_obs[student]
    }

    /// Share of a student's friends with `m = 1` under the given assignment.
    ///
    /// Isolated students get 0 and a warning.
    pub fn neighbor_share(&self, m_values: &HashMap<String, bool>, student_id: &str) -> Result<f64> {
        let i = self
            .student_index(student_id)
            .ok_or_else(|| Error::invalid(format!("unknown student '{student_id}'")))?;
        if self.network.degree(i) == 0 {
            log::warn!("student '{student_id}' has no friends; neighbor share set to 0");
            return Ok(0.0);
        }
        let mut visits = 0usize;
        for &k in self.network.neighbors(i) {
            let id = &self.students[k].id;
            match m_values.get(id) {
                Some(&m) => visits += usize::from(m),
                None => return Err(Error::invalid(format!("no treatment value for friend '{id}'"))),
            }
        }
        Ok(visits as f64 / self.network.degree(i) as f64)
    }

    /// Ratio estimator for a per-student mean under cluster sampling:
    /// the sum of all values over the sum of class sizes.
    pub fn cluster_ratio_mean(&self, values: &HashMap<String, f64>) -> Result<f64> {
        let mut total = 0.0;
        let mut size = 0usize;
        for class in &self.classes {
            for &i in &class.members {
                let id = &self.students[i].id;
                total += values
                    .get(id)
                    .ok_or_else(|| Error::invalid(format!("no value for student '{id}'")))?;
            }
            size += class.members.len();
        }
        if size == 0 {
            return Err(Error::invalid("empty data"));
        }
        Ok(total / size as f64)
    }

    /// Ratio of class totals to class counts, i.e. students per class.
    pub fn students_per_class(&self) -> f64 {
        self.students.len() as f64 / self.classes.len() as f64
    }

    pub fn validation_report(&self) -> ValidationReport {
        let arms = Arm::ALL
            .iter()
            .map(|&arm| {
                let classes: Vec<&ClassRoom> = self.classes.iter().filter(|c| c.arm == arm).collect();
                let members = || classes.iter().flat_map(|c| c.members.iter().copied());
                let students = members().count();
                let treated = members().filter(|&i| self.students[i].m).count();
                let y_total: u64 = members().map(|i| self.students[i].y).sum();
                ArmSummary {
                    arm,
                    classes: classes.len(),
                    students,
                    treated,
                    mean_outcome: if students > 0 {
                        y_total as f64 / students as f64
                    } else {
                        0.0
                    },
                }
            })
            .collect();
        let mut degree_distribution = BTreeMap::new();
        for i in 0..self.students.len() {
            *degree_distribution.entry(self.network.degree(i)).or_insert(0) += 1;
        }
        let isolated_ids: Vec<String> = self.network.isolated().map(|i| self.students[i].id.clone()).collect();
        ValidationReport {
            n_classes: self.classes.len(),
            n_students: self.students.len(),
            n_edges: self.network.n_edges(),
            arms,
            isolated_students: isolated_ids.len(),
            isolated_ids,
            degree_distribution,
            covariates: self.covariates.clone(),
        }
    }
}

fn standardizer(values: impl Iterator<Item = f64>) -> Standardizer {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    Standardizer { mean, sd }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub classes: usize,
    pub students: usize,
    pub treated: usize,
    pub mean_outcome: f64,
}

/// Summary emitted by `validate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_classes: usize,
    pub n_students: usize,
    pub n_edges: usize,
    pub arms: Vec<ArmSummary>,
    pub isolated_students: usize,
    pub isolated_ids: Vec<String>,
    pub degree_distribution: BTreeMap<usize, usize>,
    pub covariates: CovariateSpec,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(edges: &[(&str, &str)]) -> Result<StudyData> {
        let classes = vec![
            ClassRecord {
                id: "c1".into(),
                arm: Arm::Flyer,
            },
            ClassRecord {
                id: "c2".into(),
                arm: Arm::Reward,
            },
        ];
        let students = ["a", "b", "c", "d", "e", "f"]
            .iter()
            .enumerate()
            .map(|(i, id)| StudentRecord {
                id: (*id).into(),
                class_id: if i < 5 { "c1".into() } else { "c2".into() },
                m: i == 1,
                y: i as u64,
                covariates: vec![(i % 2) as f64, i as f64 * 1.5],
            })
            .collect();
        let edges: Vec<(String, String)> = edges.iter().map(|(a, b)| ((*a).into(), (*b).into())).collect();
        StudyData::from_records(
            classes,
            students,
            &edges,
            vec!["male".into(), "gpa".into()],
            &CovariateSelection::default(),
        )
    }

    #[test]
    fn neighbor_share_quarter() {
        let data = tiny(&[("a", "b"), ("a", "c"), ("a", "d"), ("e", "a")]).unwrap();
        let m: HashMap<String, bool> = data.students().iter().map(|s| (s.id.clone(), s.m)).collect();
        assert_eq!(data.neighbor_share(&m, "a").unwrap(), 0.25);
        let all: HashMap<String, bool> = m.keys().map(|k| (k.clone(), true)).collect();
        assert_eq!(data.neighbor_share(&all, "a").unwrap(), 1.0);
        assert_eq!(data.neighbor_share(&m, "f").unwrap(), 0.0);
        assert!(data.neighbor_share(&m, "zz").is_err());
        assert_eq!(data.observed_share(0), 0.25);
    }

    #[test]
    fn cross_class_edge_rejected() {
        let err = tiny(&[("a", "f")]).unwrap_err().to_string();
        assert!(err.contains("(a,f)"), "{err}");
    }

    #[test]
    fn self_loop_rejected() {
        assert!(tiny(&[("a", "a")]).is_err());
    }

    #[test]
    fn duplicates_collapse() {
        let data = tiny(&[("a", "b"), ("b", "a"), ("a", "b")]).unwrap();
        assert_eq!(data.network().n_edges(), 1);
    }

    #[test]
    fn kinds_and_standardization() {
        let data = tiny(&[]).unwrap();
        let spec = data.covariates();
        assert_eq!(spec.kinds, vec![CovariateKind::Binary, CovariateKind::Continuous]);
        assert!(spec.standardization[0].is_none());
        let col: Vec<f64> = (0..data.n_students()).map(|i| data.strata_covariates(i)[1]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        assert!(mean.abs() < 1e-12);
        let st = spec.standardization[1].unwrap();
        assert!((st.invert(col[3]) - 4.5).abs() < 1e-12);
    }

    #[test]
    fn report_counts_isolated() {
        let data = tiny(&[("a", "b")]).unwrap();
        let report = data.validation_report();
        assert_eq!(report.isolated_students, 4);
        assert_eq!(report.arms[0].students, 5);
        assert_eq!(report.arms[0].treated, 1);
        assert_eq!(report.arms[1].students, 0);
        assert_eq!(report.degree_distribution[&1], 2);
    }

    #[test]
    fn cluster_ratio_single_class_is_mean() {
        let classes = vec![ClassRecord {
            id: "c".into(),
            arm: Arm::Flyer,
        }];
        let students = (0..4)
            .map(|i| StudentRecord {
                id: format!("s{i}"),
                class_id: "c".into(),
                m: false,
                y: 0,
                covariates: vec![],
            })
            .collect();
        let data = StudyData::from_records(classes, students, &[], vec![], &CovariateSelection::default()).unwrap();
        let v: HashMap<String, f64> = (0..4).map(|i| (format!("s{i}"), i as f64)).collect();
        assert_eq!(data.cluster_ratio_mean(&v).unwrap(), 1.5);
        let zeros: HashMap<String, f64> = v.keys().map(|k| (k.clone(), 0.0)).collect();
        assert_eq!(data.cluster_ratio_mean(&zeros).unwrap(), 0.0);
    }

    #[test]
    fn empty_students_rejected() {
        let classes = vec![ClassRecord {
            id: "c".into(),
            arm: Arm::Flyer,
        }];
        let err = StudyData::from_records(classes, vec![], &[], vec![], &CovariateSelection::default()).unwrap_err();
        assert!(err.to_string().contains("no students"));
    }

    #[test]
    fn unknown_selection_rejected() {
        let classes = vec![ClassRecord {
            id: "c".into(),
            arm: Arm::Flyer,
        }];
        let students = vec![StudentRecord {
            id: "s".into(),
            class_id: "c".into(),
            m: false,
            y: 0,
            covariates: vec![1.0],
        }];
        let sel = CovariateSelection {
            strata: Some(vec!["nope".into()]),
            outcome: None,
        };
        assert!(StudyData::from_records(classes, students, &[], vec!["x".into()], &sel).is_err());
    }
}
