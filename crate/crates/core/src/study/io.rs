use std::fs;
use std::path::{Path, PathBuf};

use super::{Arm, ClassRecord, CovariateSelection, StudentRecord, StudyData};
use crate::error::{Error, Result};

const STUDENT_FIXED: [&str; 4] = ["student_id", "class_id", "m", "y"];

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(file))
}

struct Rows {
    path: PathBuf,
    header: Vec<String>,
    records: Vec<(u64, csv::StringRecord)>,
}

fn read_rows(path: &Path) -> Result<Rows> {
    let mut rdr = reader(path)?;
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        records.push((line, rec));
    }
    Ok(Rows {
        path: path.to_path_buf(),
        header,
        records,
    })
}

impl Rows {
    fn err(&self, line: u64, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    fn expect_header(&self, fixed: &[&str]) -> Result<()> {
        if self.header.len() < fixed.len() || self.header.iter().zip(fixed).any(|(h, f)| h != f) {
            return Err(self.err(
                1,
                format!(
                    "expected header starting with '{}', found '{}'",
                    fixed.join(","),
                    self.header.join(",")
                ),
            ));
        }
        Ok(())
    }
}

fn parse_binary(rows: &Rows, line: u64, field: &str, value: &str) -> Result<bool> {
    match value {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(rows.err(line, format!("{field} must be 0 or 1, found '{other}'"))),
    }
}

/// Reads `classes.csv`, `students.csv` and `edges.csv` into a validated study.
pub fn load_study(
    class_file: &Path,
    student_file: &Path,
    edge_file: &Path,
    selection: &CovariateSelection,
) -> Result<StudyData> {
    let class_rows = read_rows(class_file)?;
    class_rows.expect_header(&["class_id", "z"])?;
    let mut classes = Vec::with_capacity(class_rows.records.len());
    for (line, rec) in &class_rows.records {
        if rec.len() != 2 {
            return Err(class_rows.err(*line, format!("expected 2 fields, found {}", rec.len())));
        }
        let arm = rec[1]
            .parse::<u8>()
            .ok()
            .and_then(Arm::from_level)
            .ok_or_else(|| class_rows.err(*line, format!("z must be 1, 2 or 3, found '{}'", &rec[1])))?;
        classes.push(ClassRecord {
            id: rec[0].to_owned(),
            arm,
        });
    }

    let student_rows = read_rows(student_file)?;
    student_rows.expect_header(&STUDENT_FIXED)?;
    let covariate_names: Vec<String> = student_rows.header[STUDENT_FIXED.len()..].to_vec();
    let width = student_rows.header.len();
    let mut students = Vec::with_capacity(student_rows.records.len());
    for (line, rec) in &student_rows.records {
        let line = *line;
        if rec.len() != width {
            return Err(student_rows.err(line, format!("expected {width} fields, found {}", rec.len())));
        }
        let m = parse_binary(&student_rows, line, "m", &rec[2])?;
        let y = rec[3]
            .parse::<u64>()
            .map_err(|_| student_rows.err(line, format!("y must be a nonnegative integer, found '{}'", &rec[3])))?;
        let covariates = rec
            .iter()
            .skip(STUDENT_FIXED.len())
            .zip(&covariate_names)
            .map(|(v, name)| {
                v.parse::<f64>()
                    .map_err(|_| student_rows.err(line, format!("covariate '{name}' is not a number: '{v}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        students.push(StudentRecord {
            id: rec[0].to_owned(),
            class_id: rec[1].to_owned(),
            m,
            y,
            covariates,
        });
    }

    let edge_rows = read_rows(edge_file)?;
    edge_rows.expect_header(&["student_id_a", "student_id_b"])?;
    let mut edges = Vec::with_capacity(edge_rows.records.len());
    for (line, rec) in &edge_rows.records {
        if rec.len() != 2 {
            return Err(edge_rows.err(*line, format!("expected 2 fields, found {}", rec.len())));
        }
        edges.push((rec[0].to_owned(), rec[1].to_owned()));
    }

    StudyData::from_records(classes, students, &edges, covariate_names, selection)
}

/// Writes the study in the input CSV schemas, raw covariate units.
pub fn write_study(data: &StudyData, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("create {}", dir.display()), e))?;
    let open = |name: &str| -> Result<csv::Writer<fs::File>> {
        let path = dir.join(name);
        let file = fs::File::create(&path).map_err(|e| Error::io(format!("create {}", path.display()), e))?;
        Ok(csv::Writer::from_writer(file))
    };

    let mut w = open("classes.csv")?;
    w.write_record(["class_id", "z"])?;
    for c in data.classes() {
        w.write_record([c.id.as_str(), &c.arm.level().to_string()])?;
    }
    w.flush().map_err(|e| Error::io("write classes.csv", e))?;

    let mut w = open("students.csv")?;
    let mut header: Vec<String> = STUDENT_FIXED.iter().map(|s| (*s).to_owned()).collect();
    header.extend(data.covariates().names.iter().cloned());
    w.write_record(&header)?;
    for s in data.students() {
        let mut row = vec![
            s.id.clone(),
            s.class_id.clone(),
            u8::from(s.m).to_string(),
            s.y.to_string(),
        ];
        row.extend(s.covariates.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("write students.csv", e))?;

    let mut w = open("edges.csv")?;
    w.write_record(["student_id_a", "student_id_b"])?;
    let students = data.students();
    for (a, b) in data.network().edges() {
        w.write_record([students[a].id.as_str(), students[b].id.as_str()])?;
    }
    w.flush().map_err(|e| Error::io("write edges.csv", e))?;
    Ok(())
}
