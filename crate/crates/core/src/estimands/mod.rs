//! Data augmentation and causal estimands.

mod augment;
mod effects;
mod profiles;
mod summary;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::posterior::{stream_rng, Stream};
use crate::strata::PrincipalStratum;
use crate::study::StudyData;

pub use augment::{impute_outcome, impute_strata, potential_mediator, strata_weights, AugmentedDraw};
pub use effects::{
    default_requests, draw_effects, effect_cde, effect_cse, effect_nde, effect_nie, effect_pce, Estimand, Mediator,
    DEFAULT_CONTRASTS, DEFAULT_S_GRID,
};
pub use profiles::{draw_profile, DrawProfile};
pub use summary::{quantile, summarize, Summary};

/// Summary of one estimand in one stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandSummary {
    pub stratum: PrincipalStratum,
    pub estimand: Estimand,
    /// `None` when the stratum was empty in every draw.
    pub summary: Option<Summary>,
}

/// Per-stratum summaries of a covariate in original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateProfile {
    pub covariate: String,
    pub by_stratum: Vec<(PrincipalStratum, Option<Summary>)>,
}

/// Everything computed from a set of posterior draws.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOutput {
    pub requests: Vec<Estimand>,
    pub effects: Vec<EstimandSummary>,
    pub shares: Vec<(PrincipalStratum, Summary)>,
    pub covariates: Vec<CovariateProfile>,
    /// `[row][col]` summaries of friend-stratum shares.
    pub homophily: Vec<Vec<Option<Summary>>>,
    /// Raw per-draw values, `[draw][request][stratum]`.
    pub per_draw: Vec<Vec<[f64; 4]>>,
}

fn summarize_opt(values: &[f64]) -> Option<Summary> {
    summarize(values).ok()
}

/// Augments every draw and summarizes the requested estimands.
///
/// Draw `d` uses stream `d` of the seeded generator, so output does not
/// depend on the thread count.
pub fn estimate(
    data: &StudyData,
    draws: &[ModelParams<f64>],
    requests: &[Estimand],
    seed: u64,
) -> Result<EstimateOutput> {
    if draws.is_empty() {
        return Err(Error::invalid("no posterior draws"));
    }
    if requests.is_empty() {
        return Err(Error::invalid("no estimands requested"));
    }
    for r in requests {
        r.validate()?;
    }
    let results = draws
        .par_iter()
        .enumerate()
        .map(|(d, params)| {
            let mut rng = stream_rng(seed, Stream::Draw(d));
            let aug = AugmentedDraw::new(data, params, &mut rng)?;
            Ok((draw_effects(&aug, requests), draw_profile(&aug)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (per_draw, profiles): (Vec<_>, Vec<_>) = results.into_iter().unzip();

    let mut effects = Vec::with_capacity(requests.len() * 4);
    for (r, &estimand) in requests.iter().enumerate() {
        for g in PrincipalStratum::ALL {
            let values: Vec<f64> = per_draw.iter().map(|d| d[r][g.index()]).collect();
            effects.push(EstimandSummary {
                stratum: g,
                estimand,
                summary: summarize_opt(&values),
            });
        }
    }
    let column = |f: &dyn Fn(&DrawProfile) -> f64| -> Vec<f64> { profiles.iter().map(f).collect() };
    let shares = PrincipalStratum::ALL
        .iter()
        .map(|&g| Ok((g, summarize(&column(&|p| p.shares[g.index()]))?)))
        .collect::<Result<Vec<_>>>()?;
    let covariates = data
        .covariates()
        .names
        .iter()
        .enumerate()
        .map(|(c, name)| CovariateProfile {
            covariate: name.clone(),
            by_stratum: PrincipalStratum::ALL
                .iter()
                .map(|&g| (g, summarize_opt(&column(&|p| p.covariate_means[c][g.index()]))))
                .collect(),
        })
        .collect();
    let homophily = (0..4)
        .map(|g| (0..4).map(|h| summarize_opt(&column(&|p| p.homophily[g][h]))).collect())
        .collect();
    Ok(EstimateOutput {
        requests: requests.to_vec(),
        effects,
        shares,
        covariates,
        homophily,
        per_draw,
    })
}

fn fmt(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        x.to_string()
    }
}

fn summary_fields(s: Option<&Summary>, cols: &[fn(&Summary) -> f64]) -> Vec<String> {
    cols.iter().map(|f| s.map_or(String::new(), |s| fmt(f(s)))).collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(format!("create {}", path.display()), e))?;
    Ok(csv::Writer::from_writer(file))
}

impl EstimateOutput {
    /// One row per (estimand, stratum) with the mean, SD, tail quantiles and
    /// sign probability.
    pub fn write_estimands_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record([
            "stratum",
            "label",
            "estimand",
            "description",
            "z",
            "z_prime",
            "z_dprime",
            "s_high",
            "s_low",
            "mean",
            "sd",
            "q2.5",
            "q5",
            "q95",
            "q97.5",
            "pr_positive",
            "draws",
            "missing",
        ])?;
        let cols: [fn(&Summary) -> f64; 7] = [
            |s| s.mean,
            |s| s.sd,
            |s| s.q2_5,
            |s| s.q5,
            |s| s.q95,
            |s| s.q97_5,
            |s| s.pr_positive,
        ];
        for row in &self.effects {
            let level = |a: crate::study::Arm| a.level().to_string();
            let (z, zp, zpp, sh, sl) = match row.estimand {
                Estimand::Pce { z, z_prime } => (level(z), level(z_prime), String::new(), String::new(), String::new()),
                Estimand::Nde { z, z_prime, z_dprime } | Estimand::Nie { z_dprime, z, z_prime } => {
                    (level(z), level(z_prime), level(z_dprime), String::new(), String::new())
                }
                Estimand::Cde { z, z_prime, s } => (level(z), level(z_prime), String::new(), fmt(s), fmt(s)),
                Estimand::Cse { z, s_high, s_low } => (level(z), String::new(), String::new(), fmt(s_high), fmt(s_low)),
            };
            let mut rec = vec![
                row.stratum.code().to_owned(),
                row.stratum.label().to_owned(),
                row.estimand.name().to_owned(),
                row.estimand.label(),
                z,
                zp,
                zpp,
                sh,
                sl,
            ];
            rec.extend(summary_fields(row.summary.as_ref(), &cols));
            let (n, missing) = row.summary.map_or((0, self.per_draw.len()), |s| (s.n, s.missing));
            rec.push(n.to_string());
            rec.push(missing.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(format!("write {}", path.display()), e))
    }

    /// Posterior stratum shares with mean, SD and tail quantiles.
    pub fn write_shares_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record(["stratum", "label", "mean", "sd", "q2.5", "q5", "q95", "q97.5"])?;
        let cols: [fn(&Summary) -> f64; 6] = [|s| s.mean, |s| s.sd, |s| s.q2_5, |s| s.q5, |s| s.q95, |s| s.q97_5];
        for (g, s) in &self.shares {
            let mut rec = vec![g.code().to_owned(), g.label().to_owned()];
            rec.extend(summary_fields(Some(s), &cols));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(format!("write {}", path.display()), e))
    }

    /// Friend-stratum shares by own stratum, with box-plot quantiles.
    pub fn write_homophily_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        w.write_record([
            "stratum",
            "friend_stratum",
            "mean",
            "sd",
            "q2.5",
            "q25",
            "q50",
            "q75",
            "q97.5",
            "draws",
        ])?;
        let cols: [fn(&Summary) -> f64; 7] = [
            |s| s.mean,
            |s| s.sd,
            |s| s.q2_5,
            |s| s.q25,
            |s| s.q50,
            |s| s.q75,
            |s| s.q97_5,
        ];
        for (g, row) in self.homophily.iter().enumerate() {
            for (h, s) in row.iter().enumerate() {
                let mut rec = vec![
                    PrincipalStratum::from_index(g).code().to_owned(),
                    PrincipalStratum::from_index(h).code().to_owned(),
                ];
                rec.extend(summary_fields(s.as_ref(), &cols));
                rec.push(s.map_or(0, |s| s.n).to_string());
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io(format!("write {}", path.display()), e))
    }

    /// Stratum shares and covariate profiles as JSON.
    pub fn write_profiles_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Out<'a> {
            draws: usize,
            shares: &'a [(PrincipalStratum, Summary)],
            covariates: &'a [CovariateProfile],
        }
        let text = serde_json::to_string_pretty(&Out {
            draws: self.per_draw.len(),
            shares: &self.shares,
            covariates: &self.covariates,
        })?;
        fs::write(path, text).map_err(|e| Error::io(format!("write {}", path.display()), e))
    }
}
