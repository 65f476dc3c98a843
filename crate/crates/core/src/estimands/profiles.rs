//! Stratum shares, covariate profiles and latent homophily per draw.

use super::augment::AugmentedDraw;

/// Descriptive quantities of one augmented draw. `NaN` marks empty strata.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawProfile {
    /// Share of students imputed to each stratum.
    pub shares: [f64; 4],
    /// `[covariate][stratum]` means in original units.
    pub covariate_means: Vec<[f64; 4]>,
    /// `[row][col]`: mean share of friends in stratum `col` among non-isolated
    /// students in stratum `row`.
    pub homophily: [[f64; 4]; 4],
}

pub fn draw_profile(aug: &AugmentedDraw<'_>) -> DrawProfile {
    let data = aug.data();
    let strata = aug.strata();
    let n = strata.len();
    let k = data.covariates().len();
    let mut counts = [0usize; 4];
    let mut cov_sums = vec![[0.0; 4]; k];
    let mut homo_sums = [[0.0; 4]; 4];
    let mut homo_counts = [0usize; 4];
    for (i, st) in data.students().iter().enumerate() {
        let g = strata[i].index();
        counts[g] += 1;
        for (c, &x) in st.covariates.iter().enumerate() {
            cov_sums[c][g] += x;
        }
        let friends = data.network().neighbors(i);
        if friends.is_empty() {
            continue;
        }
        homo_counts[g] += 1;
        let mut row = [0usize; 4];
        for &f in friends {
            row[strata[f].index()] += 1;
        }
        for h in 0..4 {
            homo_sums[g][h] += row[h] as f64 / friends.len() as f64;
        }
    }
    let div = |s: f64, c: usize| if c == 0 { f64::NAN } else { s / c as f64 };
    DrawProfile {
        shares: counts.map(|c| c as f64 / n as f64),
        covariate_means: cov_sums
            .iter()
            .map(|row| std::array::from_fn(|g| div(row[g], counts[g])))
            .collect(),
        homophily: std::array::from_fn(|g| homo_sums[g].map(|s| div(s, homo_counts[g]))),
    }
}
