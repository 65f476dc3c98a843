use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Posterior summary of one scalar quantity. `NaN` inputs count as missing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub q2_5: f64,
    pub q5: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
    pub q97_5: f64,
    pub pr_positive: f64,
    pub n: usize,
    pub missing: usize,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    let missing = values.len() - v.len();
    if v.is_empty() {
        return Err(Error::invalid("cannot summarize: every value is missing"));
    }
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let pr_positive = v.iter().filter(|&&x| x > 0.0).count() as f64 / n as f64;
    v.sort_by(f64::total_cmp);
    Ok(Summary {
        mean,
        sd,
        q2_5: quantile(&v, 0.025),
        q5: quantile(&v, 0.05),
        q25: quantile(&v, 0.25),
        q50: quantile(&v, 0.5),
        q75: quantile(&v, 0.75),
        q95: quantile(&v, 0.95),
        q97_5: quantile(&v, 0.975),
        pr_positive,
        n,
        missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_sequence() {
        let s = summarize(&[2.5; 10]).unwrap();
        assert_eq!((s.mean, s.sd, s.pr_positive), (2.5, 0.0, 1.0));
        assert_eq!(s.q2_5, 2.5);
    }

    #[test]
    fn symmetric_sequence() {
        let s = summarize(&[1.0, -1.0, 1.0, -1.0]).unwrap();
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.pr_positive, 0.5);
    }

    #[test]
    fn quantiles_interpolate() {
        let v: Vec<f64> = (1..=5).map(f64::from).collect();
        let s = summarize(&v).unwrap();
        assert_eq!(s.q50, 3.0);
        assert_eq!(s.q25, 2.0);
        assert!((s.q5 - 1.2).abs() < 1e-12);
    }

    #[test]
    fn missing_values() {
        let s = summarize(&[f64::NAN, 1.0, 3.0]).unwrap();
        assert_eq!((s.n, s.missing, s.mean), (2, 1, 2.0));
        assert!(summarize(&[f64::NAN]).is_err());
        assert!(summarize(&[]).is_err());
    }

    proptest! {
        #[test]
        fn quantiles_are_monotone(v in prop::collection::vec(-1e3f64..1e3, 1..200)) {
            let s = summarize(&v).unwrap();
            let q = [s.q2_5, s.q5, s.q25, s.q50, s.q75, s.q95, s.q97_5];
            prop_assert!(q.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!((0.0..=1.0).contains(&s.pr_positive));
        }
    }
}
