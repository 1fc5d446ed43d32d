//! Seasonal decision threshold: circular regressions of the score mean and
//! monthly score spread over the day of year.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::encodings::cyclical;
use crate::error::{Error, Result};

/// One-sided 95th percentile of the standard normal, as used for τ.
pub const DEFAULT_MULTIPLIER: f64 = 1.64;

/// Coefficients `(a, b, c)` of `a·sin(2πt/365) + b·cos(2πt/365) + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircularFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl CircularFit {
    pub fn eval(&self, t: f64) -> f64 {
        let (s, c) = cyclical(t);
        self.a * s + self.b * c + self.c
    }
}

/// Solves a 3×3 system by Gaussian elimination with partial pivoting.
fn solve3(mut m: [[f64; 3]; 3], mut r: [f64; 3]) -> Option<[f64; 3]> {
    let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return None;
        }
        m.swap(col, piv);
        r.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..3 {
                m[row][k] -= f * m[col][k];
            }
            r[row] -= f * r[col];
        }
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let s: f64 = (i + 1..3).map(|k| m[i][k] * x[k]).sum();
        x[i] = (r[i] - s) / m[i][i];
    }
    Some(x)
}

/// Least-squares fit of `y ≈ a·sin + b·cos + c` over `(day, y)` points.
pub fn fit_circular(points: &[(f64, f64)]) -> Result<CircularFit> {
    let mut distinct: Vec<i64> = points
        .iter()
        .map(|&(t, _)| (t.rem_euclid(365.0) * 1e6).round() as i64)
        .collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::RankDeficient(format!(
            "circular regression needs 3 distinct days, got {}",
            distinct.len()
        )));
    }
    let mut ata = [[0.0; 3]; 3];
    let mut aty = [0.0; 3];
    for &(t, y) in points {
        let (s, c) = cyclical(t);
        let row = [s, c, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
            aty[i] += row[i] * y;
        }
    }
    let [a, b, c] = solve3(ata, aty)
        .ok_or_else(|| Error::RankDeficient("singular circular design matrix".into()))?;
    Ok(CircularFit { a, b, c })
}

/// Mean regression with every image weighted equally.
pub fn fit_mean_regression(scores: &[(u16, f64)]) -> Result<CircularFit> {
    let pts: Vec<(f64, f64)> = scores.iter().map(|&(d, s)| (d as f64, s)).collect();
    fit_circular(&pts)
}

/// Day of year of the 15th of `month` in a non-leap year.
pub fn mid_month_day(month: u32) -> u16 {
    NaiveDate::from_ymd_opt(2001, month, 15)
        .expect("month in 1..=12")
        .ordinal() as u16
}

pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Sample std per calendar month, pooled across years; months with fewer
/// than two scores are skipped.
pub fn monthly_stds(scores: &[(NaiveDate, f64)]) -> Vec<(u32, f64)> {
    let mut by_month: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for &(d, s) in scores {
        by_month.entry(d.month()).or_default().push(s);
    }
    by_month
        .into_iter()
        .filter(|(_, v)| v.len() >= 2)
        .map(|(m, v)| (m, sample_std(&v)))
        .collect()
}

pub fn fit_std_regression(scores: &[(NaiveDate, f64)]) -> Result<CircularFit> {
    let months = monthly_stds(scores);
    if months.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "std regression needs 3 months with at least 2 scores each, got {}",
            months.len()
        )));
    }
    let pts: Vec<(f64, f64)> = months
        .iter()
        .map(|&(m, s)| (mid_month_day(m) as f64, s))
        .collect();
    fit_circular(&pts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdKind {
    Seasonal,
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    pub kind: ThresholdKind,
    pub mean_coeffs: Option<CircularFit>,
    pub std_coeffs: Option<CircularFit>,
    pub multiplier: f64,
    pub flat_value: Option<f64>,
}

impl ThresholdModel {
    pub fn seasonal(mean: CircularFit, std: CircularFit, multiplier: f64) -> Result<Self> {
        let m = ThresholdModel {
            kind: ThresholdKind::Seasonal,
            mean_coeffs: Some(mean),
            std_coeffs: Some(std),
            multiplier,
            flat_value: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn flat(value: f64, multiplier: f64) -> Result<Self> {
        let m = ThresholdModel {
            kind: ThresholdKind::Flat,
            mean_coeffs: None,
            std_coeffs: None,
            multiplier,
            flat_value: Some(value),
        };
        m.validate()?;
        Ok(m)
    }

    /// Fits both regressions to dated training scores.
    pub fn fit_seasonal(scores: &[(NaiveDate, f64)], multiplier: f64) -> Result<Self> {
        let days: Vec<(u16, f64)> = scores.iter().map(|&(d, s)| (d.ordinal() as u16, s)).collect();
        Self::seasonal(
            fit_mean_regression(&days)?,
            fit_std_regression(scores)?,
            multiplier,
        )
    }

    /// Mean plus `multiplier` sample standard deviations of all training scores.
    pub fn fit_flat(scores: &[f64], multiplier: f64) -> Result<Self> {
        if scores.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "flat threshold needs at least 2 scores, got {}",
                scores.len()
            )));
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        Self::flat(mean + multiplier * sample_std(scores), multiplier)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.multiplier > 0.0 && self.multiplier.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "threshold multiplier {} must be positive",
                self.multiplier
            )));
        }
        let ok = match self.kind {
            ThresholdKind::Seasonal => self.mean_coeffs.is_some() && self.std_coeffs.is_some(),
            ThresholdKind::Flat => self.flat_value.is_some_and(f64::is_finite),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "{:?} threshold is missing its coefficients",
                self.kind
            )))
        }
    }

    /// τ(t); the fitted spread is floored at zero.
    pub fn tau(&self, t: f64) -> f64 {
        match self.kind {
            ThresholdKind::Seasonal => {
                let m = self.mean_coeffs.expect("validated").eval(t);
                let s = self.std_coeffs.expect("validated").eval(t).max(0.0);
                m + self.multiplier * s
            }
            ThresholdKind::Flat => self.flat_value.expect("validated"),
        }
    }

    pub fn residual_and_flag(&self, score: f64, t: f64) -> (f64, bool) {
        let r = score - self.tau(t);
        (r, r > 0.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: ThresholdModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn constant_scores_fit_constant() {
        let pts: Vec<(u16, f64)> = (1..50).map(|d| (d * 7, 0.42)).collect();
        let f = fit_mean_regression(&pts).unwrap();
        assert!(f.a.abs() < 1e-9 && f.b.abs() < 1e-9 && (f.c - 0.42).abs() < 1e-9);
    }

    #[test]
    fn recovers_planted_sine() {
        let pts: Vec<(u16, f64)> = (0..50)
            .map(|i| {
                let d = 1 + i * 7;
                (d, 0.2 * (2.0 * std::f64::consts::PI * d as f64 / 365.0).sin() + 0.5)
            })
            .collect();
        let f = fit_mean_regression(&pts).unwrap();
        assert!((f.a - 0.2).abs() < 1e-6 && f.b.abs() < 1e-6 && (f.c - 0.5).abs() < 1e-6);
    }

    #[test]
    fn same_day_is_rank_deficient() {
        assert!(matches!(
            fit_mean_regression(&[(10, 0.1), (10, 0.2)]),
            Err(Error::RankDeficient(_))
        ));
        // Two distinct days are still not enough for three parameters.
        assert!(fit_mean_regression(&[(10, 0.1), (20, 0.2), (10, 0.3)]).is_err());
    }

    #[test]
    fn std_fit_recovers_cosine() {
        // Two scores per month at ±s around 0 give a sample std of s·√2.
        let mut scores = vec![];
        for m in 1..=12 {
            let t = mid_month_day(m) as f64;
            let s = 0.05 + 0.02 * (2.0 * std::f64::consts::PI * t / 365.0).cos();
            let h = s / 2f64.sqrt();
            scores.push((NaiveDate::from_ymd_opt(2020, m, 3).unwrap(), h));
            scores.push((NaiveDate::from_ymd_opt(2021, m, 20).unwrap(), -h));
        }
        let f = fit_std_regression(&scores).unwrap();
        assert!(f.a.abs() < 1e-6 && (f.b - 0.02).abs() < 1e-6 && (f.c - 0.05).abs() < 1e-6);
    }

    #[test]
    fn identical_monthly_std_fits_constant() {
        let mut scores = vec![];
        for m in 1..=12 {
            for (day, v) in [(2, 0.1), (12, 0.3), (22, 0.5)] {
                scores.push((NaiveDate::from_ymd_opt(2019, m, day).unwrap(), v));
            }
        }
        let f = fit_std_regression(&scores).unwrap();
        assert!(f.a.abs() < 1e-9 && f.b.abs() < 1e-9 && (f.c - 0.2).abs() < 1e-9);
    }

    #[test]
    fn single_sample_months_are_skipped() {
        let d = |m, day| NaiveDate::from_ymd_opt(2020, m, day).unwrap();
        let scores = vec![
            (d(1, 1), 0.1),
            (d(1, 2), 0.2),
            (d(2, 1), 0.1),
            (d(2, 2), 0.3),
            (d(3, 1), 0.1),
            (d(4, 1), 0.1),
        ];
        assert_eq!(monthly_stds(&scores).len(), 2);
        assert!(fit_std_regression(&scores).is_err());
    }

    #[test]
    fn mid_month_anchors() {
        assert_eq!(mid_month_day(1), 15);
        assert_eq!(mid_month_day(2), 46);
        assert_eq!(mid_month_day(12), 349);
    }

    #[test]
    fn tau_arithmetic_and_flags() {
        let zero = |c| CircularFit { a: 0.0, b: 0.0, c };
        let m = ThresholdModel::seasonal(zero(0.3), zero(0.1), DEFAULT_MULTIPLIER).unwrap();
        for t in [1.0, 100.0, 365.0] {
            assert!((m.tau(t) - 0.464).abs() < 1e-12);
        }
        let tau = m.tau(50.0);
        assert_eq!(m.residual_and_flag(tau, 50.0), (0.0, false));
        assert!(m.residual_and_flag(tau + 0.01, 50.0).1);
        let s = ThresholdModel::seasonal(
            CircularFit { a: 0.1, b: -0.05, c: 0.3 },
            CircularFit { a: 0.01, b: 0.02, c: 0.05 },
            DEFAULT_MULTIPLIER,
        )
        .unwrap();
        for t in 1..=365 {
            let t = t as f64;
            assert!((s.tau(t) - s.tau(t + 365.0)).abs() < 1e-12);
            assert!(!s.residual_and_flag(s.mean_coeffs.unwrap().eval(t), t).1);
        }
    }

    #[test]
    fn flat_threshold() {
        let scores = [0.2, 0.4, 0.2, 0.4];
        let m = ThresholdModel::fit_flat(&scores, DEFAULT_MULTIPLIER).unwrap();
        let sd = sample_std(&scores);
        assert!((m.tau(10.0) - (0.3 + 1.64 * sd)).abs() < 1e-12);
        assert!(ThresholdModel::fit_flat(&[0.1], 1.64).is_err());
        let exact = ThresholdModel::flat(0.3 + 1.64 * 0.1, 1.64).unwrap();
        assert!((exact.tau(3.0) - 0.464).abs() < 1e-12);
    }

    #[test]
    fn constant_scores_give_constant_tau() {
        let scores: Vec<(NaiveDate, f64)> = (0..36)
            .map(|i| (NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(i * 10), 0.07))
            .collect();
        let m = ThresholdModel::fit_seasonal(&scores, DEFAULT_MULTIPLIER).unwrap();
        for t in [1.0, 200.0] {
            assert!((m.tau(t) - 0.07).abs() < 1e-9);
        }
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let m = ThresholdModel::flat(0.5, 1.64).unwrap();
        let back = ThresholdModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        for key in ["kind", "mean_coeffs", "std_coeffs", "multiplier", "flat_value"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert!(ThresholdModel::flat(0.5, 0.0).is_err());
        assert!(ThresholdModel::from_json(r#"{"kind":"seasonal","mean_coeffs":null,"std_coeffs":null,"multiplier":1.64,"flat_value":null}"#).is_err());
    }

    #[test]
    fn coverage_near_95_percent() {
        let mean = CircularFit { a: 0.05, b: 0.02, c: 0.2 };
        let spread = CircularFit { a: 0.0, b: 0.01, c: 0.03 };
        let mut fractions = vec![];
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
            let scores: Vec<(NaiveDate, f64)> = (0..200)
                .map(|i| {
                    let d = start + chrono::Days::new(i * 5);
                    let t = d.ordinal() as f64;
                    let n = Normal::new(mean.eval(t), spread.eval(t)).unwrap();
                    (d, n.sample(&mut rng))
                })
                .collect();
            let m = ThresholdModel::fit_seasonal(&scores, DEFAULT_MULTIPLIER).unwrap();
            let above = scores
                .iter()
                .filter(|(d, s)| m.residual_and_flag(*s, d.ordinal() as f64).1)
                .count();
            fractions.push(above as f64 / 200.0);
        }
        let avg = fractions.iter().sum::<f64>() / fractions.len() as f64;
        assert!((avg - 0.05).abs() < 0.03, "{fractions:?}");
    }

    proptest::proptest! {
        #[test]
        fn shift_moves_residuals_uniformly(k in -1.0f64..1.0, seed in 0u64..1000) {
            let m = ThresholdModel::seasonal(
                CircularFit { a: 0.1, b: 0.0, c: 0.2 },
                CircularFit { a: 0.0, b: 0.0, c: 0.05 },
                DEFAULT_MULTIPLIER,
            ).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<(f64, f64)> = (0..30)
                .map(|_| (rand::Rng::random_range(&mut rng, 1.0..366.0), rand::Rng::random::<f64>(&mut rng)))
                .collect();
            let r: Vec<f64> = pts.iter().map(|&(t, s)| m.residual_and_flag(s, t).0).collect();
            let r2: Vec<f64> = pts.iter().map(|&(t, s)| m.residual_and_flag(s + k, t).0).collect();
            for (a, b) in r.iter().zip(&r2) {
                proptest::prop_assert!((b - a - k).abs() < 1e-12);
            }
            let order = |v: &[f64]| {
                let mut idx: Vec<usize> = (0..v.len()).collect();
                idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
                idx
            };
            proptest::prop_assert_eq!(order(&r), order(&r2));
        }
    }
}
