//! Detection metrics, the analytic random-guess baseline, and report output.

use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const AUPRC_RULE: &str = "average_precision_grouped_ties";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub date: NaiveDate,
    pub residual: f64,
    pub flag: bool,
    pub label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Counts {
    pub fn tally(flags: &[bool], labels: &[bool]) -> Result<Self> {
        if flags.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} flags for {} labels",
                flags.len(),
                labels.len()
            )));
        }
        if flags.is_empty() {
            return Err(Error::Empty("flags"));
        }
        let mut c = Counts::default();
        for (&f, &l) in flags.iter().zip(labels) {
            match (f, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Which quantities hit a zero denominator and were reported as 0.
    pub notes: Vec<String>,
}

pub fn prf1_from_counts(c: &Counts) -> Prf1 {
    let mut notes = vec![];
    let ratio = |num: usize, den: usize, name: &str, notes: &mut Vec<String>| {
        if den == 0 {
            notes.push(format!("{name} undefined (zero denominator), reported as 0"));
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(c.tp, c.tp + c.fp, "precision", &mut notes);
    let recall = ratio(c.tp, c.tp + c.fn_, "recall", &mut notes);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        notes.push("f1 undefined (precision + recall = 0), reported as 0".into());
        0.0
    };
    Prf1 {
        precision,
        recall,
        f1,
        notes,
    }
}

pub fn prf1(flags: &[bool], labels: &[bool]) -> Result<Prf1> {
    Ok(prf1_from_counts(&Counts::tally(flags, labels)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// PR curve with one point per distinct residual, highest threshold first.
/// A sample is predicted positive when its residual is at least the threshold.
pub fn pr_curve(residuals: &[f64], labels: &[bool]) -> Result<Vec<PrPoint>> {
    if residuals.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} residuals for {} labels",
            residuals.len(),
            labels.len()
        )));
    }
    if let Some(r) = residuals.iter().find(|r| !r.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite residual {r}")));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::InvalidArgument("AUPRC needs at least one positive label".into()));
    }
    let mut order: Vec<usize> = (0..residuals.len()).collect();
    order.sort_by(|&i, &j| residuals[j].total_cmp(&residuals[i]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = vec![];
    let mut k = 0;
    while k < order.len() {
        let thr = residuals[order[k]];
        while k < order.len() && residuals[order[k]] == thr {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(PrPoint {
            threshold: thr,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / positives as f64,
        });
    }
    Ok(points)
}

/// Step-wise average precision: `Σ (R_k − R_{k−1})·P_k` over the PR curve.
pub fn auprc(residuals: &[f64], labels: &[bool]) -> Result<f64> {
    let mut prev = 0.0;
    let mut area = 0.0;
    for p in pr_curve(residuals, labels)? {
        area += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    Ok(area)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    pub hazard_fraction: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auprc: f64,
}

/// Expected metrics of a fair coin flip on a dataset with hazard fraction `p`.
pub fn random_baseline(p: f64) -> Result<RandomBaseline> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "hazard fraction {p} outside (0, 1]"
        )));
    }
    Ok(RandomBaseline {
        hazard_fraction: p,
        precision: p,
        recall: 0.5,
        f1: p / (p + 0.5),
        auprc: p,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Absent when there are no positive labels.
    pub auprc: Option<f64>,
    pub counts: Counts,
    pub n_images: usize,
    pub hazard_fraction: f64,
    pub notes: Vec<String>,
}

pub fn metrics(results: &[LabeledScore]) -> Result<MetricsReport> {
    if results.is_empty() {
        return Err(Error::Empty("labeled scores"));
    }
    let flags: Vec<bool> = results.iter().map(|r| r.flag).collect();
    let labels: Vec<bool> = results.iter().map(|r| r.label).collect();
    let residuals: Vec<f64> = results.iter().map(|r| r.residual).collect();
    let counts = Counts::tally(&flags, &labels)?;
    let Prf1 {
        precision,
        recall,
        f1,
        mut notes,
    } = prf1_from_counts(&counts);
    let auprc = if counts.tp + counts.fn_ > 0 {
        Some(auprc(&residuals, &labels)?)
    } else {
        notes.push("auprc undefined without positive labels".into());
        None
    };
    Ok(MetricsReport {
        precision,
        recall,
        f1,
        auprc,
        counts,
        n_images: results.len(),
        hazard_fraction: (counts.tp + counts.fn_) as f64 / results.len() as f64,
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub auprc_rule: String,
    pub variant: String,
    pub param_count: Option<usize>,
    pub model: MetricsReport,
    pub random_baseline: Option<RandomBaseline>,
}

/// Builds the full report; the baseline is omitted when there are no hazards.
pub fn emit_report(
    results: &[LabeledScore],
    variant: &str,
    param_count: Option<usize>,
) -> Result<Report> {
    let model = metrics(results)?;
    let random_baseline = if model.hazard_fraction > 0.0 {
        Some(random_baseline(model.hazard_fraction)?)
    } else {
        None
    };
    Ok(Report {
        schema_version: REPORT_SCHEMA_VERSION,
        auprc_rule: AUPRC_RULE.into(),
        variant: variant.into(),
        param_count,
        model,
        random_baseline,
    })
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Plain-text table with F1, precision, recall, AUPRC and parameter count.
    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:>7} {:>9} {:>7} {:>7} {:>9}",
            "model", "F1", "precision", "recall", "AUPRC", "#params"
        );
        let m = &self.model;
        let params = self
            .param_count
            .map_or("-".to_string(), |p| format!("{:.0}K", p as f64 / 1000.0));
        let _ = writeln!(
            s,
            "{:<16} {:>7} {:>9} {:>7} {:>7} {:>9}",
            self.variant,
            fmt(Some(m.f1)),
            fmt(Some(m.precision)),
            fmt(Some(m.recall)),
            fmt(m.auprc),
            params
        );
        if let Some(b) = &self.random_baseline {
            let _ = writeln!(
                s,
                "{:<16} {:>7} {:>9} {:>7} {:>7} {:>9}",
                "random guess",
                fmt(Some(b.f1)),
                fmt(Some(b.precision)),
                fmt(Some(b.recall)),
                fmt(Some(b.auprc)),
                "-"
            );
        }
        s
    }
}

pub fn pr_curve_csv(points: &[PrPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(vec![]);
    for p in points {
        w.serialize(p)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn prf1_examples() {
        let flags = [true, true, true, true, false, false];
        let labels = [true, true, true, false, true, false];
        let m = prf1(&flags, &labels).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.75, 0.75, 0.75));
        let none = prf1(&[false, false], &[true, false]).unwrap();
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
        assert!(!none.notes.is_empty());
        let same = prf1(&labels, &labels).unwrap();
        assert_eq!((same.precision, same.recall, same.f1), (1.0, 1.0, 1.0));
        assert!(prf1(&[true], &[true, false]).is_err());
        assert!(prf1(&[], &[]).is_err());
    }

    #[test]
    fn auprc_examples() {
        let labels = [true, true, false, false];
        assert_eq!(auprc(&[4.0, 3.0, 2.0, 1.0], &labels).unwrap(), 1.0);
        let mut one = [false; 10];
        one[9] = true;
        let r: Vec<f64> = (0..10).map(|i| 10.0 - i as f64).collect();
        assert!((auprc(&r, &one).unwrap() - 0.1).abs() < 1e-15);
        assert!(auprc(&[1.0, 2.0], &[false, false]).is_err());
    }

    #[test]
    fn ties_are_grouped() {
        // All residuals tied: a single PR point at precision = P.
        let labels = [true, false, false, true];
        let pts = pr_curve(&[0.5; 4], &labels).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(auprc(&[0.5; 4], &labels).unwrap(), 0.5);
    }

    #[test]
    fn random_baseline_formulas() {
        let b = random_baseline(0.748).unwrap();
        assert_eq!((b.precision, b.recall, b.auprc), (0.748, 0.5, 0.748));
        assert!((b.f1 - 0.748 / 1.248).abs() < 1e-15);
        assert!(random_baseline(0.0).is_err());
        assert!(random_baseline(1.2).is_err());
        assert!(random_baseline(1.0).is_ok());
    }

    #[test]
    fn random_residuals_give_auprc_near_prevalence() {
        let p = 0.3;
        let mut total = 0.0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<bool> = (0..500).map(|_| rng.random::<f64>() < p).collect();
            let r: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
            total += auprc(&r, &labels).unwrap();
        }
        assert!((total / 20.0 - p).abs() < 0.05);
    }

    fn scored(flags: &[bool], labels: &[bool]) -> Vec<LabeledScore> {
        flags
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&f, &l))| LabeledScore {
                date: NaiveDate::from_ymd_opt(2022, 1, 1).unwrap() + chrono::Days::new(i as u64),
                residual: if f { 0.1 + i as f64 * 0.01 } else { -0.1 - i as f64 * 0.01 },
                flag: f,
                label: l,
            })
            .collect()
    }

    #[test]
    fn report_is_self_consistent() {
        let results = scored(
            &[true, true, false, false, true, false],
            &[true, false, true, false, true, false],
        );
        let rep = emit_report(&results, "seasonal", Some(478_614)).unwrap();
        let m = &rep.model;
        assert_eq!(m.counts.total(), m.n_images);
        let again = prf1_from_counts(&m.counts);
        assert_eq!((again.precision, again.recall, again.f1), (m.precision, m.recall, m.f1));
        assert!((m.f1 - 2.0 * m.precision * m.recall / (m.precision + m.recall)).abs() < 1e-15);
        assert_eq!(rep.random_baseline.unwrap().hazard_fraction, 0.5);
        assert!(rep.table().contains("479K"));
        let v: serde_json::Value = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["param_count"], 478_614);
        assert_eq!(v["auprc_rule"], AUPRC_RULE);
        assert!(emit_report(&[], "x", None).is_err());
    }

    #[test]
    fn all_negative_labels_are_reported_degenerate() {
        let rep = emit_report(&scored(&[false, true], &[false, false]), "x", None).unwrap();
        assert_eq!(rep.model.recall, 0.0);
        assert!(rep.model.auprc.is_none());
        assert!(rep.random_baseline.is_none());
        assert!(rep.model.notes.iter().any(|n| n.contains("recall")));
    }

    #[test]
    fn pr_csv_has_header() {
        let pts = pr_curve(&[0.3, 0.1], &[true, false]).unwrap();
        let csv = pr_curve_csv(&pts).unwrap();
        assert!(csv.starts_with("threshold,precision,recall\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    proptest::proptest! {
        #[test]
        fn auprc_invariant_under_monotone_maps(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut labels: Vec<bool> = (0..60).map(|_| rng.random::<bool>()).collect();
            labels[0] = true;
            let r: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t: Vec<f64> = r.iter().map(|x| (3.0 * x).exp() + 2.0).collect();
            let a = auprc(&r, &labels).unwrap();
            let b = auprc(&t, &labels).unwrap();
            proptest::prop_assert!((a - b).abs() < 1e-12);
            proptest::prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn baseline_f1_increases(p in 0.001f64..0.99, dp in 0.001f64..0.01) {
            proptest::prop_assert!(random_baseline(p + dp).unwrap().f1 > random_baseline(p).unwrap().f1);
        }
    }
}
