//! Precision, recall and F-measure of binary masks.
//!
//! Any ratio with an empty denominator evaluates to 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::GtMask;

pub const DEFAULT_BETA_SQUARED: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl std::ops::Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub name: String,
    pub confusion: Confusion,
    #[serde(flatten)]
    pub prf: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub beta_squared: f64,
    pub per_image: Vec<ImageMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: Prf,
    pub micro: Prf,
}

/// Pixel-wise counts with salient as the positive class.
pub fn confusion(pred: &GtMask, gt: &GtMask) -> Result<Confusion> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(Error::DimensionMismatch(format!(
            "prediction is {}x{}, ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let mut c = Confusion::default();
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn prf(c: &Confusion, beta_squared: f64) -> Prf {
    let tp = c.tp as f64;
    let precision = ratio(tp, tp + c.fp as f64);
    let recall = ratio(tp, tp + c.fn_ as f64);
    let f_measure = ratio((1.0 + beta_squared) * precision * recall, beta_squared * precision + recall);
    Prf {
        precision,
        recall,
        f_measure,
    }
}

fn check_beta(beta_squared: f64) -> Result<()> {
    if beta_squared.is_finite() && beta_squared >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("beta squared {beta_squared} must be >= 0")))
    }
}

/// Macro (mean of per-image values) and micro (pooled counts) aggregates.
pub fn aggregate(per_image: &[(String, Confusion)], beta_squared: f64) -> Result<MetricsReport> {
    check_beta(beta_squared)?;
    if per_image.is_empty() {
        return Err(Error::Empty("no images to aggregate".into()));
    }
    let per_image: Vec<ImageMetrics> = per_image
        .iter()
        .map(|(name, c)| ImageMetrics {
            name: name.clone(),
            confusion: *c,
            prf: prf(c, beta_squared),
        })
        .collect();
    let n = per_image.len() as f64;
    let mean = |f: fn(&Prf) -> f64| per_image.iter().map(|m| f(&m.prf)).sum::<f64>() / n;
    let macro_avg = Prf {
        precision: mean(|p| p.precision),
        recall: mean(|p| p.recall),
        f_measure: mean(|p| p.f_measure),
    };
    let pooled = per_image.iter().fold(Confusion::default(), |acc, m| acc + m.confusion);
    Ok(MetricsReport {
        beta_squared,
        micro: prf(&pooled, beta_squared),
        macro_avg,
        per_image,
    })
}

impl MetricsReport {
    /// Plain-text table, one line per image followed by the aggregates.
    pub fn to_table(&self) -> String {
        let width = self.per_image.iter().map(|m| m.name.len()).chain([5]).max().unwrap_or(5);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>9}  {:>9}", "image", "precision", "recall", "F");
        let mut row = |name: &str, p: &Prf| {
            let _ = writeln!(
                out,
                "{name:<width$}  {:>9.4}  {:>9.4}  {:>9.4}",
                p.precision, p.recall, p.f_measure
            );
        };
        for m in &self.per_image {
            row(&m.name, &m.prf);
        }
        row("macro", &self.macro_avg);
        row("micro", &self.micro);
        let _ = writeln!(out, "beta^2 = {}", self.beta_squared);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(tp: u64, fp: u64, tn: u64, fn_: u64) -> Confusion {
        Confusion { tp, fp, tn, fn_ }
    }

    #[test]
    fn confusion_examples() {
        let gt = GtMask::new(2, 2, vec![1, 1, 0, 0]).unwrap();
        let pred = GtMask::new(2, 2, vec![1, 0, 1, 0]).unwrap();
        assert_eq!(confusion(&pred, &gt).unwrap(), c(1, 1, 1, 1));
        let same = confusion(&gt, &gt).unwrap();
        assert_eq!((same.fp, same.fn_), (0, 0));
        let inv = GtMask::new(2, 2, vec![0, 0, 1, 1]).unwrap();
        let comp = confusion(&inv, &gt).unwrap();
        assert_eq!((comp.tp, comp.tn), (0, 0));
        assert!(confusion(&GtMask::filled(2, 1, 0).unwrap(), &gt).is_err());
    }

    #[test]
    fn prf_examples() {
        assert_eq!(prf(&c(5, 0, 3, 0), 0.3), Prf { precision: 1.0, recall: 1.0, f_measure: 1.0 });
        assert_eq!(prf(&c(3, 1, 0, 1), 1.0), Prf { precision: 0.75, recall: 0.75, f_measure: 0.75 });
        assert_eq!(prf(&c(0, 2, 1, 3), 0.3), Prf { precision: 0.0, recall: 0.0, f_measure: 0.0 });
        assert_eq!(prf(&c(0, 0, 4, 0), 0.3), Prf { precision: 0.0, recall: 0.0, f_measure: 0.0 });
        // beta^2 = 0 reduces F to precision.
        assert_eq!(prf(&c(2, 2, 0, 6), 0.0).f_measure, 0.5);
    }

    #[test]
    fn aggregate_examples() {
        let one = aggregate(&[("a".into(), c(3, 1, 2, 1))], 0.3).unwrap();
        assert_eq!(one.macro_avg, one.micro);
        assert_eq!(one.macro_avg, prf(&c(3, 1, 2, 1), 0.3));
        let two = aggregate(&[("a".into(), c(4, 0, 0, 0)), ("b".into(), c(0, 4, 0, 4))], 0.3).unwrap();
        assert_eq!(two.macro_avg.f_measure, 0.5);
        assert!(aggregate(&[], 0.3).is_err());
        assert!(aggregate(&[("a".into(), c(1, 0, 0, 0))], -1.0).is_err());
    }

    #[test]
    fn micro_matches_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let set: Vec<(String, Confusion)> = (0..10)
            .map(|i| {
                let cm = c(rng.random_range(0..500), rng.random_range(0..500), rng.random_range(0..500), rng.random_range(0..500));
                (format!("img{i}"), cm)
            })
            .collect();
        let report = aggregate(&set, 0.3).unwrap();
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (_, cm) in &set {
            tp += cm.tp;
            fp += cm.fp;
            fn_ += cm.fn_;
        }
        let p = tp as f64 / (tp + fp) as f64;
        let r = tp as f64 / (tp + fn_) as f64;
        let f = 1.3 * p * r / (0.3 * p + r);
        assert!((report.micro.precision - p).abs() < 1e-15);
        assert!((report.micro.recall - r).abs() < 1e-15);
        assert!((report.micro.f_measure - f).abs() < 1e-15);
        let macro_f = report.per_image.iter().map(|m| m.prf.f_measure).sum::<f64>() / 10.0;
        assert!((report.macro_avg.f_measure - macro_f).abs() <= 1e-12);
    }

    #[test]
    fn report_serializes_and_tabulates() {
        let report = aggregate(&[("cat".into(), c(1, 1, 1, 1))], 1.0).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"macro\"") && json.contains("\"fn\":1") && json.contains("\"f_measure\":0.5"));
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        let table = report.to_table();
        assert!(table.contains("cat") && table.contains("0.5000") && table.lines().count() == 5);
    }

    fn counts() -> impl Strategy<Value = Confusion> {
        (0u64..1000, 0u64..1000, 0u64..1000, 0u64..1000).prop_map(|(tp, fp, tn, fn_)| c(tp, fp, tn, fn_))
    }

    proptest! {
        #[test]
        fn metrics_lie_in_unit_interval(cm in counts(), b in 0.0f64..4.0) {
            let m = prf(&cm, b);
            for v in [m.precision, m.recall, m.f_measure] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if m.precision > 0.0 && m.recall > 0.0 {
                let (lo, hi) = (m.precision.min(m.recall), m.precision.max(m.recall));
                prop_assert!(m.f_measure >= lo - 1e-12 && m.f_measure <= hi + 1e-12);
            }
        }

        #[test]
        fn scale_free(cm in counts(), k in 1u64..50, b in 0.0f64..4.0) {
            let scaled = c(cm.tp * k, cm.fp * k, cm.tn * k, cm.fn_ * k);
            let (a, s) = (prf(&cm, b), prf(&scaled, b));
            prop_assert!((a.precision - s.precision).abs() < 1e-12);
            prop_assert!((a.recall - s.recall).abs() < 1e-12);
            prop_assert!((a.f_measure - s.f_measure).abs() < 1e-12);
        }

        #[test]
        fn swapping_roles_swaps_precision_and_recall(
            bits in proptest::collection::vec((0u8..2, 0u8..2), 1..64),
        ) {
            let n = bits.len();
            let pred = GtMask::new(n, 1, bits.iter().map(|b| b.0).collect()).unwrap();
            let gt = GtMask::new(n, 1, bits.iter().map(|b| b.1).collect()).unwrap();
            let ab = confusion(&pred, &gt).unwrap();
            let ba = confusion(&gt, &pred).unwrap();
            prop_assert_eq!(ab.total(), n as u64);
            prop_assert_eq!((ab.fp, ab.fn_), (ba.fn_, ba.fp));
            let (x, y) = (prf(&ab, 1.0), prf(&ba, 1.0));
            prop_assert_eq!((x.precision, x.recall), (y.recall, y.precision));
        }
    }
}
