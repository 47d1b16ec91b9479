use serde::{Deserialize, Serialize};

/// Binary confusion counts with "reconstructed" as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    /// Tallies `(actual, predicted)` pairs; `true` is the positive class.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Self::default();
        for (actual, predicted) in pairs {
            match (actual, predicted) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The same counts with the negative class treated as positive.
    pub fn swapped(&self) -> Self {
        Self { tp: self.tn, fp: self.fn_, fn_: self.fp, tn: self.tp }
    }
}

/// `None` marks a 0/0 ratio; it is never reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
}

pub(crate) fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    // harmonic mean of precision and recall, written over the raw counts
    let f1 = match (precision, recall) {
        (Some(_), Some(_)) => ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_).filter(|_| c.tp > 0),
        _ => None,
    };
    Metrics { precision, recall, f1, tpr: recall, fpr: ratio(c.fp, c.fp + c.tn) }
}

pub fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    (precision + recall > 0.0).then(|| 2.0 * precision * recall / (precision + recall))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_formula() {
        let m = metrics(&ConfusionCounts { tp: 9, fp: 1, fn_: 1, tn: 9 });
        assert_eq!(m.precision, Some(0.9));
        assert_eq!(m.recall, Some(0.9));
        assert_eq!(m.f1, Some(0.9));
        assert_eq!(m.fpr, Some(0.1));
        assert_eq!(m.tpr, m.recall);
    }

    #[test]
    fn zero_over_zero_is_undefined() {
        let m = metrics(&ConfusionCounts { tp: 0, fp: 0, fn_: 4, tn: 6 });
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, Some(0.0));
        assert_eq!(m.f1, None);
        assert_eq!(metrics(&ConfusionCounts::default()).fpr, None);
    }

    #[test]
    fn f1_from_table_row() {
        let f1 = f1_score(0.95, 0.92).unwrap();
        assert!((f1 - 0.9348).abs() < 5e-5, "{f1}");
        assert_eq!(format!("{f1:.2}"), "0.93");
    }

    #[test]
    fn swap_exchanges_classes() {
        let c = ConfusionCounts::from_pairs([(true, true), (true, false), (false, false), (false, false)]);
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 0, fn_: 1, tn: 2 });
        assert_eq!(c.swapped(), ConfusionCounts { tp: 2, fp: 1, fn_: 0, tn: 1 });
        assert_eq!(c.total(), 4);
    }
}
