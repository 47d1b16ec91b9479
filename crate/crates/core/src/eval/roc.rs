use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are flagged; the first point uses `+inf`.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

fn check_scores(name: &str, scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(EvalError::Validation(format!("{name} scores are empty")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::Validation(format!("{name} scores contain NaN")));
    }
    Ok(())
}

/// Cumulative `(tp, fp, threshold)` after each group of equal scores,
/// descending, starting from `(0, 0, +inf)`.
fn steps(pos: &[f64], neg: &[f64]) -> Vec<(u64, u64, f64)> {
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = vec![(0, 0, f64::INFINITY)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 { tp += 1 } else { fp += 1 }
            i += 1;
        }
        out.push((tp, fp, s));
    }
    out
}

/// ROC curve over every distinct score and its trapezoidal AUC. Tied scores
/// form a single diagonal step, which gives ties half credit.
pub fn roc_auc(pos: &[f64], neg: &[f64]) -> Result<(RocCurve, f64)> {
    check_scores("positive", pos)?;
    check_scores("negative", neg)?;
    let (p, n) = (pos.len() as u64, neg.len() as u64);
    let steps = steps(pos, neg);
    // twice the area in units of one (1/p x 1/n) cell, exact in integers
    let mut area2: u128 = 0;
    for w in steps.windows(2) {
        let (tp0, fp0, _) = w[0];
        let (tp1, fp1, _) = w[1];
        area2 += (fp1 - fp0) as u128 * (tp0 + tp1) as u128;
    }
    let auc = area2 as f64 / (2 * p as u128 * n as u128) as f64;
    let points = steps
        .iter()
        .map(|&(tp, fp, threshold)| RocPoint { fpr: fp as f64 / n as f64, tpr: tp as f64 / p as f64, threshold })
        .collect();
    Ok((RocCurve { points }, auc))
}

/// Largest TPR among operating points whose FPR does not exceed `fpr_cap`.
pub fn tpr_at_fpr(pos: &[f64], neg: &[f64], fpr_cap: f64) -> Result<f64> {
    check_scores("positive", pos)?;
    check_scores("negative", neg)?;
    if !(0.0..=1.0).contains(&fpr_cap) {
        return Err(EvalError::Validation(format!("fpr cap {fpr_cap} outside [0,1]")));
    }
    let (p, n) = (pos.len() as f64, neg.len() as f64);
    Ok(steps(pos, neg)
        .into_iter()
        .filter(|&(_, fp, _)| fp as f64 / n <= fpr_cap)
        .map(|(tp, _, _)| tp as f64 / p)
        .fold(0.0, f64::max))
}
