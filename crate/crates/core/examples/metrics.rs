//! Confusion-matrix metrics, ROC AUC and TPR at a fixed FPR.

use aeforge::eval::{metrics, roc_auc, tpr_at_fpr, ConfusionCounts};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pairs = [(true, true), (true, true), (true, false), (false, false), (false, true), (false, false)];
    let counts = ConfusionCounts::from_pairs(pairs);
    println!("{counts:?}\n{:?}", metrics(&counts));

    let pos = [0.9, 0.8, 0.75, 0.6, 0.4];
    let neg = [0.7, 0.3, 0.2, 0.1, 0.05, 0.02];
    let (curve, auc) = roc_auc(&pos, &neg)?;
    println!("AUC {auc:.4} over {} operating points", curve.points.len());
    for cap in [0.0, 0.2, 0.5] {
        println!("TPR at FPR <= {cap}: {:.3}", tpr_at_fpr(&pos, &neg, cap)?);
    }
    Ok(())
}
