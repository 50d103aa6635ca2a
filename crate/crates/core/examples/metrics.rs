//! Threshold-free and thresholded metrics on a toy score set.

use mmfuse::metrics::{confusion_at, evaluate, pr_auc, prf1, tune_threshold, Class, ScoredSet};

fn main() -> mmfuse::Result<()> {
    let s = ScoredSet::new(
        vec![0.95, 0.9, 0.8, 0.8, 0.7, 0.6, 0.4, 0.35, 0.2, 0.1],
        vec![1, 0, 1, 1, 0, 0, 1, 0, 1, 0],
    )?;
    println!("PR AUC (average precision) {:.4}", pr_auc(&s)?);
    let t = tune_threshold(&s, 0.8);
    let c = confusion_at(&s, t);
    println!("threshold for 80% fraud recall: {t}  -> {c:?}");
    println!("fraud {:?}", prf1(&c, Class::Fraud));
    println!("not fraud {:?}", prf1(&c, Class::NotFraud));
    println!("{:#?}", evaluate(&s, &s, 0.8)?);
    Ok(())
}
