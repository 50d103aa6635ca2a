//! Trains AutoFraudNet with auxiliary heads on synthetic claims, prints
//! the epoch history and the test report, and round-trips a checkpoint.

use mmfuse::data::{load_checkpoint, save_checkpoint, SynthConfig};
use mmfuse::experiment::{desk_train_config, Dataset};
use mmfuse::models::{ModelConfig, Profile};
use mmfuse::training::{evaluate_model, split_stratified, train_seed};

fn main() -> mmfuse::Result<()> {
    let data = Dataset::synthesize(&SynthConfig {
        n_claims: 6_000,
        images_max: 3,
        seed: 2,
        ..SynthConfig::default()
    })?;
    let cfg = desk_train_config();
    let split = split_stratified(data.table.labels(), cfg.ratios, cfg.split_seed)?;
    let config = ModelConfig::autofraudnet(true, &Profile::desk());
    println!("{}: {} parameters", config.label(), config.parameter_count()?);

    let (model, run) = train_seed(&config, &data.table, &split, &cfg, 0)?;
    for e in &run.fit.history {
        let (h1, h2) = e.train_loss_heads.unwrap_or_default();
        println!(
            "epoch {:>2}  loss {:.4} (heads {:.4} {:.4})  val PR AUC {:.4}{}",
            e.epoch,
            e.train_loss,
            h1,
            h2,
            e.val_pr_auc,
            if e.improved { "  *" } else { "" }
        );
    }
    let r = run.report;
    println!(
        "test PR AUC {:.4}, balanced accuracy {:.4}, threshold {:.3} (validation recall {:.3})",
        r.pr_auc, r.balanced_accuracy, r.threshold, r.tuning_recall
    );

    let path = std::env::temp_dir().join("afn_heads.ckpt");
    save_checkpoint(&model, &path)?;
    let back = load_checkpoint(&path)?;
    let again = evaluate_model(&back, &data.table, &split, cfg.min_recall)?;
    assert_eq!(again, r);
    println!("checkpoint {} reproduces the report", path.display());
    Ok(())
}
