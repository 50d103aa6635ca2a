//! The desk-scale ordering study: every unimodal model, the bimodal grid
//! screened on one seed, the best cells and AutoFraudNet with and without
//! heads on five seeds. Takes a few minutes on one core.

use mmfuse::experiment::{desk_synth_config, desk_train_config, run_ordering, Dataset, RunOptions};
use mmfuse::models::Profile;
use mmfuse::report::ordering_text;
use mmfuse::training::split_stratified;

fn main() -> mmfuse::Result<()> {
    let t = std::time::Instant::now();
    let data = Dataset::synthesize(&desk_synth_config(1))?;
    let cfg = desk_train_config();
    let split = split_stratified(data.table.labels(), cfg.ratios, cfg.split_seed)?;
    let opts = RunOptions {
        verbose: true,
        ..RunOptions::default()
    };
    let report = run_ordering(&data, &split, &cfg, &Profile::desk(), 3, &opts)?;
    print!("{}", ordering_text(&report));
    println!("{:.0}s", t.elapsed().as_secs_f64());
    Ok(())
}
