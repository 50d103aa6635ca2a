//! Runs all 56 feature-pair × strategy cells with one seed on a small
//! dataset and prints the two PR AUC panels. Results and a per-cell cache
//! go to the directory given as the first argument.

use std::path::PathBuf;

use mmfuse::data::SynthConfig;
use mmfuse::experiment::{desk_train_config, run_grid, Dataset, RunOptions};
use mmfuse::models::Profile;
use mmfuse::report::ResultsFile;
use mmfuse::training::{split_stratified, TrainConfig};

fn main() -> mmfuse::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("mmfuse-grid"));
    let data = Dataset::synthesize(&SynthConfig {
        n_claims: 4_000,
        images_max: 2,
        seed: 3,
        ..SynthConfig::default()
    })?;
    let cfg = TrainConfig {
        seeds: vec![0],
        max_epochs: 4,
        ..desk_train_config()
    };
    let split = split_stratified(data.table.labels(), cfg.ratios, cfg.split_seed)?;
    let opts = RunOptions {
        out: Some(out.clone()),
        ..RunOptions::default()
    };
    let grid = run_grid(&data, &split, &cfg, &Profile::desk(), &opts)?;
    let mut results = ResultsFile::new("grid", grid.cells.iter().map(|(_, r)| r.clone()).collect());
    results.grid = Some(grid);
    results.write(&out)?;
    print!("{}", mmfuse::report::grid_text(results.grid.as_ref().unwrap()));
    println!("wrote {}; rerunning reuses the cached cells", out.display());
    Ok(())
}
