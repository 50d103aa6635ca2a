//! Command-line front end. `mmfuse <command> --help` lists every flag.
//!
//! Settings come from an optional TOML file (`--config`) with top-level
//! `profile`, `model`, `data`, `out`, `threads` keys and `[synth]` /
//! `[train]` sections named after [`SynthConfig`] and [`TrainConfig`]
//! fields. Flags override file values.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, load_checkpoint, load_checkpoint_as, save_checkpoint, save_claims, DatasetManifest, SynthConfig};
use crate::error::{Error, Result};
use crate::experiment::{
    parse_model, run_configs, run_grid, run_ordering, suite_configs, unimodal_configs, Dataset, ProfileSpec, RunOptions,
};
use crate::metrics::{evaluate, ScoredSet};
use crate::models::Profile;
use crate::report::{append_lines, rows_text, ResultsFile};
use crate::training::{split_stratified, train_seed, AggregateReport, SplitIndices, TrainConfig};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub profile: ProfileSpec,
    pub model: Option<String>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub synth: Option<SynthConfig>,
    pub train: TrainConfig,
}

impl ConfigFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Parser)]
#[command(name = "mmfuse", version, about = "Multimodal fusion experiments on claim data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Claim file (JSON lines). Replaces any data source in the file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// A seed count `N` (seeds 0..N) or a comma-separated list.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// `desk` or `reference`.
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Print one line per finished run to stderr.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteSet {
    /// The eight multimodal configurations.
    Multimodal,
    /// One model per feature.
    Unimodal,
    /// Best unimodal, best bimodal, AutoFraudNet with and without heads.
    Ordering,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic claim file and its generator manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        fraud_rate: Option<f64>,
        #[arg(long)]
        images_min: Option<usize>,
        #[arg(long)]
        images_max: Option<usize>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        alpha_v: Option<f64>,
        #[arg(long)]
        alpha_t: Option<f64>,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long)]
        text_missing_rate: Option<f64>,
    },
    /// Train one model on one seed; writes a checkpoint and its history.
    Train {
        #[command(flatten)]
        common: Common,
        /// Model selector, e.g. `afn+heads`, `bimodal:cds,spud:mlb`, `ud`.
        #[arg(long)]
        model: Option<String>,
    },
    /// Score a split with a checkpoint; the threshold is tuned on validation.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Expected architecture; a different one is an error.
        #[arg(long)]
        model: Option<String>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
    },
    /// All 56 feature-pair × strategy cells.
    Grid {
        #[command(flatten)]
        common: Common,
        /// Save a checkpoint per cell and seed.
        #[arg(long)]
        checkpoints: bool,
    },
    /// A fixed set of configurations on shared splits and seeds.
    Suite {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "multimodal")]
        set: SuiteSet,
        /// Grid cells rerun on every seed in the ordering study.
        #[arg(long, default_value_t = 3)]
        finalists: usize,
        #[arg(long)]
        checkpoints: bool,
    },
    /// Re-render results.txt and results.csv from a results directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit status for an error: 2 usage or validation, 3 data, 4 numeric.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Shape { .. } => 2,
        Error::Numeric(_) | Error::NonFinite { .. } => 4,
        Error::Availability { .. }
        | Error::UndefinedMetric(_)
        | Error::Parse { .. }
        | Error::Checkpoint(_)
        | Error::ConfigMismatch { .. }
        | Error::Io(_)
        | Error::Json(_) => 3,
    }
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("bad --seeds `{s}`"));
    if s.contains(',') {
        return s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect();
    }
    let n: u64 = s.trim().parse().map_err(|_| bad())?;
    if n == 0 {
        return Err(bad());
    }
    Ok((0..n).collect())
}

struct Resolved {
    file: ConfigFile,
    profile: Profile,
    train: TrainConfig,
    verbose: bool,
}

fn resolve(c: &Common) -> Result<Resolved> {
    let mut file = match &c.config {
        Some(p) => ConfigFile::read(p)?,
        None => ConfigFile::default(),
    };
    if let Some(p) = &c.profile {
        file.profile = ProfileSpec::Preset(p.clone());
    }
    if c.data.is_some() {
        file.data = c.data.clone();
        file.synth = None;
    }
    if c.out.is_some() {
        file.out = c.out.clone();
    }
    if c.threads.is_some() {
        file.threads = c.threads;
    }
    let mut train = file.train.clone();
    if let Some(s) = &c.seeds {
        train.seeds = parse_seeds(s)?;
    }
    if let Some(s) = c.seed {
        train.seeds = vec![s];
    }
    if let Some(v) = c.max_epochs {
        train.max_epochs = v;
    }
    if let Some(v) = c.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = c.lr {
        train.lr = v;
    }
    if let Some(v) = c.patience {
        train.patience = v;
    }
    train.validate()?;
    if let Some(n) = file.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(Resolved {
        profile: file.profile.resolve()?,
        file,
        train,
        verbose: c.verbose,
    })
}

impl Resolved {
    fn dataset(&self) -> Result<Dataset> {
        match (&self.file.data, &self.file.synth) {
            (Some(_), Some(_)) => Err(Error::Config("both `data` and `[synth]` are set; choose one".into())),
            (Some(path), None) => Dataset::load(path),
            (None, Some(cfg)) => Dataset::synthesize(cfg),
            (None, None) => Err(Error::Config("no data source: pass --data or a [synth] section".into())),
        }
    }

    fn split(&self, data: &Dataset) -> Result<SplitIndices> {
        split_stratified(data.table.labels(), self.train.ratios, self.train.split_seed)
    }

    fn out(&self, default: &str) -> PathBuf {
        self.file.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    fn model(&self, flag: &Option<String>) -> Result<Option<crate::models::ModelConfig>> {
        flag.as_ref()
            .or(self.file.model.as_ref())
            .map(|s| parse_model(s, &self.profile))
            .transpose()
    }
}

fn write_results(dir: &Path, results: &ResultsFile) -> Result<()> {
    results.write(dir)?;
    let history = dir.join("history.jsonl");
    if history.exists() {
        fs::remove_file(&history)?;
    }
    append_lines(&history, &crate::experiment::history_lines(&results.rows)?)?;
    print!("{}", results.render());
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            common,
            n,
            fraud_rate,
            images_min,
            images_max,
            beta,
            alpha_v,
            alpha_t,
            noise_sigma,
            text_missing_rate,
        } => {
            let r = resolve(&common)?;
            let mut cfg = r.file.synth.clone().unwrap_or_default();
            macro_rules! set {
                ($($flag:ident => $field:ident),*) => {$(if let Some(v) = $flag { cfg.$field = v; })*};
            }
            set!(n => n_claims, fraud_rate => fraud_rate, images_min => images_min, images_max => images_max,
                beta => beta, alpha_v => alpha_v, alpha_t => alpha_t, noise_sigma => noise_sigma,
                text_missing_rate => text_missing_rate);
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let path = r.file.out.clone().ok_or_else(|| Error::Config("synth needs --out <file>".into()))?;
            let records = generate_synthetic(&cfg)?;
            save_claims(&records, &path)?;
            let manifest = DatasetManifest {
                format: "mmfuse-claims-v1".into(),
                n_claims: records.len(),
                n_fraud: records.iter().filter(|r| r.label == 1).count(),
                generator: cfg,
            };
            let mpath = PathBuf::from(format!("{}.manifest.json", path.display()));
            fs::write(&mpath, serde_json::to_vec_pretty(&manifest)?)?;
            println!("wrote {} claims ({} fraud) to {}", manifest.n_claims, manifest.n_fraud, path.display());
            Ok(())
        }
        Command::Train { common, model } => {
            let r = resolve(&common)?;
            let config = r.model(&model)?.ok_or_else(|| Error::Config("train needs --model".into()))?;
            let data = r.dataset()?;
            let split = r.split(&data)?;
            let seed = r.train.seeds[0];
            let (trained, run) = train_seed(&config, &data.table, &split, &r.train, seed)?;
            let dir = r.out("runs/train");
            fs::create_dir_all(&dir)?;
            save_checkpoint(&trained, dir.join("model.ckpt"))?;
            let run_info = serde_json::json!({
                "config": config,
                "train": r.train,
                "data": data.fingerprint,
                "seed": seed,
            });
            fs::write(dir.join("run.json"), serde_json::to_vec_pretty(&run_info)?)?;
            let row = AggregateReport::from_runs(config.label(), config.parameter_count()?, vec![run]);
            write_results(&dir, &ResultsFile::new("train", vec![row]))
        }
        Command::Eval {
            common,
            checkpoint,
            model,
            split,
        } => {
            let r = resolve(&common)?;
            let m = match r.model(&model)? {
                Some(expected) => load_checkpoint_as(&checkpoint, &expected)?,
                None => load_checkpoint(&checkpoint)?,
            };
            let data = r.dataset()?;
            let s = r.split(&data)?;
            let ids = match split {
                SplitName::Train => &s.train,
                SplitName::Val => &s.val,
                SplitName::Test => &s.test,
            };
            let scored = |ids: &[usize]| -> Result<ScoredSet> {
                let scores = m.score(&data.table, ids)?.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
                ScoredSet::new(scores, ids.iter().map(|&i| data.table.labels()[i]).collect())
            };
            let report = evaluate(&scored(&s.val)?, &scored(ids)?, r.train.min_recall)?;
            let row = AggregateReport::from_runs(
                m.config().label(),
                m.config().parameter_count()?,
                vec![crate::training::SeedRun {
                    seed: 0,
                    report,
                    fit: crate::training::FitResult {
                        history: vec![],
                        best_epoch: 0,
                        best_monitor: f64::NAN,
                        stopped_early: false,
                        steps: 0,
                    },
                }],
            );
            print!("{}", rows_text(&[row]));
            if let Some(dir) = &r.file.out {
                fs::create_dir_all(dir)?;
                fs::write(dir.join("eval.json"), serde_json::to_vec_pretty(&report)?)?;
            }
            Ok(())
        }
        Command::Grid { common, checkpoints } => {
            let r = resolve(&common)?;
            let data = r.dataset()?;
            let split = r.split(&data)?;
            let dir = r.out("runs/grid");
            let opts = RunOptions {
                out: Some(dir.clone()),
                checkpoints,
                verbose: r.verbose,
            };
            let grid = run_grid(&data, &split, &r.train, &r.profile, &opts)?;
            let mut results = ResultsFile::new("grid", grid.cells.iter().map(|(_, r)| r.clone()).collect());
            results.grid = Some(grid);
            write_results(&dir, &results)
        }
        Command::Suite {
            common,
            set,
            finalists,
            checkpoints,
        } => {
            let r = resolve(&common)?;
            let data = r.dataset()?;
            let split = r.split(&data)?;
            let dir = r.out("runs/suite");
            let opts = RunOptions {
                out: Some(dir.clone()),
                checkpoints,
                verbose: r.verbose,
            };
            let results = match set {
                SuiteSet::Multimodal => {
                    ResultsFile::new("suite", run_configs(&suite_configs(&r.profile), &data, &split, &r.train, &opts)?)
                }
                SuiteSet::Unimodal => {
                    ResultsFile::new("unimodal", run_configs(&unimodal_configs(&r.profile), &data, &split, &r.train, &opts)?)
                }
                SuiteSet::Ordering => {
                    let o = run_ordering(&data, &split, &r.train, &r.profile, finalists, &opts)?;
                    let mut rows = o.unimodal.clone();
                    rows.extend(o.finalists.iter().map(|(_, r)| r.clone()));
                    rows.push(o.autofraudnet.clone());
                    rows.push(o.autofraudnet_heads.clone());
                    let mut f = ResultsFile::new("ordering", rows);
                    f.ordering = Some(o);
                    f
                }
            };
            write_results(&dir, &results)
        }
        Command::Report { out } => {
            let results = ResultsFile::read(&out)?;
            results.write(&out)?;
            print!("{}", results.render());
            Ok(())
        }
    }
}
