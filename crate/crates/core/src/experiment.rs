//! Experiment drivers: model selectors, the unimodal set, the 56-cell
//! bimodal grid, the multimodal suite and the ordering study built from
//! them.
//!
//! Cells run in parallel on the rayon pool. Each cell trains its seeds in
//! order and owns its model; results are merged by the caller. With an
//! output directory, every finished cell is cached under `cells/` and a
//! rerun with the same model, training settings and data skips it.

use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, load_claims, save_checkpoint, SynthConfig};
use crate::error::{Error, Result};
use crate::features::{ClaimTable, Feature};
use crate::fusion::FusionKind;
use crate::models::{enumerate_pairs, ModelConfig, Profile};
use crate::training::{train_seed, AggregateReport, EpochRecord, SeedRun, SplitIndices, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Training budget used for desk-scale runs.
pub fn desk_train_config() -> TrainConfig {
    TrainConfig {
        max_epochs: 8,
        ..TrainConfig::default()
    }
}

/// 20k claims at 3% fraud with one to three images per claim.
pub fn desk_synth_config(seed: u64) -> SynthConfig {
    SynthConfig {
        images_max: 3,
        seed,
        ..SynthConfig::default()
    }
}

/// A named width preset or an explicit [`Profile`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Preset(String),
    Custom(Profile),
}

impl Default for ProfileSpec {
    fn default() -> Self {
        ProfileSpec::Preset("desk".into())
    }
}

impl ProfileSpec {
    pub fn resolve(&self) -> Result<Profile> {
        match self {
            ProfileSpec::Preset(name) => match name.as_str() {
                "desk" => Ok(Profile::desk()),
                "reference" => Ok(Profile::reference()),
                other => Err(Error::Config(format!("unknown profile `{other}` (desk, reference)"))),
            },
            ProfileSpec::Custom(p) => Ok(p.clone()),
        }
    }
}

/// Parses a model selector:
///
/// | selector | model |
/// |---|---|
/// | `cds`, `unimodal:ud` | single feature |
/// | `bimodal:cds,spud:mlb` | feature pair with one fusion block |
/// | `concat:all`, `concat:no_text` | concatenation MLP |
/// | `sf:mfb` | slow fusion with the given second block |
/// | `afn`, `afn+heads` | AutoFraudNet |
pub fn parse_model(selector: &str, p: &Profile) -> Result<ModelConfig> {
    let s = selector.trim().to_ascii_lowercase();
    let bad = || Error::Config(format!("unrecognised model selector `{selector}`"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["afn"] | ["autofraudnet"] => Ok(ModelConfig::autofraudnet(false, p)),
        ["afn+heads"] | ["autofraudnet+heads"] => Ok(ModelConfig::autofraudnet(true, p)),
        ["concat", "all"] => Ok(ModelConfig::concat(true, p)),
        ["concat", "no_text"] => Ok(ModelConfig::concat(false, p)),
        ["sf", kind] => Ok(ModelConfig::slow_fusion(FusionKind::parse(kind)?, p)),
        ["unimodal", f] | [f] => Feature::parse(f).map(|f| ModelConfig::unimodal(f, p)).map_err(|_| bad()),
        ["bimodal", pair, kind] => {
            let (a, b) = pair.split_once(',').ok_or_else(bad)?;
            ModelConfig::bimodal((Feature::parse(a)?, Feature::parse(b)?), FusionKind::parse(kind)?, p)
        }
        _ => Err(bad()),
    }
}

/// File-name form of a model label.
pub fn slug(label: &str) -> String {
    let mut out = String::new();
    for c in label.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

pub fn unimodal_configs(p: &Profile) -> Vec<ModelConfig> {
    Feature::ALL.iter().map(|&f| ModelConfig::unimodal(f, p)).collect()
}

/// The eight multimodal configurations in report order.
pub fn suite_configs(p: &Profile) -> Vec<ModelConfig> {
    let mut v = vec![ModelConfig::concat(true, p), ModelConfig::concat(false, p)];
    for k in [FusionKind::Mfb, FusionKind::Mlb, FusionKind::Block, FusionKind::BlockTucker] {
        v.push(ModelConfig::slow_fusion(k, p));
    }
    v.push(ModelConfig::autofraudnet(false, p));
    v.push(ModelConfig::autofraudnet(true, p));
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCell {
    pub pair: (Feature, Feature),
    pub kind: FusionKind,
}

impl GridCell {
    pub fn pair_label(&self) -> String {
        format!("{} × {}", self.pair.0, self.pair.1)
    }
}

/// 8 pairs × 7 strategies, pair-major.
pub fn grid_cells() -> Vec<GridCell> {
    enumerate_pairs()
        .into_iter()
        .flat_map(|pair| FusionKind::ALL.into_iter().map(move |kind| GridCell { pair, kind }))
        .collect()
}

/// A loaded dataset; claims without every modality are dropped.
pub struct Dataset {
    pub table: ClaimTable,
    pub dropped: usize,
    pub fingerprint: String,
}

impl Dataset {
    pub fn from_table(table: ClaimTable, dropped: usize) -> Self {
        let mut h = DefaultHasher::new();
        for i in 0..table.len() {
            table.claim_id(i).hash(&mut h);
            table.labels()[i].hash(&mut h);
        }
        let fingerprint = format!("{}:{:016x}", table.len(), h.finish());
        Dataset {
            table,
            dropped,
            fingerprint,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let loaded = load_claims(path)?;
        let dropped = loaded.unavailable.len();
        Ok(Self::from_table(ClaimTable::from_records(&loaded.available())?, dropped))
    }

    pub fn synthesize(cfg: &SynthConfig) -> Result<Self> {
        let records = generate_synthetic(cfg)?;
        let full: Vec<_> = records.into_iter().filter(|r| r.require(&Feature::ALL).is_ok()).collect();
        let dropped = cfg.n_claims - full.len();
        Ok(Self::from_table(ClaimTable::from_records(&full)?, dropped))
    }
}

/// Where and what to persist while running cells.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub checkpoints: bool,
    /// One stderr line per finished run.
    pub verbose: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CellFile {
    schema: u32,
    config: ModelConfig,
    train: TrainConfig,
    data: String,
    report: AggregateReport,
}

/// Trains every configuration on every seed of `cfg`, cells in parallel.
pub fn run_configs(
    configs: &[ModelConfig],
    data: &Dataset,
    split: &SplitIndices,
    cfg: &TrainConfig,
    opts: &RunOptions,
) -> Result<Vec<AggregateReport>> {
    cfg.validate()?;
    if let Some(out) = &opts.out {
        fs::create_dir_all(out.join("cells"))?;
        if opts.checkpoints {
            fs::create_dir_all(out.join("checkpoints"))?;
        }
    }
    configs.par_iter().map(|c| run_cell(c, data, split, cfg, opts)).collect()
}

fn run_cell(
    config: &ModelConfig,
    data: &Dataset,
    split: &SplitIndices,
    cfg: &TrainConfig,
    opts: &RunOptions,
) -> Result<AggregateReport> {
    let name = slug(&config.label());
    let cache = opts.out.as_ref().map(|o| o.join("cells").join(format!("{name}.json")));
    if let Some(path) = cache.as_ref().filter(|p| p.exists()) {
        let file: CellFile = serde_json::from_slice(&fs::read(path)?)?;
        if file.schema == SCHEMA_VERSION && &file.config == config && &file.train == cfg && file.data == data.fingerprint {
            return Ok(file.report);
        }
    }
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let (model, run) = train_seed(config, &data.table, split, cfg, seed)?;
        if let (Some(out), true) = (&opts.out, opts.checkpoints) {
            save_checkpoint(&model, out.join("checkpoints").join(format!("{name}_seed{seed}.ckpt")))?;
        }
        if opts.verbose {
            eprintln!(
                "{} seed {seed}: test PR AUC {:.4}, {} epochs",
                config.label(),
                run.report.pr_auc,
                run.fit.history.len()
            );
        }
        runs.push(run);
    }
    let report = AggregateReport::from_runs(config.label(), config.parameter_count()?, runs);
    if let Some(path) = cache {
        let file = CellFile {
            schema: SCHEMA_VERSION,
            config: config.clone(),
            train: cfg.clone(),
            data: data.fingerprint.clone(),
            report,
        };
        fs::write(&path, serde_json::to_vec(&file)?)?;
        return Ok(file.report);
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridReport {
    pub cells: Vec<(GridCell, AggregateReport)>,
}

impl GridReport {
    pub fn get(&self, cell: GridCell) -> Option<&AggregateReport> {
        self.cells.iter().find(|(c, _)| *c == cell).map(|(_, r)| r)
    }

    /// Cells ordered by mean validation monitor, best first.
    pub fn ranked_by_validation(&self) -> Vec<(GridCell, f64)> {
        let mut v: Vec<(GridCell, f64)> = self
            .cells
            .iter()
            .map(|(c, r)| {
                let m = r.runs.iter().map(|s| s.fit.best_monitor).sum::<f64>() / r.runs.len() as f64;
                (*c, m)
            })
            .collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1));
        v
    }
}

pub fn run_grid(data: &Dataset, split: &SplitIndices, cfg: &TrainConfig, p: &Profile, opts: &RunOptions) -> Result<GridReport> {
    let cells = grid_cells();
    let configs = cells
        .iter()
        .map(|c| ModelConfig::bimodal(c.pair, c.kind, p))
        .collect::<Result<Vec<_>>>()?;
    let reports = run_configs(&configs, data, split, cfg, opts)?;
    Ok(GridReport {
        cells: cells.into_iter().zip(reports).collect(),
    })
}

/// Best unimodal feature, best bimodal cell and AutoFraudNet with and
/// without heads, all on the same split.
///
/// The 56 cells are screened with the first seed only; the `finalists`
/// cells with the best validation monitor are then rerun on every seed and
/// the best of those by mean test PR AUC is the bimodal entry.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrderingReport {
    pub unimodal: Vec<AggregateReport>,
    pub screen: GridReport,
    pub finalists: Vec<(GridCell, AggregateReport)>,
    pub autofraudnet: AggregateReport,
    pub autofraudnet_heads: AggregateReport,
}

impl OrderingReport {
    pub fn best_unimodal(&self) -> &AggregateReport {
        best_by_pr_auc(self.unimodal.iter())
    }

    pub fn best_bimodal(&self) -> &AggregateReport {
        best_by_pr_auc(self.finalists.iter().map(|(_, r)| r))
    }
}

fn best_by_pr_auc<'a>(it: impl Iterator<Item = &'a AggregateReport>) -> &'a AggregateReport {
    it.max_by(|a, b| a.pr_auc().mean.total_cmp(&b.pr_auc().mean)).expect("non-empty")
}

pub fn run_ordering(
    data: &Dataset,
    split: &SplitIndices,
    cfg: &TrainConfig,
    p: &Profile,
    finalists: usize,
    opts: &RunOptions,
) -> Result<OrderingReport> {
    let sub = |name: &str| RunOptions {
        out: opts.out.as_ref().map(|o| o.join(name)),
        checkpoints: opts.checkpoints,
        verbose: opts.verbose,
    };
    let unimodal = run_configs(&unimodal_configs(p), data, split, cfg, &sub("unimodal"))?;
    let screen_cfg = TrainConfig {
        seeds: cfg.seeds[..1].to_vec(),
        ..cfg.clone()
    };
    let screen = run_grid(data, split, &screen_cfg, p, &sub("screen"))?;
    let top: Vec<GridCell> = screen.ranked_by_validation().into_iter().take(finalists.max(1)).map(|(c, _)| c).collect();
    let mut configs = top
        .iter()
        .map(|c| ModelConfig::bimodal(c.pair, c.kind, p))
        .collect::<Result<Vec<_>>>()?;
    configs.push(ModelConfig::autofraudnet(false, p));
    configs.push(ModelConfig::autofraudnet(true, p));
    let mut reports = run_configs(&configs, data, split, cfg, &sub("final"))?;
    let autofraudnet_heads = reports.pop().expect("heads row");
    let autofraudnet = reports.pop().expect("afn row");
    Ok(OrderingReport {
        unimodal,
        screen,
        finalists: top.into_iter().zip(reports).collect(),
        autofraudnet,
        autofraudnet_heads,
    })
}

/// One line per epoch of every run, tagged with label and seed.
pub fn history_lines(reports: &[AggregateReport]) -> Result<Vec<String>> {
    #[derive(Serialize)]
    struct Line<'a> {
        label: &'a str,
        seed: u64,
        #[serde(flatten)]
        record: &'a EpochRecord,
    }
    let mut out = Vec::new();
    for r in reports {
        for SeedRun { seed, fit, .. } in &r.runs {
            for record in &fit.history {
                out.push(serde_json::to_string(&Line {
                    label: &r.label,
                    seed: *seed,
                    record,
                })?);
            }
        }
    }
    Ok(out)
}
