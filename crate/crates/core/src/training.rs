//! Training protocol: stratified splits, class-balanced mini-batches,
//! Adam, early stopping on a validation metric and multi-seed aggregation.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::ClaimTable;
use crate::graph::{Graph, Mode, ParamSet};
use crate::metrics::{evaluate, pr_auc, MetricsReport, ScoredSet, DEFAULT_MIN_RECALL};
use crate::models::{Model, ModelConfig};
use crate::rng::{purpose, stream};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    PrAuc,
    /// Negated mean validation loss, so that larger is better.
    NegLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub monitor: Monitor,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fraud recall the decision threshold must reach on validation.
    pub min_recall: f64,
    pub split_seed: u64,
    pub ratios: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 50,
            patience: 3,
            seeds: vec![0, 1, 2, 3, 4],
            monitor: Monitor::PrAuc,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            min_recall: DEFAULT_MIN_RECALL,
            split_seed: 0,
            ratios: [0.8, 0.1, 0.1],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patience < 1 {
            return fail("patience must be at least 1".into());
        }
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return fail(format!("batch_size {} must be even and positive", self.batch_size));
        }
        if self.max_epochs < 1 {
            return fail("max_epochs must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.eps > 0.0) {
            return fail("lr and eps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("Adam betas must lie in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.min_recall) {
            return fail("min_recall must lie in [0, 1]".into());
        }
        check_ratios(&self.ratios)
    }
}

fn check_ratios(r: &[f64; 3]) -> Result<()> {
    if r.iter().any(|&x| !(x > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {r:?} must be positive and sum to 1")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles each class on its own stream and cuts it proportionally, so
/// every split keeps the class ratio up to one claim.
pub fn split_stratified(labels: &[usize], ratios: [f64; 3], seed: u64) -> Result<SplitIndices> {
    check_ratios(&ratios)?;
    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for class in 0..2 {
        let mut ids: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if ids.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "class {class} has {} claims; stratified splitting needs at least 3",
                ids.len()
            )));
        }
        ids.shuffle(&mut stream(seed, purpose::SPLIT, class as u64));
        let n = ids.len();
        let n_train = ((n as f64 * ratios[0]).round() as usize).clamp(1, n - 2);
        let n_val = ((n as f64 * ratios[1]).round() as usize).clamp(1, n - n_train - 1);
        out.train.extend_from_slice(&ids[..n_train]);
        out.val.extend_from_slice(&ids[n_train..n_train + n_val]);
        out.test.extend_from_slice(&ids[n_train + n_val..]);
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    for ids in [&mut out.train, &mut out.val, &mut out.test] {
        ids.sort_unstable();
    }
    Ok(out)
}

/// Mini-batches with exactly half of each class. One epoch passes over
/// the majority class once, in a fresh order; the minority class is drawn
/// with replacement.
#[derive(Clone, Debug)]
pub struct BalancedBatches {
    majority: Vec<usize>,
    minority: Vec<usize>,
    batch_size: usize,
    seed: u64,
}

impl BalancedBatches {
    pub fn new(train_ids: &[usize], labels: &[usize], batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size < 2 || batch_size % 2 != 0 {
            return Err(Error::InvalidArgument(format!("batch size {batch_size} must be even")));
        }
        let (pos, neg): (Vec<usize>, Vec<usize>) = train_ids.iter().partition(|&&i| labels[i] == 1);
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::InvalidArgument("balanced batches need both classes".into()));
        }
        let (majority, minority) = if neg.len() >= pos.len() { (neg, pos) } else { (pos, neg) };
        Ok(BalancedBatches {
            majority,
            minority,
            batch_size,
            seed,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        (2 * self.majority.len()).div_ceil(self.batch_size)
    }

    /// Batches of epoch `epoch`; each lists majority ids first, then
    /// minority ids.
    pub fn epoch(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut rng: ChaCha8Rng = stream(self.seed, purpose::BATCHES, epoch as u64);
        let mut order = self.majority.clone();
        order.shuffle(&mut rng);
        let half = self.batch_size / 2;
        (0..self.batches_per_epoch())
            .map(|b| {
                let mut batch: Vec<usize> = (0..half).map(|j| order[(b * half + j) % order.len()]).collect();
                batch.extend((0..half).map(|_| self.minority[rng.gen_range(0..self.minority.len())]));
                batch
            })
            .collect()
    }
}

/// Bias-corrected Adam with moments kept in 64 bits.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Real>(params: &ParamSet<T>, cfg: &TrainConfig) -> Self {
        let zeros = || params.ids().map(|id| vec![0.0; params.get(id).len()]).collect();
        Adam {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step<T: Real>(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (id, g) in params.ids().zip(grads) {
            if g.shape() != params.get(id).shape() {
                return Err(Error::shape("adam_step", params.get(id).shape(), g.shape()));
            }
            if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {} at {}[{i}] after {} steps",
                    g.data()[i].to_f64(),
                    params.name(id),
                    self.t
                )));
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let p = params.get_mut(id).data_mut();
            for (i, gv) in grads[k].data().iter().enumerate() {
                let g = gv.to_f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let update = self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                p[i] = T::from_f64(p[i].to_f64() - update);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without a strict increase.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> StopDecision {
        match self.best {
            Some((_, b)) if !(value > b) => {
                self.stale += 1;
                if self.stale >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, value));
                self.stale = 0;
                StopDecision::Improved
            }
        }
    }

    /// `(epoch, value)` of the best observation so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean auxiliary-head losses, heads models only.
    pub train_loss_heads: Option<(f64, f64)>,
    pub val_loss: f64,
    pub val_pr_auc: f64,
    pub monitor: f64,
    pub batches: usize,
    /// Largest `|fraud − not fraud|` count over this epoch's batches.
    pub max_batch_imbalance: usize,
    pub improved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_monitor: f64,
    pub stopped_early: bool,
    pub steps: u64,
}

/// Mean validation loss (final head) and fraud probabilities.
pub fn validation_pass<T: Real>(model: &Model<T>, table: &ClaimTable, ids: &[usize]) -> Result<(f64, Vec<f64>)> {
    let mut loss = 0.0;
    let mut scores = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(512) {
        let mut batch = table.batch::<T>(chunk, model.required_features())?;
        let labels = std::mem::take(&mut batch.labels);
        let mut g = Graph::with_params(model.params());
        let out = model.forward_owned(&mut g, batch, Mode::eval())?;
        let l = g.softmax_cross_entropy(out.logits, &labels)?;
        loss += g.value(l).data()[0].to_f64() * chunk.len() as f64;
        let logits = g.value(out.logits);
        scores.extend((0..logits.rows()).map(|r| crate::graph::softmax(logits.row(r))[1]));
    }
    Ok((loss / ids.len() as f64, scores))
}

fn scored(table: &ClaimTable, ids: &[usize], scores: Vec<f64>) -> Result<ScoredSet> {
    let labels = ids.iter().map(|&i| table.labels()[i]).collect();
    ScoredSet::new(scores.into_iter().map(|s| s.clamp(0.0, 1.0)).collect(), labels)
}

/// Trains `model` in place and leaves it holding the best-epoch weights.
pub fn fit<T: Real>(
    model: &mut Model<T>,
    table: &ClaimTable,
    split: &SplitIndices,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<FitResult> {
    cfg.validate()?;
    let labels = table.labels();
    let sampler = BalancedBatches::new(&split.train, labels, cfg.batch_size, seed)?;
    let mut adam = Adam::new(model.params(), cfg);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_values = model.params().values().to_vec();
    let mut history = Vec::new();
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let batches = sampler.epoch(epoch);
        let (mut sum, mut sum_h1, mut sum_h2) = (0.0, 0.0, 0.0);
        let mut imbalance = 0;
        for ids in &batches {
            let fraud = ids.iter().filter(|&&i| labels[i] == 1).count();
            imbalance = imbalance.max(fraud.abs_diff(ids.len() - fraud));
            let mut batch = table.batch::<T>(ids, model.required_features())?;
            let mode = Mode::train(seed, adam.steps());
            let grads = {
                let mut g = Graph::with_params(model.params());
                let labels = std::mem::take(&mut batch.labels);
                let out = model.forward_owned(&mut g, batch, mode)?;
                let loss = model.compute_loss(&mut g, &out, &labels)?;
                let v = loss.values(&g);
                if !v.total.is_finite() {
                    return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}")));
                }
                sum += v.total;
                if let (Some(a), Some(b)) = (v.l_f1, v.l_f2) {
                    sum_h1 += a;
                    sum_h2 += b;
                }
                g.backward(loss.total)?.param_grads(model.params())
            };
            adam.step(model.params_mut(), &grads)?;
        }
        let (val_loss, val_scores) = validation_pass(model, table, &split.val)?;
        let val_pr_auc = pr_auc(&scored(table, &split.val, val_scores)?)?;
        let monitor = match cfg.monitor {
            Monitor::PrAuc => val_pr_auc,
            Monitor::NegLoss => -val_loss,
        };
        let decision = stopper.observe(epoch, monitor);
        if decision == StopDecision::Improved {
            best_values = model.params().values().to_vec();
        }
        let n = batches.len() as f64;
        history.push(EpochRecord {
            epoch,
            train_loss: sum / n,
            train_loss_heads: model.config().heads.then_some((sum_h1 / n, sum_h2 / n)),
            val_loss,
            val_pr_auc,
            monitor,
            batches: batches.len(),
            max_batch_imbalance: imbalance,
            improved: decision == StopDecision::Improved,
        });
        if decision == StopDecision::Stop {
            stopped_early = true;
            break;
        }
    }
    model.load_values(best_values)?;
    let (best_epoch, best_monitor) = stopper.best().expect("at least one epoch");
    Ok(FitResult {
        history,
        best_epoch,
        best_monitor,
        stopped_early,
        steps: adam.steps(),
    })
}

/// Validation-tuned threshold, metrics on `split.test`.
pub fn evaluate_model<T: Real>(
    model: &Model<T>,
    table: &ClaimTable,
    split: &SplitIndices,
    min_recall: f64,
) -> Result<MetricsReport> {
    let val = scored(table, &split.val, model.score(table, &split.val)?)?;
    let test = scored(table, &split.test, model.score(table, &split.test)?)?;
    evaluate(&val, &test, min_recall)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub report: MetricsReport,
    pub fit: FitResult,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation; one value has std `0`.
pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MeanStd { mean, std }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub label: String,
    pub parameters: usize,
    pub runs: Vec<SeedRun>,
    /// Aligned with [`MetricsReport::FIELDS`].
    pub summary: Vec<MeanStd>,
}

impl AggregateReport {
    pub fn from_runs(label: String, parameters: usize, runs: Vec<SeedRun>) -> Self {
        let summary = (0..MetricsReport::FIELDS.len())
            .map(|k| mean_std(&runs.iter().map(|r| r.report.values()[k]).collect::<Vec<_>>()))
            .collect();
        AggregateReport {
            label,
            parameters,
            runs,
            summary,
        }
    }

    pub fn get(&self, field: &str) -> Option<MeanStd> {
        MetricsReport::FIELDS.iter().position(|f| *f == field).map(|k| self.summary[k])
    }

    pub fn pr_auc(&self) -> MeanStd {
        self.summary[0]
    }
}

/// Trains one seed from scratch and evaluates it.
pub fn train_seed(config: &ModelConfig, table: &ClaimTable, split: &SplitIndices, cfg: &TrainConfig, seed: u64) -> Result<(Model<f32>, SeedRun)> {
    let mut model = Model::<f32>::new(config.clone(), seed)?;
    let fit = fit(&mut model, table, split, cfg, seed)?;
    let report = evaluate_model(&model, table, split, cfg.min_recall)?;
    Ok((model, SeedRun { seed, report, fit }))
}

/// Runs every seed of `cfg` on a shared split and aggregates test metrics.
pub fn multi_seed_run(config: &ModelConfig, table: &ClaimTable, split: &SplitIndices, cfg: &TrainConfig) -> Result<AggregateReport> {
    cfg.validate()?;
    let runs = cfg
        .seeds
        .iter()
        .map(|&seed| train_seed(config, table, split, cfg, seed).map(|(_, run)| run))
        .collect::<Result<Vec<_>>>()?;
    Ok(AggregateReport::from_runs(config.label(), config.parameter_count()?, runs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use proptest::prelude::*;

    #[test]
    fn split_counts() {
        let labels: Vec<usize> = (0..1000).map(|i| (i < 30) as usize).collect();
        let s = split_stratified(&labels, [0.8, 0.1, 0.1], 4).unwrap();
        let fraud = |ids: &[usize]| ids.iter().filter(|&&i| labels[i] == 1).count();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (800, 100, 100));
        assert_eq!((fraud(&s.train), fraud(&s.val), fraud(&s.test)), (24, 3, 3));
        assert_eq!(s, split_stratified(&labels, [0.8, 0.1, 0.1], 4).unwrap());
        let other = split_stratified(&labels, [0.8, 0.1, 0.1], 5).unwrap();
        assert_ne!(s.train, other.train);
        assert_eq!(fraud(&other.val), 3);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert!(split_stratified(&[0, 0, 0, 1, 1], [0.8, 0.1, 0.1], 0).is_err());
    }

    #[test]
    fn balanced_batches_are_half_and_half() {
        let labels: Vec<usize> = (0..200).map(|i| (i % 67 == 0) as usize).collect();
        let ids: Vec<usize> = (0..200).collect();
        let b = BalancedBatches::new(&ids, &labels, 64, 9).unwrap();
        let minority = labels.iter().filter(|&&l| l == 1).count();
        assert_eq!(minority, 3);
        let epoch = b.epoch(1);
        assert_eq!(epoch.len(), (2 * 197usize).div_ceil(64));
        for batch in &epoch {
            assert_eq!(batch.len(), 64);
            assert_eq!(batch.iter().filter(|&&i| labels[i] == 1).count(), 32);
        }
        assert_eq!(epoch, b.epoch(1));
        assert_ne!(epoch, b.epoch(2));
        assert!(BalancedBatches::new(&ids, &labels, 63, 0).is_err());
        assert!(BalancedBatches::new(&[1, 2], &labels, 64, 0).is_err());
    }

    fn one_param(v: Vec<f64>) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        let n = v.len();
        p.register("w", Tensor::new(vec![n], v).unwrap());
        p
    }

    #[test]
    fn adam_first_step_and_zero_grad() {
        let cfg = TrainConfig::default();
        let mut p = one_param(vec![0.5, -0.5, 2.0]);
        let mut adam = Adam::new(&p, &cfg);
        adam.step(&mut p, &[Tensor::vector(vec![3.0, -0.2, 0.0])]).unwrap();
        let d = p.values()[0].data();
        assert!((d[0] - (0.5 - 1e-3)).abs() < 1e-9);
        assert!((d[1] - (-0.5 + 1e-3)).abs() < 1e-9);
        assert_eq!(d[2], 2.0);
        let err = adam.step(&mut p, &[Tensor::vector(vec![f64::NAN, 0.0, 0.0])]).unwrap_err();
        assert!(matches!(err, Error::Numeric(m) if m.contains("w[0]")));
    }

    #[test]
    fn adam_minimises_quadratic() {
        let cfg = TrainConfig {
            lr: 0.05,
            ..TrainConfig::default()
        };
        let mut p = one_param(vec![3.0]);
        let mut adam = Adam::new(&p, &cfg);
        let loss = |p: &ParamSet<f64>| (p.values()[0].data()[0] - 1.0).powi(2);
        let initial = loss(&p);
        let mut prev = initial;
        for step in 0..100 {
            let grad = {
                let mut g = Graph::with_params(&p);
                let w = g.param(p.ids().next().unwrap()).unwrap();
                let c = g.input(Tensor::vector(vec![-1.0])).unwrap();
                let d = g.add(w, c).unwrap();
                let sq = g.hadamard(d, d).unwrap();
                let l = g.sum_all(sq).unwrap();
                g.backward(l).unwrap().param_grads(&p)
            };
            adam.step(&mut p, &grad).unwrap();
            let now = loss(&p);
            if step >= 5 && step < 40 {
                assert!(now < prev, "step {step}: {now} >= {prev}");
            }
            prev = now;
        }
        assert!(prev < initial / 10.0);
    }

    #[test]
    fn early_stopping_trace() {
        let mut s = EarlyStopping::new(3);
        let trace = [0.10, 0.12, 0.11, 0.11, 0.11];
        let decisions: Vec<_> = trace.iter().enumerate().map(|(i, &v)| s.observe(i + 1, v)).collect();
        use StopDecision::*;
        assert_eq!(decisions, vec![Improved, Improved, Continue, Continue, Stop]);
        assert_eq!(s.best(), Some((2, 0.12)));
    }

    #[test]
    fn mean_std_cases() {
        let m = mean_std(&[0.1, 0.2, 0.3, 0.4, 0.5]);
        assert!((m.mean - 0.3).abs() < 1e-12);
        assert!((m.std - 0.158_113_883).abs() < 1e-8);
        assert_eq!(mean_std(&[0.7]), MeanStd { mean: 0.7, std: 0.0 });
        assert_eq!(mean_std(&[0.25; 5]).std, 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { patience: 0, ..Default::default() },
            TrainConfig { batch_size: 63, ..Default::default() },
            TrainConfig { seeds: vec![], ..Default::default() },
            TrainConfig { ratios: [0.5, 0.3, 0.3], ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    proptest! {
        #[test]
        fn early_stopping_never_regresses(trace in prop::collection::vec(0.0f64..1.0, 1..30), patience in 1usize..5) {
            let mut s = EarlyStopping::new(patience);
            let mut seen = Vec::new();
            for (i, &v) in trace.iter().enumerate() {
                seen.push(v);
                let d = s.observe(i + 1, v);
                let (_, best) = s.best().unwrap();
                prop_assert!(seen.iter().all(|&x| x <= best));
                if d == StopDecision::Stop {
                    break;
                }
            }
        }

        #[test]
        fn sampler_always_balanced(n_pos in 1usize..20, n_neg in 1usize..300, half in 1usize..40, seed in any::<u64>()) {
            let labels: Vec<usize> = (0..n_pos + n_neg).map(|i| (i < n_pos) as usize).collect();
            let ids: Vec<usize> = (0..labels.len()).collect();
            let b = BalancedBatches::new(&ids, &labels, 2 * half, seed).unwrap();
            let epoch = b.epoch(0);
            prop_assert_eq!(epoch.len(), (2 * n_pos.max(n_neg)).div_ceil(2 * half));
            for batch in epoch {
                prop_assert_eq!(batch.iter().filter(|&&i| labels[i] == 1).count(), half);
                prop_assert_eq!(batch.len(), 2 * half);
            }
        }
    }
}
