mod common;

use mmfuse::data::{generate_with_latents, Latents, SynthConfig};
use mmfuse::experiment::{desk_train_config, Dataset};
use mmfuse::features::Feature;
use mmfuse::metrics::{pr_auc, ScoredSet};
use mmfuse::models::{ModelConfig, Profile};
use mmfuse::training::{split_stratified, train_seed};
use rand_distr::{Distribution, StandardNormal};

fn config(seed: u64) -> SynthConfig {
    SynthConfig {
        images_max: 1,
        seed,
        ..SynthConfig::default()
    }
}

#[test]
fn fraud_rate_within_three_binomial_sd() {
    for seed in [0, 1, 2] {
        let cfg = config(seed);
        let n = cfg.n_claims as f64;
        let frauds = generate_with_latents(&cfg).unwrap().iter().filter(|(r, _)| r.label == 1).count() as f64;
        let sd = (n * cfg.fraud_rate * (1.0 - cfg.fraud_rate)).sqrt();
        assert!((frauds - n * cfg.fraud_rate).abs() <= 3.0 * sd, "seed {seed}: {frauds} frauds");
    }
}

fn partial_logit(cfg: &SynthConfig, v: [f64; 2], t: [f64; 2]) -> f64 {
    cfg.alpha_v * (v[0] + v[1]) + cfg.alpha_t * (t[0] + t[1]) + cfg.beta * (v[0] * t[0] + v[1] * t[1])
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fraud probability given only one latent pair, integrating the other
/// over a fixed standard-normal sample.
fn marginal(cfg: &SynthConfig, l: &Latents, keep_visual: bool, sample: &[[f64; 2]]) -> f64 {
    let v = [l.s_cds, l.s_ud];
    let t = [l.s_spud, l.s_struct];
    let b0 = l.logit - partial_logit(cfg, v, t);
    let p: f64 = sample
        .iter()
        .map(|&o| {
            let x = if keep_visual { partial_logit(cfg, v, o) } else { partial_logit(cfg, o, t) };
            sigmoid(b0 + x)
        })
        .sum();
    p / sample.len() as f64
}

#[test]
fn joint_oracle_beats_single_modality_oracles() {
    let mut r = common::rng(77);
    let sample: Vec<[f64; 2]> = (0..256).map(|_| [StandardNormal.sample(&mut r), StandardNormal.sample(&mut r)]).collect();
    for seed in [3, 4] {
        let cfg = config(seed);
        let data = generate_with_latents(&cfg).unwrap();
        let labels: Vec<usize> = data.iter().map(|(c, _)| c.label as usize).collect();
        let ap = |f: &dyn Fn(&Latents) -> f64| {
            pr_auc(&ScoredSet::new(data.iter().map(|(_, l)| f(l)).collect(), labels.clone()).unwrap()).unwrap()
        };
        let joint = ap(&|l| sigmoid(l.logit));
        let visual = ap(&|l| marginal(&cfg, l, true, &sample));
        let tabular = ap(&|l| marginal(&cfg, l, false, &sample));
        assert!(joint > visual && joint > tabular, "seed {seed}: {joint} vs {visual}, {tabular}");
        assert!(joint - visual.max(tabular) > 0.05, "seed {seed}: {joint} vs {visual}, {tabular}");
    }
}

#[test]
fn tabular_features_carry_no_signal_without_tabular_terms() {
    let cfg = SynthConfig {
        beta: 0.0,
        alpha_t: 0.0,
        ..config(5)
    };
    let data = Dataset::synthesize(&cfg).unwrap();
    let split = split_stratified(data.table.labels(), [0.8, 0.1, 0.1], 0).unwrap();
    let prevalence = split.test.iter().filter(|&&i| data.table.labels()[i] == 1).count() as f64 / split.test.len() as f64;
    let train = mmfuse::training::TrainConfig {
        max_epochs: 3,
        ..desk_train_config()
    };
    for f in [Feature::Spud, Feature::Struct] {
        let (_, run) = train_seed(&ModelConfig::unimodal(f, &Profile::desk()), &data.table, &split, &train, 0).unwrap();
        assert!(
            (run.report.pr_auc - prevalence).abs() < 0.02,
            "{f}: PR AUC {} vs prevalence {prevalence}",
            run.report.pr_auc
        );
    }
}
