use mmfuse::fusion::{FusionBlock, FusionKind};
use mmfuse::gradcheck::{check_inputs, check_inputs_with, check_params, DEFAULT_STEP};
use mmfuse::graph::SIGNED_SQRT_GRAD_CAP;
use mmfuse::models::{enumerate_pairs, Model, ModelConfig};
use mmfuse::rng::stream;
use mmfuse::{Graph, Mode, ParamSet, Result, Tensor, Var};

use super::{away_from_zero, rng, tiny_batch, tiny_profile, uniform};

pub const TOLERANCE: f64 = 1e-4;
pub const TRIALS: u64 = 20;

/// Central differences are only meaningful where the function is smooth
/// across the whole `±h` window; draws closer than this to a kink are
/// redrawn.
pub const RELU_MARGIN: f64 = 1e-3;
pub const SQRT_MARGIN: f64 = 2e-2;
const MAX_DRAWS: u64 = 2000;

fn smooth(g: &Graph<'_, f64>) -> bool {
    let d = g.kink_distance();
    d.relu >= RELU_MARGIN && d.signed_sqrt >= SQRT_MARGIN
}

pub struct Case {
    pub name: String,
    pub max_rel_error: f64,
    pub entries: usize,
}

/// Contracts `y` against a fixed random weight so every output entry
/// contributes a distinct amount to the scalar.
fn weighted_sum(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let w = g.input(uniform(&shape, -1.0, 1.0, &mut rng(seed ^ 0xabc)))?;
    let p = g.hadamard(y, w)?;
    g.sum_all(p)
}

type OpFn = fn(&mut Graph<'_, f64>, &[Var], u64) -> Result<Var>;

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    vec![
        ("affine", vec![vec![3, 4], vec![5, 4], vec![5]], |g, v, _| g.affine(v[0], v[1], Some(v[2]))),
        ("affine_no_bias", vec![vec![2, 3], vec![4, 3]], |g, v, _| g.affine(v[0], v[1], None)),
        ("add", vec![vec![2, 5], vec![2, 5]], |g, v, _| g.add(v[0], v[1])),
        ("hadamard", vec![vec![3, 4], vec![3, 4]], |g, v, _| g.hadamard(v[0], v[1])),
        ("chunk_sum_pool", vec![vec![2, 6]], |g, v, _| g.chunk_sum_pool(v[0], 3)),
        ("strided_sum", vec![vec![2, 8]], |g, v, _| g.strided_sum(v[0], 4)),
        ("signed_sqrt", vec![vec![3, 4]], |g, v, _| g.signed_sqrt(v[0], SIGNED_SQRT_GRAD_CAP)),
        ("l2_normalize", vec![vec![3, 5]], |g, v, _| g.l2_normalize(v[0], 1e-12)),
        ("relu", vec![vec![3, 4]], |g, v, _| g.relu(v[0])),
        ("tanh", vec![vec![3, 4]], |g, v, _| g.tanh(v[0])),
        ("dropout", vec![vec![4, 6]], |g, v, s| g.dropout(v[0], 0.5, Mode::train(s, 3), 1)),
        ("scale", vec![vec![2, 3]], |g, v, _| g.scale(v[0], -1.7)),
        ("concat", vec![vec![2, 3], vec![2, 2], vec![2, 4]], |g, v, _| g.concat(v)),
        ("slice_cols", vec![vec![3, 7]], |g, v, _| g.slice_cols(v[0], 2, 4)),
        ("segment_mean", vec![vec![6, 3]], |g, v, _| g.segment_mean(v[0], &[0, 1, 4, 6])),
        ("bilinear", vec![vec![2, 3], vec![2, 4], vec![3, 4, 2]], |g, v, _| g.bilinear(v[0], v[1], v[2])),
        ("sum_all", vec![vec![3, 3]], |g, v, _| g.sum_all(v[0])),
        ("softmax_cross_entropy", vec![vec![5, 2]], |g, v, _| g.softmax_cross_entropy(v[0], &[0, 1, 1, 0, 1])),
    ]
}

/// Every differentiable op on [`TRIALS`] random inputs each.
pub fn op_suite() -> Vec<Case> {
    let mut out = Vec::new();
    for (name, shapes, f) in op_cases() {
        let mut worst = 0.0f64;
        let mut entries = 0;
        for trial in 0..TRIALS {
            let mut r = rng(1000 + trial);
            let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| away_from_zero(s, 0.1, 1.5, &mut r)).collect();
            let scalar_out = matches!(name, "sum_all" | "softmax_cross_entropy");
            let report = check_inputs(&inputs, DEFAULT_STEP, |g, v| {
                let y = f(g, v, trial)?;
                if scalar_out {
                    Ok(y)
                } else {
                    weighted_sum(g, y, trial)
                }
            })
            .unwrap_or_else(|e| panic!("{name}: {e}"));
            worst = worst.max(report.max_rel_error);
            entries += report.entries;
        }
        out.push(Case {
            name: format!("op/{name}"),
            max_rel_error: worst,
            entries,
        });
    }
    out
}

/// Every fusion kind with inputs and parameters at widths ≤ 8, in both
/// modes, checked against parameters and inputs.
pub fn fusion_suite() -> Vec<Case> {
    let p = tiny_profile();
    let mut out = Vec::new();
    for kind in FusionKind::ALL {
        for training in [false, true] {
            let mode = if training { Mode::train(11, 2) } else { Mode::eval() };
            let (block, params, x1, x2) = (0..MAX_DRAWS)
                .map(|draw| {
                    let cfg = p.fusion(kind, 5, 6);
                    let mut params = ParamSet::<f64>::new();
                    let block = FusionBlock::new(cfg, &mut params, "blk", &mut stream(7, 1, draw)).unwrap();
                    // Fresh biases are zero; perturb them so their gradients are exercised.
                    for v in params.values_mut() {
                        if v.shape().len() == 1 {
                            *v = uniform(v.shape(), -0.3, 0.3, &mut rng(v.len() as u64 + 97 * draw));
                        }
                    }
                    let mut r = rng(kind as u64 + 40 + 1000 * draw);
                    let x1 = uniform(&[3, 5], -1.0, 1.0, &mut r);
                    let x2 = uniform(&[3, 6], -1.0, 1.0, &mut r);
                    (block, params, x1, x2)
                })
                .find(|(block, params, x1, x2)| {
                    let mut g = Graph::with_params(params);
                    let a = g.input(x1.clone()).unwrap();
                    let b = g.input(x2.clone()).unwrap();
                    block.forward(&mut g, a, b, mode).unwrap();
                    smooth(&g)
                })
                .expect("a smooth draw");
            let forward = |g: &mut Graph<'_, f64>, a: Var, b: Var| -> Result<Var> {
                let y = block.forward(g, a, b, mode)?;
                weighted_sum(g, y, 5)
            };
            let wrt_params = check_params(&params, DEFAULT_STEP, |g| {
                let a = g.input(x1.clone())?;
                let b = g.input(x2.clone())?;
                forward(g, a, b)
            })
            .unwrap();
            let wrt_inputs = check_inputs_with(&params, &[x1.clone(), x2.clone()], DEFAULT_STEP, |g, v| {
                forward(g, v[0], v[1])
            })
            .unwrap();
            out.push(Case {
                name: format!("fusion/{}/{}", kind.slug(), if training { "train" } else { "eval" }),
                max_rel_error: wrt_params.max_rel_error.max(wrt_inputs.max_rel_error),
                entries: wrt_params.entries + wrt_inputs.entries,
            });
        }
    }
    out
}

fn model_configs() -> Vec<ModelConfig> {
    let p = tiny_profile();
    let mut configs = Vec::new();
    for f in mmfuse::features::Feature::ALL {
        configs.push(ModelConfig::unimodal(f, &p));
    }
    for pair in enumerate_pairs() {
        for kind in FusionKind::ALL {
            configs.push(ModelConfig::bimodal(pair, kind, &p).unwrap());
        }
    }
    configs.push(ModelConfig::concat(true, &p));
    configs.push(ModelConfig::concat(false, &p));
    for kind in FusionKind::ALL {
        configs.push(ModelConfig::slow_fusion(kind, &p));
    }
    configs.push(ModelConfig::autofraudnet(false, &p));
    configs.push(ModelConfig::autofraudnet(true, &p));
    configs
}

/// End-to-end loss gradients for every architecture at shrunk widths,
/// visual encoders included.
pub fn model_suite() -> Vec<Case> {
    let p = tiny_profile();
    let batch = tiny_batch(&p.inputs, 4, 99);
    model_configs()
        .into_iter()
        .enumerate()
        .map(|(i, cfg)| {
            let mode = Mode::train(3, 1);
            let model = (0..MAX_DRAWS)
                .map(|draw| {
                    let mut model = Model::<f64>::new(cfg.clone(), 1000 * draw + i as u64).unwrap();
                    for v in model.params_mut().values_mut() {
                        if v.shape().len() == 1 {
                            *v = uniform(v.shape(), -0.3, 0.3, &mut rng(i as u64 * 31 + v.len() as u64 + 7 * draw));
                        }
                    }
                    model
                })
                .find(|model| {
                    let mut g = Graph::with_params(model.params());
                    model.forward(&mut g, &batch, mode).unwrap();
                    smooth(&g)
                })
                .unwrap_or_else(|| panic!("no smooth draw for {cfg}"));
            let report = check_params(model.params(), DEFAULT_STEP, |g| {
                let out = model.forward(g, &batch, mode)?;
                Ok(model.compute_loss(g, &out, &batch.labels)?.total)
            })
            .unwrap_or_else(|e| panic!("{cfg}: {e}"));
            Case {
                name: format!("model/{cfg}"),
                max_rel_error: report.max_rel_error,
                entries: report.entries,
            }
        })
        .collect()
}
