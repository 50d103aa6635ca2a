//! Two-input fusion blocks.
//!
//! Seven strategies share one interface: [`FusionBlock::forward`] takes two
//! feature rows and returns one joint representation of
//! [`FusionConfig::output_dim`] entries. Bilinear paths carry no bias, so
//! for the bilinear kinds a zero input yields a zero output while the
//! projection and output biases are still at their zero initialisation.

use std::fmt;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, ParamId, ParamSet, Var, SIGNED_SQRT_GRAD_CAP};
use crate::layers::{normal_tensor, Linear, Mlp};
use crate::tensor::Real;

pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    ConcatMlp,
    LinearSum,
    Block,
    BlockTucker,
    Mlb,
    Mfh,
    Mfb,
}

impl FusionKind {
    /// Strategy order used in reports.
    pub const ALL: [FusionKind; 7] = [
        FusionKind::ConcatMlp,
        FusionKind::LinearSum,
        FusionKind::Block,
        FusionKind::BlockTucker,
        FusionKind::Mlb,
        FusionKind::Mfh,
        FusionKind::Mfb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::ConcatMlp => "Concat MLP",
            FusionKind::LinearSum => "Linear Sum",
            FusionKind::Block => "BLOCK",
            FusionKind::BlockTucker => "BLOCK Tucker",
            FusionKind::Mlb => "MLB",
            FusionKind::Mfh => "MFH",
            FusionKind::Mfb => "MFB",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            FusionKind::ConcatMlp => "concat_mlp",
            FusionKind::LinearSum => "linear_sum",
            FusionKind::Block => "block",
            FusionKind::BlockTucker => "block_tucker",
            FusionKind::Mlb => "mlb",
            FusionKind::Mfh => "mfh",
            FusionKind::Mfb => "mfb",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        FusionKind::ALL
            .into_iter()
            .find(|k| k.slug() == s || k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown fusion strategy `{s}`")))
    }

    fn is_chunked(self) -> bool {
        matches!(self, FusionKind::Block | FusionKind::BlockTucker)
    }

    fn is_factorized(self) -> bool {
        matches!(self, FusionKind::Mfb | FusionKind::Mfh)
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Declarative description of one fusion block.
///
/// For `mfb`/`mfh`, `mm_dim` is the expanded width of the factorized
/// product and must equal `pool_factor · out_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub kind: FusionKind,
    pub in_dims: (usize, usize),
    pub mm_dim: usize,
    pub out_dim: usize,
    pub chunks: usize,
    pub rank: usize,
    pub pool_factor: usize,
    pub mfh_stages: usize,
    pub mlp_hidden: Vec<usize>,
    pub dropout_p: f64,
    pub normalize: bool,
    /// `tanh` on the MLB projections; off gives the linear variant.
    pub mlb_tanh: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig::new(FusionKind::BlockTucker, 1, 1)
    }
}

impl FusionConfig {
    /// Reference hyperparameters for `kind`.
    pub fn new(kind: FusionKind, d1: usize, d2: usize) -> Self {
        let out_dim = 1600;
        let pool_factor = 5;
        FusionConfig {
            kind,
            in_dims: (d1, d2),
            mm_dim: if kind.is_factorized() { pool_factor * out_dim } else { 1600 },
            out_dim,
            chunks: 20,
            rank: 15,
            pool_factor,
            mfh_stages: 2,
            mlp_hidden: vec![500, 500],
            dropout_p: 0.5,
            normalize: !matches!(kind, FusionKind::ConcatMlp | FusionKind::LinearSum | FusionKind::Mlb),
            mlb_tanh: true,
        }
    }

    /// Same kind with every width replaced: `mm_dim` (ignored for
    /// `mfb`/`mfh`, which use `pool_factor · out_dim`), `out_dim`, chunk
    /// count, rank and MLP hidden widths.
    pub fn scaled(mut self, mm_dim: usize, out_dim: usize, chunks: usize, rank: usize, mlp_hidden: &[usize]) -> Self {
        self.out_dim = out_dim;
        self.mm_dim = if self.kind.is_factorized() {
            self.pool_factor * out_dim
        } else {
            mm_dim
        };
        self.chunks = chunks;
        self.rank = rank;
        self.mlp_hidden = mlp_hidden.to_vec();
        self
    }

    pub fn with_inputs(mut self, d1: usize, d2: usize) -> Self {
        self.in_dims = (d1, d2);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (d1, d2) = self.in_dims;
        let bad = |m: String| Err(Error::Config(format!("{}: {m}", self.kind.slug())));
        if d1 == 0 || d2 == 0 || self.out_dim == 0 || self.mm_dim == 0 {
            return bad("all dimensions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if self.kind.is_chunked() {
            if self.chunks == 0 || self.mm_dim % self.chunks != 0 {
                return bad(format!("mm_dim {} not divisible by chunks {}", self.mm_dim, self.chunks));
            }
            if self.kind == FusionKind::Block && self.rank == 0 {
                return bad("rank must be positive".into());
            }
        }
        if self.kind.is_factorized() {
            if self.pool_factor == 0 || self.mm_dim % self.pool_factor != 0 {
                return bad(format!(
                    "mm_dim {} not divisible by pool factor {}",
                    self.mm_dim, self.pool_factor
                ));
            }
            if self.mm_dim != self.pool_factor * self.out_dim {
                return bad(format!(
                    "mm_dim {} must equal pool factor {} × out_dim {}",
                    self.mm_dim, self.pool_factor, self.out_dim
                ));
            }
            if self.kind == FusionKind::Mfh && self.mfh_stages == 0 {
                return bad("mfh_stages must be positive".into());
            }
        }
        if self.kind == FusionKind::ConcatMlp && self.mlp_hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        Ok(())
    }

    /// Width of the block's output row.
    pub fn output_dim(&self) -> usize {
        match self.kind {
            FusionKind::Mfh => self.mfh_stages * self.out_dim,
            _ => self.out_dim,
        }
    }

    fn mlp_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.in_dims.0 + self.in_dims.1];
        dims.extend(&self.mlp_hidden);
        dims.push(self.out_dim);
        dims
    }

    /// Exact number of trainable scalars, derived from the config alone.
    pub fn parameter_count(&self) -> Result<usize> {
        self.validate()?;
        let (d1, d2) = self.in_dims;
        let (mm, out) = (self.mm_dim, self.out_dim);
        let size = if self.kind.is_chunked() { mm / self.chunks } else { 0 };
        Ok(match self.kind {
            FusionKind::ConcatMlp => Mlp::param_count(&self.mlp_dims()),
            FusionKind::LinearSum => {
                Linear::param_count(d1, mm, true) + Linear::param_count(d2, mm, true) + Linear::param_count(mm, out, true)
            }
            FusionKind::Mlb => mm * d1 + mm * d2 + Linear::param_count(mm, out, true),
            FusionKind::Mfb => mm * d1 + mm * d2,
            FusionKind::Mfh => self.mfh_stages * (mm * d1 + mm * d2),
            FusionKind::Block => {
                Linear::param_count(d1, mm, true)
                    + Linear::param_count(d2, mm, true)
                    + self.chunks * 2 * (size * self.rank * size)
                    + Linear::param_count(mm, out, true)
            }
            FusionKind::BlockTucker => {
                Linear::param_count(d1, mm, true)
                    + Linear::param_count(d2, mm, true)
                    + self.chunks * size * size * size
                    + Linear::param_count(mm, out, true)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Inner {
    ConcatMlp(Mlp),
    LinearSum { w1: Linear, w2: Linear, out: Linear },
    Mlb { u: Linear, v: Linear, p: Linear },
    Mfb { u: Linear, v: Linear },
    Mfh { stages: Vec<(Linear, Linear)> },
    Block { p1: Linear, p2: Linear, merges: Vec<(Linear, Linear)>, out: Linear },
    BlockTucker { p1: Linear, p2: Linear, cores: Vec<ParamId>, out: Linear },
}

/// Instantiated fusion block; its parameters live in a shared [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct FusionBlock {
    config: FusionConfig,
    inner: Inner,
    sites: (u64, u64),
}

impl FusionBlock {
    pub fn new<T: Real>(config: FusionConfig, params: &mut ParamSet<T>, name: &str, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let (d1, d2) = config.in_dims;
        let (mm, out) = (config.mm_dim, config.out_dim);
        let n = |s: &str| format!("{name}.{s}");
        let inner = match config.kind {
            FusionKind::ConcatMlp => Inner::ConcatMlp(Mlp::new(params, &n("mlp"), &config.mlp_dims(), config.dropout_p, rng)),
            FusionKind::LinearSum => Inner::LinearSum {
                w1: Linear::new(params, &n("w1"), d1, mm, true, rng),
                w2: Linear::new(params, &n("w2"), d2, mm, true, rng),
                out: Linear::new(params, &n("out"), mm, out, true, rng),
            },
            FusionKind::Mlb => Inner::Mlb {
                u: Linear::new(params, &n("u"), d1, mm, false, rng),
                v: Linear::new(params, &n("v"), d2, mm, false, rng),
                p: Linear::new(params, &n("p"), mm, out, true, rng),
            },
            FusionKind::Mfb => Inner::Mfb {
                u: Linear::new(params, &n("u"), d1, mm, false, rng),
                v: Linear::new(params, &n("v"), d2, mm, false, rng),
            },
            FusionKind::Mfh => Inner::Mfh {
                stages: (0..config.mfh_stages)
                    .map(|i| {
                        (
                            Linear::new(params, &n(&format!("u{i}")), d1, mm, false, rng),
                            Linear::new(params, &n(&format!("v{i}")), d2, mm, false, rng),
                        )
                    })
                    .collect(),
            },
            FusionKind::Block => {
                let size = mm / config.chunks;
                Inner::Block {
                    p1: Linear::new(params, &n("p1"), d1, mm, true, rng),
                    p2: Linear::new(params, &n("p2"), d2, mm, true, rng),
                    merges: (0..config.chunks)
                        .map(|c| {
                            (
                                Linear::new(params, &n(&format!("merge{c}.a")), size, size * config.rank, false, rng),
                                Linear::new(params, &n(&format!("merge{c}.b")), size, size * config.rank, false, rng),
                            )
                        })
                        .collect(),
                    out: Linear::new(params, &n("out"), mm, out, true, rng),
                }
            }
            FusionKind::BlockTucker => {
                let size = mm / config.chunks;
                let sigma = 1.0 / (size as f64);
                let p1 = Linear::new(params, &n("p1"), d1, mm, true, rng);
                let p2 = Linear::new(params, &n("p2"), d2, mm, true, rng);
                let cores = (0..config.chunks)
                    .map(|c| params.register(n(&format!("core{c}")), normal_tensor(&[size, size, size], sigma, rng)))
                    .collect();
                Inner::BlockTucker {
                    p1,
                    p2,
                    cores,
                    out: Linear::new(params, &n("out"), mm, out, true, rng),
                }
            }
        };
        let sites = (params.next_site(), params.next_site());
        Ok(FusionBlock { config, inner, sites })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    fn normalize<T: Real>(&self, g: &mut Graph<'_, T>, z: Var) -> Result<Var> {
        if !self.config.normalize {
            return Ok(z);
        }
        let z = g.signed_sqrt(z, SIGNED_SQRT_GRAD_CAP)?;
        g.l2_normalize(z, NORM_EPS)
    }

    /// Fuses one row (or batch of rows) from each input.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x1: Var, x2: Var, mode: Mode) -> Result<Var> {
        let (d1, d2) = self.config.in_dims;
        let (s1, s2) = (g.value(x1).shape().to_vec(), g.value(x2).shape().to_vec());
        if *s1.last().unwrap() != d1 || *s2.last().unwrap() != d2 || g.value(x1).rows() != g.value(x2).rows() {
            return Err(Error::Shape {
                op: "fusion",
                left: s1,
                right: s2,
            });
        }
        let p = self.config.dropout_p;
        let x1 = g.dropout(x1, p, mode, self.sites.0)?;
        let x2 = g.dropout(x2, p, mode, self.sites.1)?;
        match &self.inner {
            Inner::ConcatMlp(mlp) => {
                let x = g.concat(&[x1, x2])?;
                mlp.forward(g, x, mode)
            }
            Inner::LinearSum { w1, w2, out } => {
                let a = w1.forward(g, x1)?;
                let b = w2.forward(g, x2)?;
                let s = g.add(a, b)?;
                out.forward(g, s)
            }
            Inner::Mlb { u, v, p } => {
                let mut a = u.forward(g, x1)?;
                let mut b = v.forward(g, x2)?;
                if self.config.mlb_tanh {
                    a = g.tanh(a)?;
                    b = g.tanh(b)?;
                }
                let z = g.hadamard(a, b)?;
                let z = self.normalize(g, z)?;
                p.forward(g, z)
            }
            Inner::Mfb { u, v } => {
                let a = u.forward(g, x1)?;
                let b = v.forward(g, x2)?;
                let z = g.hadamard(a, b)?;
                let z = g.chunk_sum_pool(z, self.config.pool_factor)?;
                self.normalize(g, z)
            }
            Inner::Mfh { stages } => {
                let mut carry: Option<Var> = None;
                let mut outs = Vec::with_capacity(stages.len());
                for (u, v) in stages {
                    let a = u.forward(g, x1)?;
                    let b = v.forward(g, x2)?;
                    let mut z = g.hadamard(a, b)?;
                    if let Some(prev) = carry {
                        z = g.hadamard(z, prev)?;
                    }
                    carry = Some(z);
                    let pooled = g.chunk_sum_pool(z, self.config.pool_factor)?;
                    outs.push(self.normalize(g, pooled)?);
                }
                if outs.len() == 1 {
                    Ok(outs[0])
                } else {
                    g.concat(&outs)
                }
            }
            Inner::Block { p1, p2, merges, out } => {
                let a = p1.forward(g, x1)?;
                let b = p2.forward(g, x2)?;
                let size = self.config.mm_dim / self.config.chunks;
                let mut zs = Vec::with_capacity(merges.len());
                for (c, (ma, mb)) in merges.iter().enumerate() {
                    let ac = g.slice_cols(a, c * size, size)?;
                    let bc = g.slice_cols(b, c * size, size)?;
                    let ea = ma.forward(g, ac)?;
                    let eb = mb.forward(g, bc)?;
                    let m = g.hadamard(ea, eb)?;
                    zs.push(g.strided_sum(m, self.config.rank)?);
                }
                let z = if zs.len() == 1 { zs[0] } else { g.concat(&zs)? };
                let z = self.normalize(g, z)?;
                out.forward(g, z)
            }
            Inner::BlockTucker { p1, p2, cores, out } => {
                let a = p1.forward(g, x1)?;
                let b = p2.forward(g, x2)?;
                let size = self.config.mm_dim / self.config.chunks;
                let mut zs = Vec::with_capacity(cores.len());
                for (c, &core) in cores.iter().enumerate() {
                    let ac = g.slice_cols(a, c * size, size)?;
                    let bc = g.slice_cols(b, c * size, size)?;
                    let t = g.param(core)?;
                    zs.push(g.bilinear(ac, bc, t)?);
                }
                let z = if zs.len() == 1 { zs[0] } else { g.concat(&zs)? };
                let z = self.normalize(g, z)?;
                out.forward(g, z)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::tensor::Tensor;

    fn small(kind: FusionKind) -> FusionConfig {
        let mut cfg = FusionConfig::new(kind, 3, 4).scaled(6, 3, 2, 2, &[5]);
        cfg.dropout_p = 0.0;
        cfg
    }

    fn run(block: &FusionBlock, params: &ParamSet<f64>, x1: &[f64], x2: &[f64]) -> Vec<f64> {
        let mut g = Graph::with_params(params);
        let a = g.input(Tensor::vector(x1.to_vec())).unwrap();
        let b = g.input(Tensor::vector(x2.to_vec())).unwrap();
        let y = block.forward(&mut g, a, b, Mode::eval()).unwrap();
        g.value(y).data().to_vec()
    }

    #[test]
    fn output_lengths_and_counts() {
        for kind in FusionKind::ALL {
            let cfg = small(kind);
            let mut params = ParamSet::<f64>::new();
            let block = FusionBlock::new(cfg.clone(), &mut params, "f", &mut stream(1, 0, 0)).unwrap();
            assert_eq!(params.scalar_count(), cfg.parameter_count().unwrap(), "{kind}");
            let y = run(&block, &params, &[0.1, -0.2, 0.3], &[0.5, 0.1, -0.4, 0.2]);
            assert_eq!(y.len(), cfg.output_dim(), "{kind}");
        }
    }

    #[test]
    fn zero_input_annihilates_bilinear_kinds() {
        for kind in [FusionKind::Mlb, FusionKind::Mfb, FusionKind::Mfh, FusionKind::Block, FusionKind::BlockTucker] {
            let cfg = small(kind);
            let mut params = ParamSet::<f64>::new();
            let block = FusionBlock::new(cfg, &mut params, "f", &mut stream(2, 0, 0)).unwrap();
            let y = run(&block, &params, &[0.0; 3], &[0.5, 0.1, -0.4, 0.2]);
            assert!(y.iter().all(|&v| v == 0.0), "{kind}: {y:?}");
            let y = run(&block, &params, &[0.3, 0.1, 0.2], &[0.0; 4]);
            assert!(y.iter().all(|&v| v == 0.0), "{kind}: {y:?}");
        }
    }

    #[test]
    fn divisibility_is_checked_at_construction() {
        let mut cfg = FusionConfig::new(FusionKind::Block, 3, 4).scaled(7, 3, 2, 2, &[]);
        let mut params = ParamSet::<f64>::new();
        assert!(FusionBlock::new(cfg.clone(), &mut params, "b", &mut stream(0, 0, 0)).is_err());
        cfg.kind = FusionKind::Mfb;
        cfg.mm_dim = 7;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mlb_scalar_toy() {
        let mut cfg = FusionConfig::new(FusionKind::Mlb, 1, 1).scaled(1, 1, 1, 1, &[]);
        cfg.dropout_p = 0.0;
        let mut params = ParamSet::<f64>::new();
        let block = FusionBlock::new(cfg, &mut params, "m", &mut stream(0, 0, 0)).unwrap();
        for name in ["m.u.weight", "m.v.weight", "m.p.weight"] {
            let id = params.find(name).unwrap();
            params.get_mut(id).data_mut()[0] = 1.0;
        }
        let y = run(&block, &params, &[0.5], &[0.5]);
        assert!((y[0] - 0.5f64.tanh().powi(2)).abs() < 1e-15);
        assert!((y[0] - 0.213_552).abs() < 1e-6);
    }

    #[test]
    fn parse_kinds() {
        for k in FusionKind::ALL {
            assert_eq!(FusionKind::parse(k.slug()).unwrap(), k);
        }
        assert!(FusionKind::parse("attention").is_err());
    }
}
