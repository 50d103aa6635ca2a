//! Unimodal, bimodal and slow-fusion classifiers.
//!
//! A [`ModelConfig`] is a complete, serialisable description of an
//! architecture; [`Model::new`] instantiates it. Slow-fusion models fuse
//! (CDS, SPUD) and (UD, Struct) with two first-layer blocks, then combine
//! the two activations either with a second fusion block (`SF - <kind>`)
//! or by concatenation and a single affine layer (AutoFraudNet). With
//! `heads` on, each first-layer activation also feeds its own classifier
//! and the training loss becomes `L_F1 + L_F2 + L_C`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    Batch, ClaimFeatureSet, ClaimRecord, ClaimTable, Feature, Modality, VisualEncoder, VisualInput,
    DEFAULT_ENCODER_HIDDEN, IMAGE_EMB_DIM,
};
use crate::fusion::{FusionBlock, FusionConfig, FusionKind};
use crate::graph::{softmax, Graph, Mode, ParamSet, Var};
use crate::layers::{Linear, Mlp};
use crate::rng::{purpose, stream};
use crate::tensor::{Real, Tensor};

pub const CLASSES: usize = 2;

/// First-layer pairs of the slow-fusion models.
pub const SLOW_FUSION_PAIRS: [(Feature, Feature); 2] = [(Feature::Cds, Feature::Spud), (Feature::Ud, Feature::Struct)];

/// Every cross-modal feature pair: visual × tabular, then each non-text
/// feature × text.
pub fn enumerate_pairs() -> Vec<(Feature, Feature)> {
    let mut pairs = Vec::with_capacity(8);
    for v in [Feature::Cds, Feature::Ud] {
        for t in [Feature::Spud, Feature::Struct] {
            pairs.push((v, t));
        }
    }
    for f in [Feature::Cds, Feature::Ud, Feature::Spud, Feature::Struct] {
        pairs.push((f, Feature::Text));
    }
    pairs
}

/// Input widths the model expects. The defaults are the real feature
/// widths; tests shrink them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputDims {
    pub image: usize,
    pub visual: usize,
    pub spud: usize,
    pub structv: usize,
    pub text: usize,
}

impl Default for InputDims {
    fn default() -> Self {
        InputDims {
            image: IMAGE_EMB_DIM,
            visual: Feature::Cds.dim(),
            spud: Feature::Spud.dim(),
            structv: Feature::Struct.dim(),
            text: Feature::Text.dim(),
        }
    }
}

impl InputDims {
    pub fn of(&self, f: Feature) -> usize {
        match f {
            Feature::Cds | Feature::Ud => self.visual,
            Feature::Spud => self.spud,
            Feature::Struct => self.structv,
            Feature::Text => self.text,
        }
    }
}

/// Width settings shared by every architecture built from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Profile {
    pub inputs: InputDims,
    pub encoder_hidden: usize,
    pub mlp_hidden: Vec<usize>,
    pub dropout_p: f64,
    pub mm_dim: usize,
    pub out_dim: usize,
    pub chunks: usize,
    pub rank: usize,
    pub pool_factor: usize,
    pub mfh_stages: usize,
}

impl Default for Profile {
    fn default() -> Self {
        Profile::reference()
    }
}

impl Profile {
    /// Full-size widths (500-unit MLPs, 1600-d fusion spaces).
    pub fn reference() -> Self {
        Profile {
            inputs: InputDims::default(),
            encoder_hidden: DEFAULT_ENCODER_HIDDEN,
            mlp_hidden: vec![500, 500],
            dropout_p: 0.5,
            mm_dim: 1600,
            out_dim: 1600,
            chunks: 20,
            rank: 15,
            pool_factor: 5,
            mfh_stages: 2,
        }
    }

    /// Small widths that train in seconds on one CPU core.
    pub fn desk() -> Self {
        Profile {
            inputs: InputDims::default(),
            encoder_hidden: 16,
            mlp_hidden: vec![64, 64],
            dropout_p: 0.5,
            mm_dim: 48,
            out_dim: 16,
            chunks: 4,
            rank: 4,
            pool_factor: 3,
            mfh_stages: 2,
        }
    }

    pub fn fusion(&self, kind: FusionKind, d1: usize, d2: usize) -> FusionConfig {
        let mut cfg = FusionConfig::new(kind, d1, d2);
        cfg.pool_factor = self.pool_factor;
        cfg.mfh_stages = self.mfh_stages;
        cfg.dropout_p = self.dropout_p;
        cfg.scaled(self.mm_dim, self.out_dim, self.chunks, self.rank, &self.mlp_hidden)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Unimodal,
    Bimodal,
    ConcatAll,
    ConcatWoText,
    SlowFusion,
    Autofraudnet,
    AutofraudnetHeads,
}

/// Complete description of a classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Inputs in the order they are consumed.
    pub features: Vec<Feature>,
    pub inputs: InputDims,
    pub encoder_hidden: usize,
    /// Hidden widths of the MLP classifier (unimodal and concat archs).
    pub mlp_hidden: Vec<usize>,
    pub dropout_p: f64,
    /// One block for bimodal models, two for slow fusion.
    pub first_layer: Vec<FusionConfig>,
    /// Second slow-fusion block; `None` means concatenate and apply a
    /// single affine layer.
    pub second_layer: Option<FusionConfig>,
    pub heads: bool,
    /// Weights of `(L_F1, L_F2, L_C)`.
    pub loss_weights: [f64; 3],
}

impl ModelConfig {
    fn base(arch: Arch, features: Vec<Feature>, p: &Profile) -> Self {
        ModelConfig {
            arch,
            features,
            inputs: p.inputs.clone(),
            encoder_hidden: p.encoder_hidden,
            mlp_hidden: p.mlp_hidden.clone(),
            dropout_p: p.dropout_p,
            first_layer: Vec::new(),
            second_layer: None,
            heads: false,
            loss_weights: [1.0; 3],
        }
    }

    pub fn unimodal(feature: Feature, p: &Profile) -> Self {
        Self::base(Arch::Unimodal, vec![feature], p)
    }

    pub fn bimodal(pair: (Feature, Feature), kind: FusionKind, p: &Profile) -> Result<Self> {
        check_pair(pair)?;
        let mut cfg = Self::base(Arch::Bimodal, vec![pair.0, pair.1], p);
        cfg.first_layer = vec![p.fusion(kind, p.inputs.of(pair.0), p.inputs.of(pair.1))];
        Ok(cfg)
    }

    pub fn concat(with_text: bool, p: &Profile) -> Self {
        let mut features = vec![Feature::Cds, Feature::Ud, Feature::Spud, Feature::Struct];
        let arch = if with_text {
            features.push(Feature::Text);
            Arch::ConcatAll
        } else {
            Arch::ConcatWoText
        };
        Self::base(arch, features, p)
    }

    fn slow(arch: Arch, p: &Profile) -> Self {
        let features = vec![Feature::Cds, Feature::Spud, Feature::Ud, Feature::Struct];
        let mut cfg = Self::base(arch, features, p);
        cfg.first_layer = SLOW_FUSION_PAIRS
            .iter()
            .map(|&(a, b)| p.fusion(FusionKind::BlockTucker, p.inputs.of(a), p.inputs.of(b)))
            .collect();
        cfg
    }

    /// `SF - <second>`: BLOCK Tucker first layer, `second` fusing the two
    /// activations.
    pub fn slow_fusion(second: FusionKind, p: &Profile) -> Self {
        let mut cfg = Self::slow(Arch::SlowFusion, p);
        let (o1, o2) = (cfg.first_layer[0].output_dim(), cfg.first_layer[1].output_dim());
        cfg.second_layer = Some(p.fusion(second, o1, o2));
        cfg
    }

    pub fn autofraudnet(heads: bool, p: &Profile) -> Self {
        let arch = if heads { Arch::AutofraudnetHeads } else { Arch::Autofraudnet };
        let mut cfg = Self::slow(arch, p);
        cfg.heads = heads;
        cfg
    }

    /// Short display name, e.g. `UD`, `CDS × SPUD / MLB`, `SF - BLOCK`.
    pub fn label(&self) -> String {
        match self.arch {
            Arch::Unimodal => self.features[0].name().to_string(),
            Arch::Bimodal => format!(
                "{} × {} / {}",
                self.features[0],
                self.features[1],
                self.first_layer[0].kind
            ),
            Arch::ConcatAll => "Concat MLP - All".into(),
            Arch::ConcatWoText => "Concat MLP - w/o Text".into(),
            Arch::SlowFusion => format!(
                "SF - {}",
                self.second_layer.as_ref().map(|s| s.kind.name()).unwrap_or("?")
            ),
            Arch::Autofraudnet => "AutoFraudNet".into(),
            Arch::AutofraudnetHeads => "AutoFraudNet + Heads".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("{}: {m}", self.label())));
        if self.features.is_empty() {
            return fail("no input features");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail("dropout_p outside [0, 1)");
        }
        if self.uses_encoder() && self.encoder_hidden == 0 {
            return fail("encoder width must be positive");
        }
        if self.loss_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return fail("loss weights must be finite and non-negative");
        }
        match self.arch {
            Arch::Unimodal | Arch::ConcatAll | Arch::ConcatWoText => {
                if !self.first_layer.is_empty() || self.second_layer.is_some() || self.heads {
                    return fail("MLP classifiers take no fusion blocks or heads");
                }
                if self.mlp_hidden.contains(&0) {
                    return fail("hidden widths must be positive");
                }
            }
            Arch::Bimodal => {
                if self.features.len() != 2 || self.first_layer.len() != 1 {
                    return fail("bimodal models fuse exactly one pair");
                }
                check_pair((self.features[0], self.features[1]))?;
                self.check_block_inputs(&self.first_layer[0], self.features[0], self.features[1])?;
            }
            Arch::SlowFusion | Arch::Autofraudnet | Arch::AutofraudnetHeads => {
                if self.features != [Feature::Cds, Feature::Spud, Feature::Ud, Feature::Struct] {
                    return fail("slow fusion pairs are (CDS, SPUD) and (UD, Struct)");
                }
                if self.first_layer.len() != 2 {
                    return fail("slow fusion needs two first-layer blocks");
                }
                for (block, (a, b)) in self.first_layer.iter().zip(SLOW_FUSION_PAIRS) {
                    self.check_block_inputs(block, a, b)?;
                }
                let (o1, o2) = (self.first_layer[0].output_dim(), self.first_layer[1].output_dim());
                match (&self.second_layer, self.arch) {
                    (Some(second), Arch::SlowFusion) => {
                        second.validate()?;
                        if second.in_dims != (o1, o2) {
                            return fail("second-layer inputs must match first-layer outputs");
                        }
                    }
                    (None, Arch::Autofraudnet | Arch::AutofraudnetHeads) => {}
                    _ => return fail("second layer does not match the architecture"),
                }
                if (self.arch == Arch::AutofraudnetHeads) != self.heads && self.arch != Arch::SlowFusion {
                    return fail("heads flag does not match the architecture");
                }
            }
        }
        Ok(())
    }

    fn check_block_inputs(&self, block: &FusionConfig, a: Feature, b: Feature) -> Result<()> {
        block.validate()?;
        if block.in_dims != (self.inputs.of(a), self.inputs.of(b)) {
            return Err(Error::Config(format!(
                "{}: block inputs {:?} do not match features {a}, {b}",
                self.label(),
                block.in_dims
            )));
        }
        Ok(())
    }

    pub fn uses_encoder(&self) -> bool {
        self.features.iter().any(|f| f.modality() == Modality::Visual)
    }

    fn mlp_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.features.iter().map(|&f| self.inputs.of(f)).sum()];
        dims.extend(&self.mlp_hidden);
        dims.push(CLASSES);
        dims
    }

    fn encoder_count(&self) -> usize {
        let enc = Linear::param_count(self.inputs.image, self.encoder_hidden, true)
            + Linear::param_count(self.encoder_hidden, self.inputs.visual, true);
        let streams = [Feature::Cds, Feature::Ud]
            .iter()
            .filter(|f| self.features.contains(f))
            .count();
        streams * enc
    }

    /// Trainable scalars per component.
    pub fn parameter_breakdown(&self) -> Result<ParameterBreakdown> {
        self.validate()?;
        let mut b = ParameterBreakdown {
            encoders: self.encoder_count(),
            ..Default::default()
        };
        match self.arch {
            Arch::Unimodal | Arch::ConcatAll | Arch::ConcatWoText => {
                b.classifier = Mlp::param_count(&self.mlp_dims());
            }
            Arch::Bimodal => {
                b.fusion = self.first_layer[0].parameter_count()?;
                b.classifier = Linear::param_count(self.first_layer[0].output_dim(), CLASSES, true);
            }
            _ => {
                for block in &self.first_layer {
                    b.fusion += block.parameter_count()?;
                }
                let (o1, o2) = (self.first_layer[0].output_dim(), self.first_layer[1].output_dim());
                match &self.second_layer {
                    Some(second) => {
                        b.fusion += second.parameter_count()?;
                        b.classifier = Linear::param_count(second.output_dim(), CLASSES, true);
                    }
                    None => b.classifier = Linear::param_count(o1 + o2, CLASSES, true),
                }
                if self.heads {
                    b.heads = Linear::param_count(o1, CLASSES, true) + Linear::param_count(o2, CLASSES, true);
                }
            }
        }
        Ok(b)
    }

    /// Exact trainable-scalar count, computed from the config alone.
    pub fn parameter_count(&self) -> Result<usize> {
        Ok(self.parameter_breakdown()?.total())
    }
}

fn check_pair(pair: (Feature, Feature)) -> Result<()> {
    if pair.0.modality() == pair.1.modality() {
        return Err(Error::Config(format!(
            "pair ({}, {}) is not cross-modal",
            pair.0, pair.1
        )));
    }
    if !enumerate_pairs().contains(&pair) {
        return Err(Error::Config(format!(
            "pair ({}, {}) is not one of the eight cross-modal pairs",
            pair.0, pair.1
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterBreakdown {
    pub encoders: usize,
    pub fusion: usize,
    pub classifier: usize,
    pub heads: usize,
}

impl ParameterBreakdown {
    pub fn total(&self) -> usize {
        self.encoders + self.fusion + self.classifier + self.heads
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Second {
    Affine(Linear),
    Fusion(FusionBlock, Linear),
}

#[derive(Clone, Debug, PartialEq)]
enum Body {
    Mlp(Mlp),
    Bimodal(FusionBlock, Linear),
    Slow {
        first: [FusionBlock; 2],
        second: Second,
        heads: Option<[Linear; 2]>,
    },
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    /// Final logits, `[batch, 2]`.
    pub logits: Var,
    /// Auxiliary head logits on `(A_F1, A_F2)` for heads models.
    pub aux: Option<(Var, Var)>,
    pub activations: Option<FusionActivations>,
}

/// First-layer activations of a slow-fusion model; `a_c` is the exact
/// concatenation `[a_f1, a_f2]`.
#[derive(Clone, Copy, Debug)]
pub struct FusionActivations {
    pub a_f1: Var,
    pub a_f2: Var,
    pub a_c: Var,
}

/// Materialised outputs of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ClaimOutput<T> {
    pub logits: Tensor<T>,
    pub aux: Option<(Tensor<T>, Tensor<T>)>,
    /// `[a_f1, a_f2, a_c]` for slow-fusion models.
    pub activations: Option<[Tensor<T>; 3]>,
}

/// Per-head losses and their weighted total.
#[derive(Clone, Copy, Debug)]
pub struct LossBundle {
    pub l_f1: Option<Var>,
    pub l_f2: Option<Var>,
    pub l_c: Var,
    pub total: Var,
}

/// Loss values read off a graph.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub l_f1: Option<f64>,
    pub l_f2: Option<f64>,
    pub l_c: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn values<T: Real>(&self, g: &Graph<'_, T>) -> LossValues {
        let v = |x: Var| g.value(x).data()[0].to_f64();
        LossValues {
            l_f1: self.l_f1.map(v),
            l_f2: self.l_f2.map(v),
            l_c: v(self.l_c),
            total: v(self.total),
        }
    }
}

/// Instantiated classifier owning its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamSet<T>,
    enc_cds: Option<VisualEncoder>,
    enc_ud: Option<VisualEncoder>,
    body: Body,
}

impl<T: Real> Model<T> {
    /// Builds the model with weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, purpose::INIT, 0);
        let mut params = ParamSet::new();
        let dims = &config.inputs;
        let mut encoder = |params: &mut ParamSet<T>, f: Feature, name: &str| {
            config.features.contains(&f).then(|| {
                VisualEncoder::with_dims(params, name, dims.image, config.encoder_hidden, dims.visual, &mut rng)
            })
        };
        let enc_cds = encoder(&mut params, Feature::Cds, "enc_cds");
        let enc_ud = encoder(&mut params, Feature::Ud, "enc_ud");
        let body = match config.arch {
            Arch::Unimodal | Arch::ConcatAll | Arch::ConcatWoText => {
                Body::Mlp(Mlp::new(&mut params, "mlp", &config.mlp_dims(), config.dropout_p, &mut rng))
            }
            Arch::Bimodal => {
                let block = FusionBlock::new(config.first_layer[0].clone(), &mut params, "fusion", &mut rng)?;
                let head = Linear::new(&mut params, "head", block.output_dim(), CLASSES, true, &mut rng);
                Body::Bimodal(block, head)
            }
            Arch::SlowFusion | Arch::Autofraudnet | Arch::AutofraudnetHeads => {
                let f1 = FusionBlock::new(config.first_layer[0].clone(), &mut params, "f1", &mut rng)?;
                let f2 = FusionBlock::new(config.first_layer[1].clone(), &mut params, "f2", &mut rng)?;
                let (o1, o2) = (f1.output_dim(), f2.output_dim());
                let second = match &config.second_layer {
                    Some(cfg) => {
                        let block = FusionBlock::new(cfg.clone(), &mut params, "f3", &mut rng)?;
                        let head = Linear::new(&mut params, "head", block.output_dim(), CLASSES, true, &mut rng);
                        Second::Fusion(block, head)
                    }
                    None => Second::Affine(Linear::new(&mut params, "head", o1 + o2, CLASSES, true, &mut rng)),
                };
                let heads = config.heads.then(|| {
                    [
                        Linear::new(&mut params, "head_f1", o1, CLASSES, true, &mut rng),
                        Linear::new(&mut params, "head_f2", o2, CLASSES, true, &mut rng),
                    ]
                });
                Body::Slow {
                    first: [f1, f2],
                    second,
                    heads,
                }
            }
        };
        Ok(Model {
            config,
            params,
            enc_cds,
            enc_ud,
            body,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Features this model consumes.
    pub fn required_features(&self) -> &[Feature] {
        &self.config.features
    }

    fn feature_var(&self, g: &mut Graph<'_, T>, batch: &mut Batch<T>, f: Feature) -> Result<Var> {
        let missing = || Error::Availability {
            claim_id: "<batch>".into(),
            modality: f.name().into(),
        };
        let dense = |t: &mut Option<Tensor<T>>| t.take().ok_or_else(missing);
        match f {
            Feature::Cds | Feature::Ud => {
                let (input, enc) = if f == Feature::Cds {
                    (batch.cds.take(), &self.enc_cds)
                } else {
                    (batch.ud.take(), &self.enc_ud)
                };
                match input.ok_or_else(missing)? {
                    VisualInput::Encoded(t) => g.input(t),
                    VisualInput::Images { rows, offsets } => {
                        let enc = enc.as_ref().ok_or_else(missing)?;
                        let x = g.input(rows)?;
                        enc.forward(g, x, &offsets)
                    }
                }
            }
            Feature::Spud => g.input(dense(&mut batch.spud)?),
            Feature::Struct => g.input(dense(&mut batch.structv)?),
            Feature::Text => g.input(dense(&mut batch.text)?),
        }
    }

    /// Records a forward pass over `batch`.
    pub fn forward(&self, g: &mut Graph<'_, T>, batch: &Batch<T>, mode: Mode) -> Result<Outputs> {
        self.forward_owned(g, batch.clone(), mode)
    }

    /// [`Model::forward`] that moves the batch tensors into the graph
    /// instead of copying them.
    pub fn forward_owned(&self, g: &mut Graph<'_, T>, mut batch: Batch<T>, mode: Mode) -> Result<Outputs> {
        let inputs = self
            .config
            .features
            .iter()
            .map(|&f| self.feature_var(g, &mut batch, f))
            .collect::<Result<Vec<_>>>()?;
        match &self.body {
            Body::Mlp(mlp) => {
                let x = if inputs.len() == 1 { inputs[0] } else { g.concat(&inputs)? };
                Ok(Outputs {
                    logits: mlp.forward(g, x, mode)?,
                    aux: None,
                    activations: None,
                })
            }
            Body::Bimodal(block, head) => {
                let z = block.forward(g, inputs[0], inputs[1], mode)?;
                Ok(Outputs {
                    logits: head.forward(g, z)?,
                    aux: None,
                    activations: None,
                })
            }
            Body::Slow { first, second, heads } => {
                let a_f1 = first[0].forward(g, inputs[0], inputs[1], mode)?;
                let a_f2 = first[1].forward(g, inputs[2], inputs[3], mode)?;
                let a_c = g.concat(&[a_f1, a_f2])?;
                let logits = match second {
                    Second::Affine(head) => head.forward(g, a_c)?,
                    Second::Fusion(block, head) => {
                        let z = block.forward(g, a_f1, a_f2, mode)?;
                        head.forward(g, z)?
                    }
                };
                let aux = match heads {
                    Some([h1, h2]) => Some((h1.forward(g, a_f1)?, h2.forward(g, a_f2)?)),
                    None => None,
                };
                Ok(Outputs {
                    logits,
                    aux,
                    activations: Some(FusionActivations { a_f1, a_f2, a_c }),
                })
            }
        }
    }

    /// Cross-entropy per head and the weighted total.
    pub fn compute_loss(&self, g: &mut Graph<'_, T>, out: &Outputs, labels: &[usize]) -> Result<LossBundle> {
        let [w1, w2, wc] = self.config.loss_weights;
        let weighted = |g: &mut Graph<'_, T>, v: Var, w: f64| if w == 1.0 { Ok(v) } else { g.scale(v, w) };
        let l_c = g.softmax_cross_entropy(out.logits, labels)?;
        match out.aux {
            Some((h1, h2)) => {
                let l_f1 = g.softmax_cross_entropy(h1, labels)?;
                let l_f2 = g.softmax_cross_entropy(h2, labels)?;
                let a = weighted(g, l_f1, w1)?;
                let b = weighted(g, l_f2, w2)?;
                let c = weighted(g, l_c, wc)?;
                let ab = g.add(a, b)?;
                let total = g.add(ab, c)?;
                Ok(LossBundle {
                    l_f1: Some(l_f1),
                    l_f2: Some(l_f2),
                    l_c,
                    total,
                })
            }
            None => Ok(LossBundle {
                l_f1: None,
                l_f2: None,
                l_c,
                total: l_c,
            }),
        }
    }

    /// Fraud probabilities (softmax of the final head) for a batch.
    pub fn predict(&self, batch: &Batch<T>) -> Result<Vec<f64>> {
        let mut g = Graph::with_params(&self.params);
        let out = self.forward(&mut g, batch, Mode::eval())?;
        let logits = g.value(out.logits);
        Ok((0..logits.rows()).map(|r| softmax(logits.row(r))[1]).collect())
    }

    /// Eval-mode logits for a batch.
    pub fn logits(&self, batch: &Batch<T>) -> Result<Tensor<T>> {
        let mut g = Graph::with_params(&self.params);
        let out = self.forward(&mut g, batch, Mode::eval())?;
        Ok(g.value(out.logits).clone())
    }

    /// Fraud probabilities for rows `ids` of `table`, in chunks.
    pub fn score(&self, table: &ClaimTable, ids: &[usize]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(ids.len());
        for chunk in ids.chunks(512) {
            let batch = table.batch(chunk, self.required_features())?;
            out.extend(self.predict(&batch)?);
        }
        Ok(out)
    }

    /// Logits for a single raw claim.
    pub fn forward_claim(&self, rec: &ClaimRecord) -> Result<Vec<T>> {
        rec.require(self.required_features())?;
        let table = ClaimTable::from_records(std::slice::from_ref(rec))?;
        let batch = table.batch(&[0], self.required_features())?;
        Ok(self.logits(&batch)?.into_data())
    }

    /// Logits (and slow-fusion activations) for an assembled feature set,
    /// bypassing the visual encoders.
    pub fn forward_features(&self, f: &ClaimFeatureSet, mode: Mode) -> Result<ClaimOutput<T>> {
        let batch = Batch::from_feature_sets(&[f], &[0], self.required_features())?;
        self.forward_values(&batch, mode)
    }

    /// Values of one forward pass over `batch`.
    pub fn forward_values(&self, batch: &Batch<T>, mode: Mode) -> Result<ClaimOutput<T>> {
        let mut g = Graph::with_params(&self.params);
        let out = self.forward(&mut g, batch, mode)?;
        let take = |v: Var| g.value(v).clone();
        Ok(ClaimOutput {
            logits: take(out.logits),
            aux: out.aux.map(|(a, b)| (take(a), take(b))),
            activations: out.activations.map(|a| [take(a.a_f1), take(a.a_f2), take(a.a_c)]),
        })
    }

    /// Visual encoders, when the model has them.
    pub fn encoders(&self) -> (Option<&VisualEncoder>, Option<&VisualEncoder>) {
        (self.enc_cds.as_ref(), self.enc_ud.as_ref())
    }

    /// Replaces every parameter value, keeping names and shapes.
    pub fn load_values(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter arrays, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for (slot, v) in self.params.values_mut().iter_mut().zip(values) {
            if slot.shape() != v.shape() {
                return Err(Error::shape("load_values", slot.shape(), v.shape()));
            }
            *slot = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_cross_modal_pairs() {
        let pairs = enumerate_pairs();
        assert_eq!(pairs.len(), 8);
        assert!(pairs.iter().all(|(a, b)| a.modality() != b.modality()));
        assert!(ModelConfig::bimodal((Feature::Cds, Feature::Spud), FusionKind::Mlb, &Profile::desk()).is_ok());
        assert!(ModelConfig::bimodal((Feature::Cds, Feature::Ud), FusionKind::Mlb, &Profile::desk()).is_err());
        assert_eq!(pairs.len() * FusionKind::ALL.len(), 56);
    }

    #[test]
    fn unimodal_counts() {
        let p = Profile::reference();
        let cds = ModelConfig::unimodal(Feature::Cds, &p).parameter_breakdown().unwrap();
        assert_eq!(cds.classifier, 277_002);
        let st = ModelConfig::unimodal(Feature::Struct, &p).parameter_breakdown().unwrap();
        assert_eq!(st.classifier, 295_502);
        assert_eq!(st.encoders, 0);
        assert_eq!(ModelConfig::unimodal(Feature::Text, &p).mlp_dims()[0], 768);
    }

    #[test]
    fn concat_input_widths() {
        let p = Profile::reference();
        assert_eq!(ModelConfig::concat(true, &p).mlp_dims()[0], 1081);
        assert_eq!(ModelConfig::concat(false, &p).mlp_dims()[0], 313);
    }

    #[test]
    fn heads_cost() {
        let p = Profile::reference();
        let plain = ModelConfig::autofraudnet(false, &p).parameter_count().unwrap();
        let heads = ModelConfig::autofraudnet(true, &p).parameter_count().unwrap();
        assert_eq!(heads - plain, 6_404);
    }

    #[test]
    fn instantiated_counts_match_config() {
        let p = Profile::desk();
        let mut configs = vec![
            ModelConfig::unimodal(Feature::Spud, &p),
            ModelConfig::concat(true, &p),
            ModelConfig::autofraudnet(true, &p),
            ModelConfig::autofraudnet(false, &p),
        ];
        for kind in [FusionKind::Mfb, FusionKind::Mlb, FusionKind::Block, FusionKind::BlockTucker] {
            configs.push(ModelConfig::slow_fusion(kind, &p));
        }
        for &pair in &enumerate_pairs() {
            for kind in FusionKind::ALL {
                configs.push(ModelConfig::bimodal(pair, kind, &p).unwrap());
            }
        }
        for cfg in configs {
            let model = Model::<f32>::new(cfg.clone(), 3).unwrap();
            assert_eq!(model.params().scalar_count(), cfg.parameter_count().unwrap(), "{cfg}");
        }
    }

    #[test]
    fn invalid_slow_fusion_rejected() {
        let p = Profile::desk();
        let mut cfg = ModelConfig::autofraudnet(true, &p);
        cfg.features.swap(1, 3);
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::autofraudnet(false, &p);
        cfg.second_layer = Some(p.fusion(FusionKind::Mlb, 3, 3));
        assert!(Model::<f32>::new(cfg, 0).is_err());
    }
}
