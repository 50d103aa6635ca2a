//! Claim records and the claim-level feature vectors derived from them.
//!
//! Visual embeddings pass through a trainable [`VisualEncoder`] per stream
//! and are averaged over the claim's images. Part-visibility and damage
//! scores are summarised by per-part max/min/mean into the 126-d SPUD
//! vector. Struct one-hot and text embeddings are ingested as-is.

use std::fmt;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, ParamSet, Var};
use crate::layers::Linear;
use crate::tensor::{Real, Tensor};

pub const IMAGE_EMB_DIM: usize = 720;
pub const PARTS: usize = 21;
pub const STRUCT_DIM: usize = 87;
pub const TEXT_DIM: usize = 768;
pub const VISUAL_FEATURE_DIM: usize = 50;
pub const SPUD_DIM: usize = 2 * 3 * PARTS;
pub const DEFAULT_ENCODER_HIDDEN: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    Visual,
    Tabular,
    Textual,
}

/// One claim-level feature vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Cds,
    Ud,
    Spud,
    Struct,
    Text,
}

impl Feature {
    pub const ALL: [Feature; 5] = [Feature::Cds, Feature::Ud, Feature::Spud, Feature::Struct, Feature::Text];

    pub fn dim(self) -> usize {
        match self {
            Feature::Cds | Feature::Ud => VISUAL_FEATURE_DIM,
            Feature::Spud => SPUD_DIM,
            Feature::Struct => STRUCT_DIM,
            Feature::Text => TEXT_DIM,
        }
    }

    pub fn modality(self) -> Modality {
        match self {
            Feature::Cds | Feature::Ud => Modality::Visual,
            Feature::Spud | Feature::Struct => Modality::Tabular,
            Feature::Text => Modality::Textual,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Cds => "CDS",
            Feature::Ud => "UD",
            Feature::Spud => "SPUD",
            Feature::Struct => "Struct",
            Feature::Text => "Text",
        }
    }

    pub fn parse(s: &str) -> Result<Feature> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown feature `{s}`")))
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-image inputs: two 720-d embeddings and two 21-d score vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub cds: Vec<f32>,
    pub ud: Vec<f32>,
    pub part_vis: Vec<f32>,
    pub ud_score: Vec<f32>,
}

/// Score pair used for a part the image does not show: invisible (0) and
/// undamaged (0).
pub fn impute_absent_part(part_index: usize) -> Result<(f32, f32)> {
    if part_index >= PARTS {
        return Err(Error::InvalidArgument(format!(
            "part index {part_index} outside 0..{PARTS}"
        )));
    }
    Ok((0.0, 0.0))
}

impl ImageRecord {
    /// Builds the score vectors from per-part observations, imputing parts
    /// that are `None`.
    pub fn from_parts(cds: Vec<f32>, ud: Vec<f32>, parts: &[Option<(f32, f32)>]) -> Result<Self> {
        if parts.len() != PARTS {
            return Err(Error::InvalidArgument(format!(
                "expected {PARTS} part observations, got {}",
                parts.len()
            )));
        }
        let mut part_vis = Vec::with_capacity(PARTS);
        let mut ud_score = Vec::with_capacity(PARTS);
        for (i, p) in parts.iter().enumerate() {
            let (v, d) = match p {
                Some(obs) => *obs,
                None => impute_absent_part(i)?,
            };
            part_vis.push(v);
            ud_score.push(d);
        }
        Ok(ImageRecord {
            cds,
            ud,
            part_vis,
            ud_score,
        })
    }

    fn validate(&self, at: &str) -> std::result::Result<(), (String, String)> {
        check_len(&format!("{at}.cds"), &self.cds, IMAGE_EMB_DIM)?;
        check_len(&format!("{at}.ud"), &self.ud, IMAGE_EMB_DIM)?;
        check_len(&format!("{at}.part_vis"), &self.part_vis, PARTS)?;
        check_len(&format!("{at}.ud_score"), &self.ud_score, PARTS)?;
        for (name, scores) in [("part_vis", &self.part_vis), ("ud_score", &self.ud_score)] {
            if let Some(i) = scores.iter().position(|s| !(0.0..=1.0).contains(s)) {
                return Err((
                    format!("{at}.{name}[{i}]"),
                    format!("score {} outside [0, 1]", scores[i]),
                ));
            }
        }
        Ok(())
    }
}

/// One claim's raw multimodal inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub claim_id: String,
    /// 0 = not fraudulent, 1 = fraudulent.
    pub label: u8,
    pub images: Vec<ImageRecord>,
    pub struct_onehot: Vec<f32>,
    pub text_emb: Option<Vec<f32>>,
}

fn check_len(path: &str, v: &[f32], expected: usize) -> std::result::Result<(), (String, String)> {
    if v.len() != expected {
        return Err((path.to_string(), format!("expected {expected}, got {}", v.len())));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err((format!("{path}[{i}]"), "non-finite value".into()));
    }
    Ok(())
}

impl ClaimRecord {
    /// Schema check. On failure returns `(field path, message)`.
    pub fn validate(&self) -> std::result::Result<(), (String, String)> {
        if self.label > 1 {
            return Err(("label".into(), format!("expected 0 or 1, got {}", self.label)));
        }
        if self.images.is_empty() {
            return Err(("images".into(), "a claim needs at least one image".into()));
        }
        for (i, img) in self.images.iter().enumerate() {
            img.validate(&format!("images[{i}]"))?;
        }
        check_len("struct_onehot", &self.struct_onehot, STRUCT_DIM)?;
        if let Some(i) = self.struct_onehot.iter().position(|&x| x != 0.0 && x != 1.0) {
            return Err((format!("struct_onehot[{i}]"), "one-hot entries must be 0 or 1".into()));
        }
        if let Some(t) = &self.text_emb {
            check_len("text_emb", t, TEXT_DIM)?;
        }
        Ok(())
    }

    pub fn has(&self, feature: Feature) -> bool {
        match feature {
            Feature::Text => self.text_emb.is_some(),
            Feature::Struct => true,
            Feature::Cds | Feature::Ud | Feature::Spud => !self.images.is_empty(),
        }
    }

    /// Fails with an availability error naming the first missing modality.
    pub fn require(&self, features: &[Feature]) -> Result<()> {
        for &f in features {
            if !self.has(f) {
                return Err(Error::Availability {
                    claim_id: self.claim_id.clone(),
                    modality: f.name().to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Per-part max/min/mean of both score sets.
///
/// Layout: `part_vis` block then `ud_score` block; within each block the
/// max, min and mean sub-blocks follow each other and each holds the 21
/// parts in order.
pub fn aggregate_spud(images: &[ImageRecord]) -> Result<Vec<f32>> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("aggregate_spud: empty image list".into()));
    }
    let mut out = Vec::with_capacity(SPUD_DIM);
    fn part_vis(i: &ImageRecord) -> &[f32] {
        &i.part_vis
    }
    fn ud_score(i: &ImageRecord) -> &[f32] {
        &i.ud_score
    }
    for pick in [part_vis as fn(&ImageRecord) -> &[f32], ud_score] {
        let mut max = [f32::NEG_INFINITY; PARTS];
        let mut min = [f32::INFINITY; PARTS];
        let mut sum = [0.0f64; PARTS];
        for img in images {
            let scores = pick(img);
            if scores.len() != PARTS {
                return Err(Error::InvalidArgument(format!(
                    "score vector: expected {PARTS}, got {}",
                    scores.len()
                )));
            }
            for (p, &s) in scores.iter().enumerate() {
                if !(0.0..=1.0).contains(&s) {
                    return Err(Error::InvalidArgument(format!(
                        "score {s} for part {p} outside [0, 1]"
                    )));
                }
                max[p] = max[p].max(s);
                min[p] = min[p].min(s);
                sum[p] += s as f64;
            }
        }
        let n = images.len() as f64;
        let mean = sum.map(|s| (s / n) as f32);
        // Rounding the mean can land a hair outside [min, max].
        let mean: Vec<f32> = (0..PARTS).map(|p| mean[p].clamp(min[p], max[p])).collect();
        out.extend_from_slice(&max);
        out.extend_from_slice(&min);
        out.extend_from_slice(&mean);
    }
    Ok(out)
}

/// Two-layer per-image encoder (720→h→50, ReLU between) followed by
/// average pooling over the claim's images.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualEncoder {
    first: Linear,
    second: Linear,
}

impl VisualEncoder {
    pub fn new<T: Real>(params: &mut ParamSet<T>, name: &str, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::with_dims(params, name, IMAGE_EMB_DIM, hidden, VISUAL_FEATURE_DIM, rng)
    }

    pub fn with_dims<T: Real>(
        params: &mut ParamSet<T>,
        name: &str,
        n_in: usize,
        hidden: usize,
        n_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        VisualEncoder {
            first: Linear::new(params, &format!("{name}.fc1"), n_in, hidden, true, rng),
            second: Linear::new(params, &format!("{name}.fc2"), hidden, n_out, true, rng),
        }
    }

    pub fn param_count(hidden: usize) -> usize {
        Linear::param_count(IMAGE_EMB_DIM, hidden, true) + Linear::param_count(hidden, VISUAL_FEATURE_DIM, true)
    }

    pub fn n_in(&self) -> usize {
        self.first.n_in
    }

    /// `images` holds every image of the batch as rows; claim `c` owns rows
    /// `offsets[c]..offsets[c+1]`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, images: Var, offsets: &[usize]) -> Result<Var> {
        let h = self.first.forward(g, images)?;
        let h = g.relu(h)?;
        let z = self.second.forward(g, h)?;
        g.segment_mean(z, offsets)
    }
}

/// Mean over images of `enc(image)` for a single claim.
pub fn encode_image_set<T: Real>(enc: &VisualEncoder, params: &ParamSet<T>, images: &[&[f32]]) -> Result<Vec<T>> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("encode_image_set: empty image list".into()));
    }
    let n_in = enc.n_in();
    let mut data = Vec::with_capacity(images.len() * n_in);
    for img in images {
        if img.len() != n_in {
            return Err(Error::shape("encode_image_set", &[img.len()], &[n_in]));
        }
        data.extend(img.iter().map(|&v| T::from_f64(v as f64)));
    }
    let mut g = Graph::with_params(params);
    let x = g.input(Tensor::matrix(images.len(), n_in, data)?)?;
    let out = enc.forward(&mut g, x, &[0, images.len()])?;
    Ok(g.value(out).data().to_vec())
}

/// The five claim-level feature vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClaimFeatureSet {
    pub a_cds: Vec<f32>,
    pub a_ud: Vec<f32>,
    pub a_spud: Vec<f32>,
    pub a_struct: Vec<f32>,
    pub a_text: Option<Vec<f32>>,
}

impl ClaimFeatureSet {
    pub fn get(&self, f: Feature) -> Option<&[f32]> {
        match f {
            Feature::Cds => Some(&self.a_cds),
            Feature::Ud => Some(&self.a_ud),
            Feature::Spud => Some(&self.a_spud),
            Feature::Struct => Some(&self.a_struct),
            Feature::Text => self.a_text.as_deref(),
        }
    }
}

/// Builds every claim-level feature after checking that `required`
/// modalities are present.
pub fn assemble_feature_set<T: Real>(
    rec: &ClaimRecord,
    params: &ParamSet<T>,
    enc_cds: &VisualEncoder,
    enc_ud: &VisualEncoder,
    required: &[Feature],
) -> Result<ClaimFeatureSet> {
    rec.require(required)?;
    let cds: Vec<&[f32]> = rec.images.iter().map(|i| i.cds.as_slice()).collect();
    let ud: Vec<&[f32]> = rec.images.iter().map(|i| i.ud.as_slice()).collect();
    let to32 = |v: Vec<T>| v.into_iter().map(|x| x.to_f64() as f32).collect();
    Ok(ClaimFeatureSet {
        a_cds: to32(encode_image_set(enc_cds, params, &cds)?),
        a_ud: to32(encode_image_set(enc_ud, params, &ud)?),
        a_spud: aggregate_spud(&rec.images)?,
        a_struct: rec.struct_onehot.clone(),
        a_text: rec.text_emb.clone(),
    })
}

/// Visual stream of a batch: raw per-image embeddings to be encoded in the
/// graph, or claim-level features that bypass the encoder.
#[derive(Clone, Debug)]
pub enum VisualInput<T> {
    Images { rows: Tensor<T>, offsets: Vec<usize> },
    Encoded(Tensor<T>),
}

/// Tensors for one mini-batch. Only the features a model asks for are
/// materialised.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub labels: Vec<usize>,
    pub cds: Option<VisualInput<T>>,
    pub ud: Option<VisualInput<T>>,
    pub spud: Option<Tensor<T>>,
    pub structv: Option<Tensor<T>>,
    pub text: Option<Tensor<T>>,
}

impl<T: Real> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Batch built from already-assembled feature sets.
    pub fn from_feature_sets(sets: &[&ClaimFeatureSet], labels: &[usize], features: &[Feature]) -> Result<Self> {
        let n = sets.len();
        let gather = |f: Feature| -> Result<Tensor<T>> {
            let mut data = Vec::with_capacity(n * f.dim());
            for s in sets {
                let v = s.get(f).ok_or_else(|| Error::Availability {
                    claim_id: "<feature set>".into(),
                    modality: f.name().into(),
                })?;
                if v.len() != f.dim() {
                    return Err(Error::shape("feature set", &[v.len()], &[f.dim()]));
                }
                data.extend(v.iter().map(|&x| T::from_f64(x as f64)));
            }
            Tensor::matrix(n, f.dim(), data)
        };
        let want = |f| features.contains(&f);
        Ok(Batch {
            labels: labels.to_vec(),
            cds: want(Feature::Cds).then(|| gather(Feature::Cds).map(VisualInput::Encoded)).transpose()?,
            ud: want(Feature::Ud).then(|| gather(Feature::Ud).map(VisualInput::Encoded)).transpose()?,
            spud: want(Feature::Spud).then(|| gather(Feature::Spud)).transpose()?,
            structv: want(Feature::Struct).then(|| gather(Feature::Struct)).transpose()?,
            text: want(Feature::Text).then(|| gather(Feature::Text)).transpose()?,
        })
    }
}

/// Column store of a dataset with the non-trainable preprocessing (SPUD
/// aggregation) done once up front.
#[derive(Clone, Debug)]
pub struct ClaimTable {
    ids: Vec<String>,
    labels: Vec<usize>,
    image_offsets: Vec<usize>,
    cds: Vec<f32>,
    ud: Vec<f32>,
    spud: Vec<f32>,
    structv: Vec<f32>,
    text: Vec<Option<usize>>,
    text_rows: Vec<f32>,
}

impl ClaimTable {
    pub fn from_records(records: &[ClaimRecord]) -> Result<Self> {
        let mut t = ClaimTable {
            ids: Vec::with_capacity(records.len()),
            labels: Vec::with_capacity(records.len()),
            image_offsets: vec![0],
            cds: Vec::new(),
            ud: Vec::new(),
            spud: Vec::with_capacity(records.len() * SPUD_DIM),
            structv: Vec::with_capacity(records.len() * STRUCT_DIM),
            text: Vec::with_capacity(records.len()),
            text_rows: Vec::new(),
        };
        for rec in records {
            rec.validate().map_err(|(path, message)| {
                Error::InvalidArgument(format!("claim {}: {path}: {message}", rec.claim_id))
            })?;
            t.ids.push(rec.claim_id.clone());
            t.labels.push(rec.label as usize);
            for img in &rec.images {
                t.cds.extend_from_slice(&img.cds);
                t.ud.extend_from_slice(&img.ud);
            }
            t.image_offsets.push(t.image_offsets.last().unwrap() + rec.images.len());
            t.spud.extend(aggregate_spud(&rec.images)?);
            t.structv.extend_from_slice(&rec.struct_onehot);
            match &rec.text_emb {
                Some(e) => {
                    t.text.push(Some(t.text_rows.len() / TEXT_DIM));
                    t.text_rows.extend_from_slice(e);
                }
                None => t.text.push(None),
            }
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn claim_id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn has_text(&self, i: usize) -> bool {
        self.text[i].is_some()
    }

    /// Gathers the rows of `ids` for the listed features.
    pub fn batch<T: Real>(&self, ids: &[usize], features: &[Feature]) -> Result<Batch<T>> {
        let want = |f| features.contains(&f);
        let cast = |v: &[f32], out: &mut Vec<T>| out.extend(v.iter().map(|&x| T::from_f64(x as f64)));
        let images = |src: &[f32]| -> Result<VisualInput<T>> {
            let mut offsets = Vec::with_capacity(ids.len() + 1);
            offsets.push(0);
            let mut data = Vec::new();
            for &i in ids {
                let (a, b) = (self.image_offsets[i], self.image_offsets[i + 1]);
                cast(&src[a * IMAGE_EMB_DIM..b * IMAGE_EMB_DIM], &mut data);
                offsets.push(offsets.last().unwrap() + (b - a));
            }
            let rows = *offsets.last().unwrap();
            Ok(VisualInput::Images {
                rows: Tensor::matrix(rows, IMAGE_EMB_DIM, data)?,
                offsets,
            })
        };
        let dense = |src: &[f32], dim: usize| -> Result<Tensor<T>> {
            let mut data = Vec::with_capacity(ids.len() * dim);
            for &i in ids {
                cast(&src[i * dim..(i + 1) * dim], &mut data);
            }
            Tensor::matrix(ids.len(), dim, data)
        };
        let text = if want(Feature::Text) {
            let mut data = Vec::with_capacity(ids.len() * TEXT_DIM);
            for &i in ids {
                let row = self.text[i].ok_or_else(|| Error::Availability {
                    claim_id: self.ids[i].clone(),
                    modality: Feature::Text.name().into(),
                })?;
                cast(&self.text_rows[row * TEXT_DIM..(row + 1) * TEXT_DIM], &mut data);
            }
            Some(Tensor::matrix(ids.len(), TEXT_DIM, data)?)
        } else {
            None
        };
        Ok(Batch {
            labels: ids.iter().map(|&i| self.labels[i]).collect(),
            cds: want(Feature::Cds).then(|| images(&self.cds)).transpose()?,
            ud: want(Feature::Ud).then(|| images(&self.ud)).transpose()?,
            spud: want(Feature::Spud).then(|| dense(&self.spud, SPUD_DIM)).transpose()?,
            structv: want(Feature::Struct).then(|| dense(&self.structv, STRUCT_DIM)).transpose()?,
            text,
        })
    }
}
