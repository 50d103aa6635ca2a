//! Synthetic claims with a planted cross-modal fraud signal.
//!
//! Each claim draws visual latents `z_v` and tabular latents `z_t`. The
//! first visual coordinate drives the CDS embeddings, the second the UD
//! embeddings; the first tabular coordinate drives the part scores (and
//! hence SPUD), the second the structured one-hot fields. The fraud logit is
//!
//! ```text
//! b0 + α_v (s_cds + s_ud) + α_t (s_spud + s_struct)
//!    + β (s_cds · s_spud + s_ud · s_struct)
//! ```
//!
//! with `b0` calibrated to the requested fraud rate. The sign products
//! reward models that see a visual and a tabular feature together, most of
//! all the pairs (CDS, SPUD) and (UD, Struct). Text is a weak noisy view of
//! the tabular latents.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ClaimRecord, ImageRecord, IMAGE_EMB_DIM, PARTS, STRUCT_DIM, TEXT_DIM};
use crate::rng::{purpose, stream};

/// Category counts of the structured fields; they sum to 87.
pub const STRUCT_GROUPS: [usize; 10] = [12, 10, 9, 9, 9, 8, 8, 8, 7, 7];
/// Structured fields that read the tabular latent; the rest are nuisance.
const SIGNAL_GROUPS: usize = 5;
const NUISANCE: usize = 4;
const CALIBRATION_DRAWS: u64 = 20_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_claims: usize,
    pub fraud_rate: f64,
    pub images_min: usize,
    pub images_max: usize,
    pub visual_latent_dim: usize,
    pub tabular_latent_dim: usize,
    pub beta: f64,
    pub alpha_v: f64,
    pub alpha_t: f64,
    /// Observation noise on every latent read-out.
    pub noise_sigma: f64,
    /// Probability that a claim carries no text embedding.
    pub text_missing_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_claims: 20_000,
            fraud_rate: 0.03,
            images_min: 1,
            images_max: 6,
            visual_latent_dim: 2,
            tabular_latent_dim: 2,
            beta: 2.0,
            alpha_v: 0.6,
            alpha_t: 0.4,
            noise_sigma: 0.5,
            text_missing_rate: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_claims == 0 {
            return fail("n_claims must be positive".into());
        }
        if !(self.fraud_rate > 0.0 && self.fraud_rate < 1.0) {
            return fail(format!("fraud_rate {} must lie in (0, 1)", self.fraud_rate));
        }
        if self.images_min == 0 || self.images_min > self.images_max {
            return fail(format!(
                "images per claim range {}..={} is empty or starts at 0",
                self.images_min, self.images_max
            ));
        }
        if self.visual_latent_dim < 2 || self.tabular_latent_dim < 2 {
            return fail("latent dims must be at least 2".into());
        }
        if !(self.beta >= 0.0) || !(self.noise_sigma >= 0.0) {
            return fail("beta and noise_sigma must be non-negative".into());
        }
        if ![self.alpha_v, self.alpha_t, self.beta, self.noise_sigma].iter().all(|v| v.is_finite()) {
            return fail("strengths must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.text_missing_rate) {
            return fail("text_missing_rate must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Per-claim latent summaries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latents {
    pub s_cds: f64,
    pub s_ud: f64,
    pub s_spud: f64,
    pub s_struct: f64,
    pub logit: f64,
}

/// Fixed readout directions shared by every claim of a dataset.
struct Emission {
    cds: Vec<Vec<f32>>,
    ud: Vec<Vec<f32>>,
    text: Vec<Vec<f32>>,
    part_gain: [[f64; PARTS]; 2],
    part_offset: [[f64; PARTS]; 2],
    struct_gain: Vec<f64>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_vector(dim: usize, norm: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (norm * x / n) as f32).collect()
}

impl Emission {
    fn new(cfg: &SynthConfig) -> Self {
        let mut rng = stream(cfg.seed, purpose::SYNTH_PARAMS, 0);
        // One direction per visual latent plus nuisance directions.
        let dirs = |dim, rng: &mut ChaCha8Rng| -> Vec<Vec<f32>> {
            (0..cfg.visual_latent_dim.max(cfg.tabular_latent_dim) + NUISANCE)
                .map(|_| unit_vector(dim, 3.0, rng))
                .collect()
        };
        let cds = dirs(IMAGE_EMB_DIM, &mut rng);
        let ud = dirs(IMAGE_EMB_DIM, &mut rng);
        let text = dirs(TEXT_DIM, &mut rng);
        let mut part_gain = [[0.0; PARTS]; 2];
        let mut part_offset = [[0.0; PARTS]; 2];
        for k in 0..2 {
            for j in 0..PARTS {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                part_gain[k][j] = sign * rng.gen_range(0.5..1.5);
                part_offset[k][j] = rng.gen_range(-0.5..0.5);
            }
        }
        let struct_gain = (0..STRUCT_GROUPS.len())
            .map(|g| if g < SIGNAL_GROUPS { rng.gen_range(0.6..1.2) } else { 0.0 })
            .collect();
        Emission {
            cds,
            ud,
            text,
            part_gain,
            part_offset,
            struct_gain,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit_without_bias(cfg: &SynthConfig, s: [f64; 4]) -> f64 {
    let [cds, ud, spud, st] = s;
    cfg.alpha_v * (cds + ud) + cfg.alpha_t * (spud + st) + cfg.beta * (cds * spud + ud * st)
}

fn draw_latents(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let zv = (0..cfg.visual_latent_dim).map(|_| normal(rng)).collect();
    let zt = (0..cfg.tabular_latent_dim).map(|_| normal(rng)).collect();
    (zv, zt)
}

/// Intercept giving `E[sigmoid(logit)] = fraud_rate` over a fixed
/// calibration sample.
pub fn calibrate_bias(cfg: &SynthConfig) -> f64 {
    let mut rng = stream(cfg.seed, purpose::SYNTH_CALIBRATION, 0);
    let partial: Vec<f64> = (0..CALIBRATION_DRAWS)
        .map(|_| {
            let (zv, zt) = draw_latents(cfg, &mut rng);
            logit_without_bias(cfg, [zv[0], zv[1], zt[0], zt[1]])
        })
        .collect();
    let rate = |b: f64| partial.iter().map(|&l| sigmoid(b + l)).sum::<f64>() / partial.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < cfg.fraud_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Bins a standard-normal value into roughly equally likely categories,
/// using the logistic approximation of the normal CDF.
fn bin(value: f64, categories: usize) -> usize {
    let u = sigmoid(1.702 * value);
    ((u * categories as f64) as usize).min(categories - 1)
}

fn embed(dirs: &[Vec<f32>], coefs: &[f64], iso: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let dim = dirs[0].len();
    let mut out: Vec<f32> = (0..dim).map(|_| (iso * normal(rng)) as f32).collect();
    for (d, &c) in dirs.iter().zip(coefs) {
        for (o, &x) in out.iter_mut().zip(d) {
            *o += x * c as f32;
        }
    }
    out
}

fn claim(cfg: &SynthConfig, em: &Emission, b0: f64, index: usize) -> Result<(ClaimRecord, Latents)> {
    let mut rng = stream(cfg.seed, purpose::SYNTH, index as u64);
    let (zv, zt) = draw_latents(cfg, &mut rng);
    let s = [zv[0], zv[1], zt[0], zt[1]];
    let logit = b0 + logit_without_bias(cfg, s);
    let label = rng.gen_bool(sigmoid(logit)) as u8;
    let sigma = cfg.noise_sigma;

    let n_images = rng.gen_range(cfg.images_min..=cfg.images_max);
    let nuisance_v: Vec<f64> = (0..NUISANCE).map(|_| normal(&mut rng)).collect();
    let mut images = Vec::with_capacity(n_images);
    for _ in 0..n_images {
        // Each stream sees its own latent strongly and the other weakly.
        let view = |main: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
            let mut c: Vec<f64> = zv
                .iter()
                .enumerate()
                .map(|(k, &z)| (if k == main { z } else { 0.2 * z }) + sigma * normal(rng))
                .collect();
            c.resize(em.cds.len() - NUISANCE, 0.0);
            c.extend(nuisance_v.iter().map(|&n| n + 0.5 * normal(rng)));
            c
        };
        let cds_coef = view(0, &mut rng);
        let ud_coef = view(1, &mut rng);
        let cds = embed(&em.cds, &cds_coef, 0.05, &mut rng);
        let ud = embed(&em.ud, &ud_coef, 0.05, &mut rng);
        let seen = zt[0] + sigma * normal(&mut rng);
        let parts: Vec<Option<(f32, f32)>> = (0..PARTS)
            .map(|j| {
                rng.gen_bool(0.7).then(|| {
                    let score = |k: usize, rng: &mut ChaCha8Rng| {
                        sigmoid(em.part_gain[k][j] * seen + em.part_offset[k][j] + 0.5 * normal(rng)) as f32
                    };
                    (score(0, &mut rng), score(1, &mut rng))
                })
            })
            .collect();
        images.push(ImageRecord::from_parts(cds, ud, &parts)?);
    }

    let mut struct_onehot = vec![0.0f32; STRUCT_DIM];
    let mut offset = 0;
    for (g, &cats) in STRUCT_GROUPS.iter().enumerate() {
        let gain = em.struct_gain[g];
        let v = if gain == 0.0 {
            normal(&mut rng)
        } else {
            (gain * zt[1] + sigma * normal(&mut rng)) / (gain * gain + sigma * sigma).sqrt()
        };
        struct_onehot[offset + bin(v, cats)] = 1.0;
        offset += cats;
    }

    let text_emb = if rng.gen_bool(cfg.text_missing_rate) {
        None
    } else {
        let mut c: Vec<f64> = zt.iter().map(|&z| 0.25 * z + 1.0 * normal(&mut rng)).collect();
        c.resize(em.text.len() - NUISANCE, 0.0);
        c.extend((0..NUISANCE).map(|_| normal(&mut rng)));
        Some(embed(&em.text, &c, 0.05, &mut rng))
    };

    let record = ClaimRecord {
        claim_id: format!("syn{}-{index:06}", cfg.seed),
        label,
        images,
        struct_onehot,
        text_emb,
    };
    let latents = Latents {
        s_cds: s[0],
        s_ud: s[1],
        s_spud: s[2],
        s_struct: s[3],
        logit,
    };
    Ok((record, latents))
}

/// Claims together with the latents that generated them.
pub fn generate_with_latents(cfg: &SynthConfig) -> Result<Vec<(ClaimRecord, Latents)>> {
    cfg.validate()?;
    let em = Emission::new(cfg);
    let b0 = calibrate_bias(cfg);
    (0..cfg.n_claims).into_par_iter().map(|i| claim(cfg, &em, b0, i)).collect()
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<ClaimRecord>> {
    Ok(generate_with_latents(cfg)?.into_iter().map(|(r, _)| r).collect())
}
