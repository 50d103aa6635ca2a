#![allow(dead_code)]

pub mod gradsuite;
pub mod oracles;

use mmfuse::features::{Batch, VisualInput};
use mmfuse::models::{InputDims, Profile};
use mmfuse::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries uniform in ±[lo, hi], bounded away from zero so kinks stay out
/// of reach of the finite-difference step.
pub fn away_from_zero(shape: &[usize], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.gen_range(lo..hi);
            if r.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

/// Every width at most 8.
pub fn tiny_profile() -> Profile {
    Profile {
        inputs: InputDims {
            image: 6,
            visual: 4,
            spud: 5,
            structv: 6,
            text: 7,
        },
        encoder_hidden: 3,
        mlp_hidden: vec![5],
        dropout_p: 0.5,
        mm_dim: 8,
        out_dim: 4,
        chunks: 2,
        rank: 2,
        pool_factor: 2,
        mfh_stages: 2,
    }
}

/// Random batch of `n` claims matching `dims`, with 1–3 images per claim.
pub fn tiny_batch(dims: &InputDims, n: usize, seed: u64) -> Batch<f64> {
    let mut r = rng(seed);
    let images = |r: &mut ChaCha8Rng| {
        let mut offsets = vec![0];
        for _ in 0..n {
            offsets.push(offsets.last().unwrap() + r.gen_range(1..=3));
        }
        let rows = uniform(&[*offsets.last().unwrap(), dims.image], -1.0, 1.0, r);
        VisualInput::Images { rows, offsets }
    };
    let cds = images(&mut r);
    let ud = images(&mut r);
    Batch {
        labels: (0..n).map(|i| i % 2).collect(),
        cds: Some(cds),
        ud: Some(ud),
        spud: Some(uniform(&[n, dims.spud], 0.0, 1.0, &mut r)),
        structv: Some(uniform(&[n, dims.structv], 0.0, 1.0, &mut r)),
        text: Some(uniform(&[n, dims.text], -1.0, 1.0, &mut r)),
    }
}
