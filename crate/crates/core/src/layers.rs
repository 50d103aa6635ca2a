//! Parameterised building blocks shared by the encoders, fusion blocks and
//! classifiers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::graph::{Graph, Mode, ParamId, ParamSet, Var};
use crate::tensor::{Real, Tensor};

/// uniform(−1/√fan_in, +1/√fan_in) weights of shape `[out, in]`.
pub(crate) fn uniform_weights<T: Real>(n_out: usize, n_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let bound = 1.0 / (n_in as f64).sqrt();
    let data = (0..n_out * n_in)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new(vec![n_out, n_in], data).expect("positive dims")
}

/// Normal(0, σ²) entries with the given shape.
pub(crate) fn normal_tensor<T: Real>(shape: &[usize], sigma: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let dist = Normal::new(0.0, sigma).expect("finite sigma");
    let len = shape.iter().product();
    let data = (0..len).map(|_| T::from_f64(dist.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("positive dims")
}

/// Fully connected layer `y = W·x (+ b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn new<T: Real>(
        params: &mut ParamSet<T>,
        name: &str,
        n_in: usize,
        n_out: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = params.register(format!("{name}.weight"), uniform_weights(n_out, n_in, rng));
        let bias = bias.then(|| params.register(format!("{name}.bias"), Tensor::zeros(&[n_out])));
        Linear {
            weight,
            bias,
            n_in,
            n_out,
        }
    }

    pub fn param_count(n_in: usize, n_out: usize, bias: bool) -> usize {
        n_out * n_in + if bias { n_out } else { 0 }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight)?;
        let b = self.bias.map(|b| g.param(b)).transpose()?;
        g.affine(x, w, b)
    }
}

/// Stack of affine layers with ReLU + dropout after every hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
    sites: Vec<u64>,
    dropout: f64,
}

impl Mlp {
    /// `dims` lists every width from input to output, e.g. `[50, 500, 500, 2]`.
    pub fn new<T: Real>(params: &mut ParamSet<T>, name: &str, dims: &[usize], dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let layers: Vec<Linear> = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(params, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect();
        let sites = (1..layers.len()).map(|_| params.next_site()).collect();
        Mlp {
            layers,
            sites,
            dropout,
        }
    }

    pub fn param_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| Linear::param_count(w[0], w[1], true)).sum()
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().unwrap().n_out
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, mode: Mode) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if i < last {
                h = g.relu(h)?;
                h = g.dropout(h, self.dropout, mode, self.sites[i])?;
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn mlp_counts_match_registry() {
        let mut params = ParamSet::<f64>::new();
        let dims = [50, 500, 500, 2];
        Mlp::new(&mut params, "mlp", &dims, 0.5, &mut stream(1, 0, 0));
        assert_eq!(params.scalar_count(), Mlp::param_count(&dims));
        assert_eq!(Mlp::param_count(&dims), 277_002);
        assert_eq!(Linear::param_count(50, 500, true), 25_500);
    }

    #[test]
    fn uniform_init_bounds() {
        let w: Tensor<f64> = uniform_weights(30, 16, &mut stream(2, 0, 0));
        assert!(w.data().iter().all(|v| v.abs() <= 0.25));
    }
}
