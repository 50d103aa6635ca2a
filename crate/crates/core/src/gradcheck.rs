//! Central finite-difference checks for the reverse-mode engine.
//!
//! The numeric side only ever evaluates forward values; it never touches
//! [`Graph::backward`], so it stays an independent reference.

use crate::error::Result;
use crate::graph::{Graph, ParamSet, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Result of one comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradReport {
    /// `max |analytic − numeric| / max(1, |numeric|)` over all entries.
    pub max_rel_error: f64,
    pub entries: usize,
}

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / n.abs().max(1.0)
}

/// Checks gradients with respect to leaf inputs. `f` must record the same
/// computation every time it is called and return a scalar.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], step: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    check_inputs_with(&ParamSet::new(), inputs, step, f)
}

/// [`check_inputs`] with `params` attached to every graph, held fixed.
pub fn check_inputs_with<F>(params: &ParamSet<f64>, inputs: &[Tensor<f64>], step: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::with_params(params);
        let vars = vals.iter().map(|t| g.input(t.clone())).collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::with_params(params);
    let vars = inputs.iter().map(|t| g.variable(t.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut worst = 0.0f64;
    let mut entries = 0;
    let mut probe = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        for i in 0..input.len() {
            let x = input.data()[i];
            probe[k].data_mut()[i] = x + step;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = x - step;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = x;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(rel(analytic.data()[i], numeric));
            entries += 1;
        }
    }
    Ok(GradReport {
        max_rel_error: worst,
        entries,
    })
}

/// Checks gradients with respect to every registered parameter.
pub fn check_params<F>(params: &ParamSet<f64>, step: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let eval = |ps: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::with_params(ps);
        let out = f(&mut g)?;
        Ok(g.value(out).data()[0])
    };

    let analytic = {
        let mut g = Graph::with_params(params);
        let out = f(&mut g)?;
        g.backward(out)?.param_grads(params)
    };

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    let mut entries = 0;
    for id in params.ids() {
        for i in 0..params.get(id).len() {
            let x = params.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = x + step;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = x - step;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = x;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(rel(analytic[id.index()].data()[i], numeric));
            entries += 1;
        }
    }
    Ok(GradReport {
        max_rel_error: worst,
        entries,
    })
}
