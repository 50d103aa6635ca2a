//! Records a small computation, backpropagates, and checks the gradient
//! against central differences.

use mmfuse::gradcheck::{check_inputs, DEFAULT_STEP};
use mmfuse::{Graph, Tensor};

fn main() -> mmfuse::Result<()> {
    let x = Tensor::matrix(2, 3, vec![0.5, -1.2, 2.0, 0.3, 0.8, -0.4])?;
    let w = Tensor::matrix(2, 3, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6])?;

    let mut g = Graph::<f64>::new();
    let xv = g.input(x.clone())?;
    let wv = g.variable(w.clone())?;
    let h = g.affine(xv, wv, None)?;
    let h = g.tanh(h)?;
    let loss = g.softmax_cross_entropy(h, &[0, 1])?;
    let grads = g.backward(loss)?;
    println!("loss {:.6}", g.value(loss).data()[0]);
    println!("dL/dW {:?}", grads.wrt(wv).unwrap().data());

    let report = check_inputs(&[x, w], DEFAULT_STEP, |g, v| {
        let h = g.affine(v[0], v[1], None)?;
        let h = g.tanh(h)?;
        g.softmax_cross_entropy(h, &[0, 1])
    })?;
    println!("finite differences: max rel error {:.2e} over {} entries", report.max_rel_error, report.entries);
    Ok(())
}
