use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::graph::{Graph, Var};
use crate::rng::RngStream;

/// Standard Gumbel noise shaped like `shape`, row-major draw order.
pub fn gumbel_noise(shape: (usize, usize), rng: &mut RngStream) -> Matrix {
    let data = (0..shape.0 * shape.1).map(|_| rng.gumbel()).collect();
    Matrix::from_vec(shape.0, shape.1, data).expect("sized buffer")
}

/// One-hot of each row's arg-max (ties to the lowest column).
pub fn one_hot_argmax(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        let row = m.row(r);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        out.set(r, best, 1.0);
    }
    out
}

/// Relaxed sample `softmax((logits + noise) / tau)` with explicit noise.
pub fn gumbel_softmax_soft(g: &mut Graph, logits: Var, noise: &Matrix, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("gumbel temperature must be > 0, got {tau}")));
    }
    let n = g.constant(noise.clone());
    let z = g.add(logits, n)?;
    let z = g.scale(z, 1.0 / tau);
    Ok(g.softmax_rows(z))
}

/// Gumbel-softmax over the rows of `logits`. In hard mode the forward value
/// is the one-hot arg-max while gradients flow through the relaxed sample.
pub fn gumbel_softmax(
    g: &mut Graph,
    logits: Var,
    tau: f64,
    hard: bool,
    rng: &mut RngStream,
) -> Result<Var> {
    let noise = gumbel_noise(g.shape(logits), rng);
    let soft = gumbel_softmax_soft(g, logits, &noise, tau)?;
    if hard {
        let onehot = one_hot_argmax(g.value(soft));
        g.straight_through(soft, onehot)
    } else {
        Ok(soft)
    }
}

/// Mean cross-entropy of `[B × K]` logits against labels.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    g.cross_entropy(logits, labels)
}
