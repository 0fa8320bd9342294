//! Discrete selection primitives: top-k, k-nearest neighbours, and the
//! Gumbel-Softmax relaxation.

use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Indices of the `k` largest scores in descending order; ties go to the
/// lowest index.
pub fn top_k_select(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::KOutOfRange { k, n: scores.len() });
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// For every point, the `k` nearest other points by Euclidean distance in
/// ascending order (ties to the lowest index, self excluded).
pub fn knn_indices(points: &[[f64; 3]], k: usize) -> Result<Vec<Vec<usize>>> {
    let n = points.len();
    if k == 0 || k + 1 > n {
        return Err(Error::KOutOfRange {
            k,
            n: n.saturating_sub(1),
        });
    }
    let mut out = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for (i, p) in points.iter().enumerate() {
        cand.clear();
        cand.extend(
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, q)| (dist2(p, q), j)),
        );
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        cand.select_nth_unstable_by(k - 1, cmp);
        let mut near = cand[..k].to_vec();
        near.sort_by(cmp);
        out.push(near.into_iter().map(|(_, j)| j).collect());
    }
    Ok(out)
}

/// Standard Gumbel(0, 1) samples.
pub fn gumbel_noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>().clamp(1e-300, 1.0 - 1e-16);
            -(-u.ln()).ln()
        })
        .collect()
}

/// Gumbel-Softmax over the trailing axis of `logits` with explicit noise.
///
/// Soft mode returns `softmax((logits + noise)/tau)`. Hard mode returns the
/// one-hot argmax of that distribution in the forward pass while gradients
/// flow through the soft distribution.
pub fn gumbel_softmax(
    tape: &mut Tape,
    logits: Var,
    tau: f64,
    hard: bool,
    noise: &[f64],
) -> Result<Var> {
    if tau <= 0.0 || tau.is_nan() {
        return Err(Error::NonPositiveTemperature(tau));
    }
    let shape = tape.value(logits).shape().to_vec();
    if noise.len() != tape.value(logits).len() {
        return Err(Error::ShapeMismatch(format!(
            "gumbel noise of length {} for logits {shape:?}",
            noise.len()
        )));
    }
    let n = tape.leaf(Tensor::new(shape, noise.to_vec())?);
    let perturbed = tape.add(logits, n)?;
    let scaled = tape.scale(perturbed, 1.0 / tau);
    let soft = tape.softmax_rows(scaled);
    Ok(if hard {
        tape.straight_through(soft)
    } else {
        soft
    })
}
