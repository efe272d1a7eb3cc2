//! Losses with exact gradients. Every loss is mean-reduced over the batch
//! and returns `(value, d value / d input)`.

use super::{NnError, Tensor};

fn same_shape(a: &Tensor, b: &Tensor) -> Result<(), NnError> {
    if a.shape() != b.shape() {
        return Err(NnError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `mean((pred - target)^2)`
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor), NnError> {
    same_shape(pred, target)?;
    let n = pred.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let r = p - t;
            loss += r * r;
            2.0 * r / n
        })
        .collect();
    Ok((loss / n, Tensor::new(grad, pred.shape().to_vec())?))
}

/// Per-element Huber value of a residual.
pub fn huber_value(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        0.5 * residual * residual
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Mean Huber loss: quadratic inside `delta`, linear outside.
pub fn huber(pred: &Tensor, target: &Tensor, delta: f64) -> Result<(f64, Tensor), NnError> {
    same_shape(pred, target)?;
    let n = pred.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let r = p - t;
            loss += huber_value(r, delta);
            r.clamp(-delta, delta) / n
        })
        .collect();
    Ok((loss / n, Tensor::new(grad, pred.shape().to_vec())?))
}

/// Row-wise softmax, shifted by the row max for stability.
pub fn softmax(logits: &Tensor) -> Result<Tensor, NnError> {
    let (b, a) = logits.expect_matrix("logits")?;
    let mut out = Vec::with_capacity(b * a);
    for r in 0..b {
        let row = logits.row(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|z| (z - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / s));
    }
    Tensor::matrix(b, a, out)
}

/// Row-wise log-softmax.
pub fn log_softmax(logits: &Tensor) -> Result<Tensor, NnError> {
    let (b, a) = logits.expect_matrix("logits")?;
    let mut out = Vec::with_capacity(b * a);
    for r in 0..b {
        let row = logits.row(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|z| z - lse));
    }
    Tensor::matrix(b, a, out)
}

/// `mean(-log softmax(logits)[action] * advantage)`. Advantages are
/// constants: no gradient flows into them.
pub fn policy_gradient(
    logits: &Tensor,
    actions: &[usize],
    advantages: &[f64],
) -> Result<(f64, Tensor), NnError> {
    let (b, a) = logits.expect_matrix("logits")?;
    if actions.len() != b || advantages.len() != b {
        return Err(NnError::ShapeMismatch(format!(
            "{b} logit rows, {} actions, {} advantages",
            actions.len(),
            advantages.len()
        )));
    }
    if let Some(bad) = actions.iter().find(|&&x| x >= a) {
        return Err(NnError::ShapeMismatch(format!(
            "action {bad} outside {a} logits"
        )));
    }
    let logp = log_softmax(logits)?;
    let p = softmax(logits)?;
    let n = b.max(1) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; b * a];
    for r in 0..b {
        let (act, adv) = (actions[r], advantages[r]);
        loss -= logp.get(r, act) * adv;
        for j in 0..a {
            let ind = if j == act { 1.0 } else { 0.0 };
            grad[r * a + j] = -adv * (ind - p.get(r, j)) / n;
        }
    }
    Ok((loss / n, Tensor::matrix(b, a, grad)?))
}

/// `mean(-sum p log p)` of `softmax(logits)`.
pub fn entropy(logits: &Tensor) -> Result<(f64, Tensor), NnError> {
    let (b, a) = logits.expect_matrix("logits")?;
    let logp = log_softmax(logits)?;
    let p = softmax(logits)?;
    let n = b.max(1) as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0; b * a];
    for r in 0..b {
        let h: f64 = -(0..a).map(|j| p.get(r, j) * logp.get(r, j)).sum::<f64>();
        total += h;
        for j in 0..a {
            // dH/dz_j = -p_j (log p_j + H)
            grad[r * a + j] = -p.get(r, j) * (logp.get(r, j) + h) / n;
        }
    }
    Ok((total / n, Tensor::matrix(b, a, grad)?))
}
