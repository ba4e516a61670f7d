//! Link hinge loss, auxiliary cross-entropy and the uncertainty-weighted
//! multi-task combination, each with its gradient.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// `x1^T U x2 + W (x1 ++ x2) + b` for a single source/target pair.
pub fn biaffine(
    x1: ArrayView1<f64>,
    x2: ArrayView1<f64>,
    u: ArrayView2<f64>,
    w: ArrayView1<f64>,
    b: f64,
) -> Result<f64> {
    let p = x1.len();
    if x2.len() != p || u.dim() != (p, p) || w.len() != 2 * p {
        return Err(Error::Shape(format!(
            "biaffine: x1 {}, x2 {}, U {:?}, W {}",
            p,
            x2.len(),
            u.dim(),
            w.len()
        )));
    }
    let bilinear = x1.dot(&u.dot(&x2));
    let linear = w.slice(ndarray::s![..p]).dot(&x1) + w.slice(ndarray::s![p..]).dot(&x2);
    Ok(bilinear + linear + b)
}

/// Highest-scoring column other than `gold` (lowest index on ties).
fn best_competitor(row: ArrayView1<f64>, gold: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &v) in row.iter().enumerate() {
        if j != gold && best.is_none_or(|b| v > row[b]) {
            best = Some(j);
        }
    }
    best
}

/// Mean over rows of `max(0, margin + max_{j != gold} g_ij - g_i,gold)`,
/// plus its subgradient with respect to `g`.
pub fn link_loss_with_grad(
    g: ArrayView2<f64>,
    gold_head: &[usize],
    margin: f64,
) -> (f64, Array2<f64>) {
    let n = g.nrows();
    let mut grad = Array2::zeros(g.raw_dim());
    if n == 0 {
        return (0.0, grad);
    }
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    for (i, row) in g.axis_iter(Axis(0)).enumerate() {
        let gold = gold_head[i];
        let Some(j) = best_competitor(row, gold) else {
            continue;
        };
        let violation = margin + row[j] - row[gold];
        if violation > 0.0 {
            total += violation;
            grad[[i, j]] += scale;
            grad[[i, gold]] -= scale;
        }
    }
    (total * scale, grad)
}

pub fn link_loss(g: ArrayView2<f64>, gold_head: &[usize], margin: f64) -> f64 {
    link_loss_with_grad(g, gold_head, margin).0
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy_with_grad(logits: ArrayView2<f64>, gold: &[usize]) -> (f64, Array2<f64>) {
    let n = logits.nrows();
    let mut grad = Array2::zeros(logits.raw_dim());
    if n == 0 {
        return (0.0, grad);
    }
    let mut total = 0.0;
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - row[gold[i]];
        for (k, &v) in row.iter().enumerate() {
            grad[[i, k]] = (v - log_z).exp() / n as f64;
        }
        grad[[i, gold[i]]] -= 1.0 / n as f64;
    }
    (total / n as f64, grad)
}

/// Mean cross-entropy of the QACT and depth heads.
pub fn aux_losses(
    qact_logits: ArrayView2<f64>,
    nd_logits: ArrayView2<f64>,
    gold_qact: &[usize],
    gold_nd: &[usize],
) -> (f64, f64) {
    (
        cross_entropy_with_grad(qact_logits, gold_qact).0,
        cross_entropy_with_grad(nd_logits, gold_nd).0,
    )
}

/// `sum_t L_t / (2 sigma_t^2) + ln sigma_t`.
pub fn mtl_loss(task_losses: &[f64], sigmas: &[f64]) -> Result<f64> {
    if task_losses.len() != sigmas.len() {
        return Err(Error::Argument(format!(
            "{} task losses, {} sigmas",
            task_losses.len(),
            sigmas.len()
        )));
    }
    if let Some(s) = sigmas.iter().find(|&&s| s.is_nan() || s <= 0.0) {
        return Err(Error::Argument(format!("sigma must be positive, got {s}")));
    }
    Ok(task_losses
        .iter()
        .zip(sigmas)
        .map(|(l, s)| l / (2.0 * s * s) + s.ln())
        .sum())
}

/// Multi-task loss in the log-sigma parameterisation, returning
/// `(loss, dloss/dL_t, dloss/dlog_sigma_t)`.
pub fn mtl_loss_log_sigma(task_losses: &[f64], log_sigmas: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let mut total = 0.0;
    let mut d_task = Vec::with_capacity(task_losses.len());
    let mut d_log_sigma = Vec::with_capacity(task_losses.len());
    for (&l, &s) in task_losses.iter().zip(log_sigmas) {
        let inv_var = (-2.0 * s).exp();
        total += 0.5 * l * inv_var + s;
        d_task.push(0.5 * inv_var);
        d_log_sigma.push(1.0 - l * inv_var);
    }
    (total, d_task, d_log_sigma)
}

/// `dL/dsigma_t = -L_t / sigma_t^3 + 1 / sigma_t`.
pub fn mtl_sigma_gradient(task_losses: &[f64], sigmas: &[f64]) -> Vec<f64> {
    task_losses
        .iter()
        .zip(sigmas)
        .map(|(l, s)| -l / s.powi(3) + 1.0 / s)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{array, Array1};

    #[test]
    fn biaffine_simple_cases() {
        let e = Array1::from(vec![0.0, 1.0, 0.0]);
        let eye = Array2::<f64>::eye(3);
        let w0 = Array1::zeros(6);
        assert_eq!(biaffine(e.view(), e.view(), eye.view(), w0.view(), 0.0).unwrap(), 1.0);
        let u0 = Array2::zeros((3, 3));
        let x = array![0.3, -2.0, 5.0];
        assert_eq!(biaffine(x.view(), e.view(), u0.view(), w0.view(), 3.5).unwrap(), 3.5);
        assert!(biaffine(x.view(), array![1.0].view(), u0.view(), w0.view(), 0.0).is_err());
    }

    #[test]
    fn hinge_tie_case() {
        let g = array![[0.0, 0.0], [0.0, 0.0]];
        assert_eq!(link_loss(g.view(), &[0, 0], 1.0), 1.0);
    }

    #[test]
    fn hinge_inactive_when_gold_leads_by_margin() {
        let g = array![[3.0, 1.0, 0.5], [0.0, 2.0, 0.9], [-1.0, 0.0, 1.0]];
        let (l, grad) = link_loss_with_grad(g.view(), &[0, 1, 2], 1.0);
        assert_eq!(l, 0.0);
        assert!(grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hinge_grad_uses_lowest_index_on_ties() {
        let g = array![[0.0, 2.0, 2.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let (_, grad) = link_loss_with_grad(g.view(), &[0, 0, 0], 1.0);
        assert_eq!(grad[[0, 1]], 1.0 / 3.0);
        assert_eq!(grad[[0, 2]], 0.0);
    }

    #[test]
    fn cross_entropy_limits() {
        let uniform = Array2::zeros((3, 4));
        let (l, _) = cross_entropy_with_grad(uniform.view(), &[0, 1, 3]);
        assert_relative_eq!(l, 4f64.ln(), epsilon = 1e-15);
        let sharp = array![[60.0, 0.0, 0.0, 0.0]];
        assert!(cross_entropy_with_grad(sharp.view(), &[0]).0 < 1e-20);
    }

    #[test]
    fn mtl_closed_forms() {
        assert_eq!(mtl_loss(&[1.0, 3.0], &[1.0, 1.0]).unwrap(), 2.0);
        let e = std::f64::consts::E;
        assert_relative_eq!(mtl_loss(&[2.0], &[e]).unwrap(), 2.0 / (2.0 * e * e) + 1.0);
        assert!(mtl_loss(&[1.0], &[0.0]).is_err());
        assert!(mtl_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn log_sigma_form_agrees() {
        let losses = [0.7, 2.5, 0.1];
        let logs = [0.2, -0.4, 1.1];
        let sig: Vec<f64> = logs.iter().map(|s: &f64| s.exp()).collect();
        let (l, _, dls) = mtl_loss_log_sigma(&losses, &logs);
        assert_relative_eq!(l, mtl_loss(&losses, &sig).unwrap(), epsilon = 1e-12);
        // chain rule: dL/dlog s = s * dL/ds
        let ds = mtl_sigma_gradient(&losses, &sig);
        for k in 0..3 {
            assert_relative_eq!(dls[k], sig[k] * ds[k], epsilon = 1e-12);
        }
    }
}
