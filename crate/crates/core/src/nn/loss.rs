use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Probability floor used when the labelled class underflows.
pub const FOCAL_EPS: f64 = 1e-12;

/// Max-shifted softmax of one logit vector.
pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut p = logits.mapv(|v| (v - max).exp());
    let sum = p.sum();
    p /= sum;
    p
}

/// Row-wise softmax.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(logits.raw_dim());
    for (mut o, l) in out.rows_mut().into_iter().zip(logits.rows()) {
        o.assign(&softmax(l));
    }
    out
}

/// Focal loss of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FocalOutput {
    pub loss: f64,
    /// Gradient with respect to the logits that produced `p`.
    pub grad: Array1<f64>,
    /// `p[label]` was below [`FOCAL_EPS`] and got clamped.
    pub clamped: bool,
}

/// `−(1 − p_y)^γ · ln p_y` and its gradient through the softmax.
pub fn focal_loss(p: ArrayView1<f64>, label: usize, gamma: f64) -> FocalOutput {
    let raw = p[label];
    let clamped = raw < FOCAL_EPS;
    let py = raw.max(FOCAL_EPS);
    let q = 1.0 - py;
    let ln_py = py.ln();
    let loss = -q.powf(gamma) * ln_py;
    // dL/dp_y; the first term vanishes when γ = 0 or q = 0.
    let mut dl_dpy = -q.powf(gamma) / py;
    if gamma != 0.0 && q > 0.0 {
        dl_dpy += gamma * q.powf(gamma - 1.0) * ln_py;
    }
    // dp_y/dz_j = p_y (δ_yj − p_j)
    let scale = dl_dpy * py;
    let mut grad = p.mapv(|pj| -scale * pj);
    grad[label] += scale;
    FocalOutput {
        loss,
        grad,
        clamped,
    }
}

/// Summed focal loss over a batch of logits, with the logit gradient.
/// Returns `(loss, grad, clamp_count)`.
pub fn focal_loss_batch(
    logits: ArrayView2<f64>,
    labels: &[usize],
    gamma: f64,
) -> (f64, Array2<f64>, usize) {
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    let mut clamps = 0;
    for ((row, mut g), &y) in logits.rows().into_iter().zip(grad.rows_mut()).zip(labels) {
        let out = focal_loss(softmax(row).view(), y, gamma);
        loss += out.loss;
        clamps += out.clamped as usize;
        g.assign(&out.grad);
    }
    (loss, grad, clamps)
}
