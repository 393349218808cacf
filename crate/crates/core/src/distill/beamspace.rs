//! Beam-steering relations: similarities between the steering weights a
//! batch of predictions points at.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::beams::{beam_similarity, Codebook};
use crate::error::{Error, Result};
use crate::metrics::argmax;
use crate::nn::softmax_rows;

/// Norm below which an expected steering vector counts as zero.
pub const STEERING_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputMode {
    /// Softmax-weighted mean of the codebook weights, fully differentiable.
    SoftExpected,
    /// Hard argmax beam in the forward pass, soft-expected gradient backward.
    StraightThrough,
}

/// Codebook weights split into real and imaginary parts plus the hard
/// beam-to-beam similarity table.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamSpace {
    /// `B × N` real parts of the unit-norm weights.
    pub re: Array2<f64>,
    /// `B × N` imaginary parts.
    pub im: Array2<f64>,
    /// `B × B` hard similarities `|w_a^H w_b|`.
    pub similarity: Array2<f64>,
}

impl BeamSpace {
    pub fn new(codebook: &Codebook) -> Result<Self> {
        let b = codebook.len();
        if b == 0 {
            return Err(Error::Invalid("empty codebook".into()));
        }
        let n = codebook.patterns[0].weights.len();
        let mut re = Array2::zeros((b, n));
        let mut im = Array2::zeros((b, n));
        for (k, p) in codebook.patterns.iter().enumerate() {
            for (e, w) in p.weights.iter().enumerate() {
                re[[k, e]] = w.re;
                im[[k, e]] = w.im;
            }
        }
        let mut similarity = Array2::eye(b);
        for i in 0..b {
            for j in i + 1..b {
                let s = beam_similarity(&codebook.patterns[i], &codebook.patterns[j])?;
                similarity[[i, j]] = s;
                similarity[[j, i]] = s;
            }
        }
        Ok(BeamSpace { re, im, similarity })
    }

    pub fn beams(&self) -> usize {
        self.re.nrows()
    }

    /// Similarities between hard beam choices.
    pub fn hard_similarity(&self, beams: &[usize]) -> Array2<f64> {
        let n = beams.len();
        Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                1.0
            } else {
                self.similarity[[beams[i], beams[j]]]
            }
        })
    }

    fn check(&self, logits: &ArrayView2<f64>) -> Result<()> {
        if logits.ncols() != self.beams() {
            return Err(Error::shape(
                format!("{} beam logits", self.beams()),
                logits.ncols(),
            ));
        }
        Ok(())
    }
}

struct Expected {
    probs: Array2<f64>,
    re: Array2<f64>,
    im: Array2<f64>,
    norms: Vec<f64>,
}

fn expected(logits: ArrayView2<f64>, space: &BeamSpace) -> Expected {
    let probs = softmax_rows(logits);
    let re = probs.dot(&space.re);
    let im = probs.dot(&space.im);
    let norms = re
        .rows()
        .into_iter()
        .zip(im.rows())
        .map(|(r, i)| (r.dot(&r) + i.dot(&i)).sqrt())
        .collect();
    Expected {
        probs,
        re,
        im,
        norms,
    }
}

/// `Re` and `Im` of `w̄_i^H w̄_j`.
fn inner(e: &Expected, i: usize, j: usize) -> (f64, f64) {
    let (ri, ii, rj, ij) = (e.re.row(i), e.im.row(i), e.re.row(j), e.im.row(j));
    (ri.dot(&rj) + ii.dot(&ij), ri.dot(&ij) - ii.dot(&rj))
}

/// Similarity matrix of a batch of student predictions.
pub fn beam_similarity_matrix(
    logits: ArrayView2<f64>,
    space: &BeamSpace,
    mode: OutputMode,
) -> Result<Array2<f64>> {
    space.check(&logits)?;
    match mode {
        OutputMode::StraightThrough => {
            let beams: Vec<usize> = logits
                .rows()
                .into_iter()
                .map(|r| argmax(&r.to_vec()))
                .collect();
            Ok(space.hard_similarity(&beams))
        }
        OutputMode::SoftExpected => {
            let e = expected(logits, space);
            let n = logits.nrows();
            let mut s = Array2::eye(n);
            for i in 0..n {
                for j in i + 1..n {
                    if e.norms[i] < STEERING_EPS || e.norms[j] < STEERING_EPS {
                        s[[i, j]] = 0.0;
                        s[[j, i]] = 0.0;
                        continue;
                    }
                    let (a, b) = inner(&e, i, j);
                    let v = ((a * a + b * b).sqrt() / (e.norms[i] * e.norms[j])).min(1.0);
                    s[[i, j]] = v;
                    s[[j, i]] = v;
                }
            }
            Ok(s)
        }
    }
}

/// Gradient with respect to the logits of the soft-expected similarity
/// matrix, given `ds = ∂L/∂s`. Diagonal entries are constant.
pub fn beam_similarity_backward(
    logits: ArrayView2<f64>,
    space: &BeamSpace,
    ds: &Array2<f64>,
) -> Result<Array2<f64>> {
    space.check(&logits)?;
    let e = expected(logits, space);
    let (n, dim) = e.re.dim();
    let mut g_re = Array2::<f64>::zeros((n, dim));
    let mut g_im = Array2::<f64>::zeros((n, dim));
    for i in 0..n {
        for j in 0..n {
            let g = ds[[i, j]];
            if i == j || g == 0.0 || e.norms[i] < STEERING_EPS || e.norms[j] < STEERING_EPS {
                continue;
            }
            let (a, b) = inner(&e, i, j);
            let c = (a * a + b * b).sqrt();
            let (ni, nj) = (e.norms[i], e.norms[j]);
            let s = c / (ni * nj);
            if c == 0.0 || s > 1.0 {
                continue;
            }
            let k = 1.0 / (c * ni * nj);
            for d in 0..dim {
                let (ri, ii, rj, ij) = (e.re[[i, d]], e.im[[i, d]], e.re[[j, d]], e.im[[j, d]]);
                g_re[[i, d]] += g * (k * (a * rj + b * ij) - s * ri / (ni * ni));
                g_im[[i, d]] += g * (k * (a * ij - b * rj) - s * ii / (ni * ni));
                g_re[[j, d]] += g * (k * (a * ri - b * ii) - s * rj / (nj * nj));
                g_im[[j, d]] += g * (k * (a * ii + b * ri) - s * ij / (nj * nj));
            }
        }
    }
    // Back through w̄ = p·W and the softmax.
    let gp = g_re.dot(&space.re.t()) + g_im.dot(&space.im.t());
    let mut gz = Array2::zeros(gp.raw_dim());
    for ((mut z, p), g) in gz.rows_mut().into_iter().zip(e.probs.rows()).zip(gp.rows()) {
        let mean = p.dot(&g);
        for ((zk, pk), gk) in z.iter_mut().zip(p).zip(g) {
            *zk = pk * (gk - mean);
        }
    }
    Ok(gz)
}

/// `Σ_ij (s^T_ij − s^S_ij)²` and its gradient with respect to `s^S`.
pub fn output_relational_loss(
    s_t: ArrayView2<f64>,
    s_s: ArrayView2<f64>,
) -> Result<(f64, Array2<f64>)> {
    if s_t.dim() != s_s.dim() || s_t.nrows() != s_t.ncols() {
        return Err(Error::shape(
            format!("{:?}", s_t.dim()),
            format!("{:?}", s_s.dim()),
        ));
    }
    let diff = &s_s - &s_t;
    let loss = diff.iter().map(|d| d * d).sum();
    Ok((loss, diff * 2.0))
}

/// Output relational loss of student logits against the teacher's predicted
/// beams, with the gradient carried back to the logits.
pub fn output_relational_from_logits(
    teacher_beams: &[usize],
    student_logits: ArrayView2<f64>,
    space: &BeamSpace,
    mode: OutputMode,
) -> Result<(f64, Array2<f64>)> {
    if teacher_beams.len() != student_logits.nrows() {
        return Err(Error::shape(
            format!("batch of {}", teacher_beams.len()),
            student_logits.nrows(),
        ));
    }
    let s_t = space.hard_similarity(teacher_beams);
    let s_s = beam_similarity_matrix(student_logits, space, mode)?;
    let (loss, ds) = output_relational_loss(s_t.view(), s_s.view())?;
    let gz = beam_similarity_backward(student_logits, space, &ds)?;
    Ok((loss, gz))
}
