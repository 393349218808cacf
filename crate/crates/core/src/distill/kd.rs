//! Temperature-softened KL distillation.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

fn log_softmax(z: ArrayView1<f64>, t: f64) -> Array1<f64> {
    let scaled = z.mapv(|v| v / t);
    let max = scaled.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + scaled.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    scaled.mapv(|v| v - lse)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlOutput {
    pub loss: f64,
    /// Gradient with respect to the student features.
    pub grad_student: Array1<f64>,
    /// Gradient with respect to the teacher features (used to train the
    /// projection head on the teacher side).
    pub grad_teacher: Array1<f64>,
}

/// `T²·KL(σ(teacher/T) ‖ σ(student/T))`.
pub fn kd_kl_loss(teacher: ArrayView1<f64>, student: ArrayView1<f64>, t: f64) -> Result<KlOutput> {
    if teacher.len() != student.len() {
        return Err(Error::shape(teacher.len(), student.len()));
    }
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Invalid(format!(
            "temperature must be positive, got {t}"
        )));
    }
    let lp = log_softmax(teacher, t);
    let lq = log_softmax(student, t);
    let p = lp.mapv(f64::exp);
    let q = lq.mapv(f64::exp);
    let ell = &lp - &lq;
    // Terms with p = 0 contribute nothing.
    let kl: f64 = p
        .iter()
        .zip(&ell)
        .map(|(pk, lk)| if *pk > 0.0 { pk * lk } else { 0.0 })
        .sum();
    let grad_student = (&q - &p) * t;
    let grad_teacher = Array1::from_iter(p.iter().zip(&ell).map(|(pk, lk)| t * pk * (lk - kl)));
    Ok(KlOutput {
        loss: t * t * kl.max(0.0),
        grad_student,
        grad_teacher,
    })
}

/// Row-wise [`kd_kl_loss`] summed over a batch.
pub fn kd_kl_batch(
    teacher: ArrayView2<f64>,
    student: ArrayView2<f64>,
    t: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    if teacher.dim() != student.dim() {
        return Err(Error::shape(
            format!("{:?}", teacher.dim()),
            format!("{:?}", student.dim()),
        ));
    }
    let mut gs = Array2::zeros(student.raw_dim());
    let mut gt = Array2::zeros(teacher.raw_dim());
    let mut loss = 0.0;
    for (k, (tr, sr)) in teacher.rows().into_iter().zip(student.rows()).enumerate() {
        let out = kd_kl_loss(tr, sr, t)?;
        loss += out.loss;
        gs.row_mut(k).assign(&out.grad_student);
        gt.row_mut(k).assign(&out.grad_teacher);
    }
    Ok((loss, gs, gt))
}

/// The KL term exactly as printed in the source derivation: leading minus
/// sign and no temperature inside the softmax. Minimizing it pushes the
/// distributions apart, so it exists for comparison only and is never used
/// for training.
pub fn kd_kl_loss_literal(
    teacher: ArrayView1<f64>,
    student: ArrayView1<f64>,
    t: f64,
) -> Result<f64> {
    if teacher.len() != student.len() {
        return Err(Error::shape(teacher.len(), student.len()));
    }
    let lp = log_softmax(teacher, 1.0);
    let lq = log_softmax(student, 1.0);
    Ok(-t
        * t
        * lp.iter()
            .zip(&lq)
            .map(|(a, b)| a.exp() * (a - b))
            .sum::<f64>())
}
