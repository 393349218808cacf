//! Pairwise relation matrices over a batch of feature vectors and the
//! latent relational loss built on them.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::hyperbolic::{
    clamp_backward, clamp_to_ball, clamped_conformal, distance_grad_with, distance_with, exp_map,
    exp_map_backward, exp_map_conformal,
};
use super::DistillConfig;
use crate::error::{Error, Result};

/// Norm below which a row counts as zero in the cosine relation.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Manifold {
    Euclidean,
    Cosine,
    Hyperbolic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelationDistance {
    SquaredError,
    Huber,
}

/// A relation matrix with bookkeeping about guarded numerics.
#[derive(Debug, Clone, PartialEq)]
pub struct Relation {
    pub matrix: Array2<f64>,
    /// Rows pulled back inside the Poincaré ball (hyperbolic only).
    pub clamped_rows: usize,
    /// Zero-norm rows that were ε-guarded (cosine only).
    pub guarded_rows: usize,
}

fn require_batch(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Invalid(format!(
            "relations need at least 2 rows, got {n}"
        )));
    }
    Ok(())
}

fn row(x: &ArrayView2<f64>, i: usize) -> Vec<f64> {
    x.row(i).to_vec()
}

fn raw_distances(x: ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut r = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let d = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            r[[i, j]] = d;
            r[[j, i]] = d;
        }
    }
    r
}

fn off_diagonal_mean(r: &Array2<f64>) -> f64 {
    let n = r.nrows();
    r.sum() / (n * (n - 1)) as f64
}

/// `‖t_i − t_j‖`, optionally divided by the mean off-diagonal distance (the
/// division is skipped when that mean is zero).
pub fn pairwise_euclidean(x: ArrayView2<f64>, normalize: bool) -> Result<Array2<f64>> {
    require_batch(x.nrows())?;
    let mut r = raw_distances(x);
    if normalize {
        let mu = off_diagonal_mean(&r);
        if mu > 0.0 {
            r /= mu;
        }
    }
    Ok(r)
}

fn row_norms(x: ArrayView2<f64>) -> Vec<f64> {
    x.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect()
}

/// `⟨t_i,t_j⟩/(‖t_i‖‖t_j‖)` with unit diagonal; zero rows are ε-guarded.
pub fn pairwise_cosine(x: ArrayView2<f64>) -> Result<Relation> {
    let n = x.nrows();
    require_batch(n)?;
    let norms = row_norms(x);
    let guarded_rows = norms.iter().filter(|&&v| v < COSINE_EPS).count();
    let mut r = Array2::eye(n);
    for i in 0..n {
        for j in i + 1..n {
            let v = x.row(i).dot(&x.row(j)) / (norms[i].max(COSINE_EPS) * norms[j].max(COSINE_EPS));
            let v = v.clamp(-1.0, 1.0);
            r[[i, j]] = v;
            r[[j, i]] = v;
        }
    }
    Ok(Relation {
        matrix: r,
        guarded_rows,
        clamped_rows: 0,
    })
}

struct BallPoints {
    points: Vec<Vec<f64>>,
    /// `1 − c‖y‖²` of each point, computed without cancellation.
    conformal: Vec<f64>,
    /// Pre-clamp value for rows that were clamped.
    raw: Vec<Option<Vec<f64>>>,
}

fn to_ball(x: ArrayView2<f64>, c: f64) -> Result<BallPoints> {
    let mut points = Vec::with_capacity(x.nrows());
    let mut conformal = Vec::with_capacity(x.nrows());
    let mut raw = Vec::with_capacity(x.nrows());
    for i in 0..x.nrows() {
        let xi = row(&x, i);
        let y = exp_map(&xi, c)?;
        let mut clamped = y.clone();
        if clamp_to_ball(&mut clamped, c) {
            raw.push(Some(y));
            conformal.push(clamped_conformal());
        } else {
            raw.push(None);
            conformal.push(exp_map_conformal(&xi, c));
        }
        points.push(clamped);
    }
    Ok(BallPoints {
        points,
        conformal,
        raw,
    })
}

/// Geodesic distances between the exponential-map images of the rows.
pub fn pairwise_hyperbolic(x: ArrayView2<f64>, c: f64) -> Result<Relation> {
    let n = x.nrows();
    require_batch(n)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite feature".into()));
    }
    let ball = to_ball(x, c)?;
    let mut r = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let d = distance_with(
                &ball.points[i],
                &ball.points[j],
                ball.conformal[i],
                ball.conformal[j],
                c,
            );
            r[[i, j]] = d;
            r[[j, i]] = d;
        }
    }
    Ok(Relation {
        matrix: r,
        clamped_rows: ball.raw.iter().filter(|r| r.is_some()).count(),
        guarded_rows: 0,
    })
}

fn mean_row_norm(x: ArrayView2<f64>) -> f64 {
    row_norms(x).iter().sum::<f64>() / x.nrows() as f64
}

/// Rows divided by their batch-mean norm, with the mean used (`None` when the
/// mean is zero and the rows are left as they are).
pub fn scale_to_unit_mean_norm(x: ArrayView2<f64>) -> (Array2<f64>, Option<f64>) {
    let m = mean_row_norm(x);
    if m > 0.0 && m.is_finite() {
        (x.mapv(|v| v / m), Some(m))
    } else {
        (x.to_owned(), None)
    }
}

/// Chains `g = ∂L/∂x'` through `x' = x / mean_k ‖x_k‖`.
fn scale_backward(x: ArrayView2<f64>, m: f64, g: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows() as f64;
    let through_mean = (g * &x).sum() / (m * m * n);
    let norms = row_norms(x);
    let mut out = g / m;
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        if norms[i] > 0.0 {
            let k = through_mean / norms[i];
            row.iter_mut()
                .zip(x.row(i))
                .for_each(|(o, xi)| *o -= k * xi);
        }
    }
    out
}

/// Relation of the chosen kind, as used by the latent loss.
pub fn relation(
    x: ArrayView2<f64>,
    manifold: Manifold,
    config: &DistillConfig,
) -> Result<Relation> {
    match manifold {
        Manifold::Euclidean => Ok(Relation {
            matrix: pairwise_euclidean(x, config.normalize_euclidean)?,
            clamped_rows: 0,
            guarded_rows: 0,
        }),
        Manifold::Cosine => pairwise_cosine(x),
        Manifold::Hyperbolic if config.normalize_hyperbolic => {
            pairwise_hyperbolic(scale_to_unit_mean_norm(x).0.view(), config.curvature)
        }
        Manifold::Hyperbolic => pairwise_hyperbolic(x, config.curvature),
    }
}

/// `d(teacher, student)` and its derivative in the student argument.
pub fn relation_distance(
    kind: RelationDistance,
    delta: f64,
    teacher: f64,
    student: f64,
) -> (f64, f64) {
    let e = student - teacher;
    match kind {
        RelationDistance::SquaredError => (e * e, 2.0 * e),
        RelationDistance::Huber => {
            if e.abs() <= delta {
                (0.5 * e * e, e)
            } else {
                (delta * (e.abs() - 0.5 * delta), delta * e.signum())
            }
        }
    }
}

/// Gradient of a relation with respect to the features, given `g = ∂L/∂r`.
fn relation_backward(
    x: ArrayView2<f64>,
    manifold: Manifold,
    config: &DistillConfig,
    g: &Array2<f64>,
) -> Result<Array2<f64>> {
    let n = x.nrows();
    let mut grad = Array2::zeros(x.raw_dim());
    match manifold {
        Manifold::Euclidean => {
            let r = raw_distances(x);
            let mu = off_diagonal_mean(&r);
            // ∂L/∂r_raw, including the path through the mean.
            let gr = if config.normalize_euclidean && mu > 0.0 {
                let through_mean = (g * &r).sum() / (mu * mu) / (n * (n - 1)) as f64;
                g.mapv(|v| v / mu - through_mean)
            } else {
                g.clone()
            };
            for i in 0..n {
                for j in 0..n {
                    if i == j || r[[i, j]] == 0.0 {
                        continue;
                    }
                    let k = gr[[i, j]] / r[[i, j]];
                    for d in 0..x.ncols() {
                        let diff = k * (x[[i, d]] - x[[j, d]]);
                        grad[[i, d]] += diff;
                        grad[[j, d]] -= diff;
                    }
                }
            }
        }
        Manifold::Cosine => {
            let norms: Vec<f64> = row_norms(x).iter().map(|v| v.max(COSINE_EPS)).collect();
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let dot = x.row(i).dot(&x.row(j));
                    let rij = dot / (norms[i] * norms[j]);
                    if !(-1.0..=1.0).contains(&rij) {
                        // Clamped value: flat.
                        continue;
                    }
                    let gij = g[[i, j]];
                    let (ni, nj) = (norms[i], norms[j]);
                    for d in 0..x.ncols() {
                        grad[[i, d]] += gij * (x[[j, d]] / (ni * nj) - rij * x[[i, d]] / (ni * ni));
                        grad[[j, d]] += gij * (x[[i, d]] / (ni * nj) - rij * x[[j, d]] / (nj * nj));
                    }
                }
            }
        }
        Manifold::Hyperbolic => {
            let c = config.curvature;
            grad = match scale_to_unit_mean_norm(x) {
                (scaled, Some(m)) if config.normalize_hyperbolic => {
                    scale_backward(x, m, &hyperbolic_backward(scaled.view(), c, g)?)
                }
                _ => hyperbolic_backward(x, c, g)?,
            };
        }
    }
    Ok(grad)
}

fn hyperbolic_backward(x: ArrayView2<f64>, c: f64, g: &Array2<f64>) -> Result<Array2<f64>> {
    let n = x.nrows();
    let mut grad = Array2::zeros(x.raw_dim());
    let ball = to_ball(x, c)?;
    let dim = x.ncols();
    let mut gy = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j || g[[i, j]] == 0.0 {
                continue;
            }
            let (gi, gj) = distance_grad_with(
                &ball.points[i],
                &ball.points[j],
                ball.conformal[i],
                ball.conformal[j],
                c,
            );
            for d in 0..dim {
                gy[i][d] += g[[i, j]] * gi[d];
                gy[j][d] += g[[i, j]] * gj[d];
            }
        }
    }
    for (i, gyi) in gy.iter_mut().enumerate() {
        let g_exp = match &ball.raw[i] {
            Some(raw) => clamp_backward(raw, c, gyi),
            None => std::mem::take(gyi),
        };
        let gx = exp_map_backward(&row(&x, i), c, &g_exp);
        grad.row_mut(i).iter_mut().zip(gx).for_each(|(a, b)| *a = b);
    }
    Ok(grad)
}

/// Result of the latent relational loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentOutput {
    pub loss: f64,
    /// Gradient with respect to the student features.
    pub grad: Array2<f64>,
    /// Loss contribution of each enabled manifold.
    pub per_manifold: Vec<(Manifold, f64)>,
    pub clamped_rows: usize,
    pub guarded_rows: usize,
}

/// `Σ_manifolds Σ_ij d(r^T_ij, r^S_ij)` with the teacher relations held fixed.
/// Teacher and student feature widths may differ.
pub fn latent_relational_loss(
    teacher: ArrayView2<f64>,
    student: ArrayView2<f64>,
    config: &DistillConfig,
) -> Result<LatentOutput> {
    if teacher.nrows() != student.nrows() {
        return Err(Error::shape(
            format!("batch of {}", teacher.nrows()),
            student.nrows(),
        ));
    }
    let n = student.nrows();
    let mut out = LatentOutput {
        loss: 0.0,
        grad: Array2::zeros(student.raw_dim()),
        per_manifold: Vec::new(),
        clamped_rows: 0,
        guarded_rows: 0,
    };
    for &m in &config.manifolds {
        let rt = relation(teacher, m, config)?;
        let rs = relation(student, m, config)?;
        out.clamped_rows += rt.clamped_rows + rs.clamped_rows;
        out.guarded_rows += rt.guarded_rows + rs.guarded_rows;
        let mut g = Array2::zeros((n, n));
        let mut loss = 0.0;
        for i in 0..n {
            for j in 0..n {
                let (l, d) = relation_distance(
                    config.distance,
                    config.huber_delta,
                    rt.matrix[[i, j]],
                    rs.matrix[[i, j]],
                );
                loss += l;
                g[[i, j]] = d;
            }
        }
        out.grad += &relation_backward(student, m, config, &g)?;
        out.loss += loss;
        out.per_manifold.push((m, loss));
    }
    Ok(out)
}
