//! Distillation objectives: temperature KD, latent relational losses over
//! Euclidean / cosine / hyperbolic geometry, and the beam-steering output
//! relation.

mod beamspace;
mod hyperbolic;
mod kd;
mod relation;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use beamspace::{
    beam_similarity_backward, beam_similarity_matrix, output_relational_from_logits,
    output_relational_loss, BeamSpace, OutputMode, STEERING_EPS,
};
pub use hyperbolic::{exp_map, hyperbolic_distance, mobius_add, BALL_MARGIN};
pub use kd::{kd_kl_batch, kd_kl_loss, kd_kl_loss_literal, KlOutput};
pub use relation::{
    latent_relational_loss, pairwise_cosine, pairwise_euclidean, pairwise_hyperbolic, relation,
    relation_distance, LatentOutput, Manifold, Relation, RelationDistance, COSINE_EPS,
};

use crate::error::{Error, Result};
use crate::nn::{focal_loss_batch, Dense, Features};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub alpha: f64,
    pub temperature: f64,
    pub curvature: f64,
    pub distance: RelationDistance,
    pub huber_delta: f64,
    pub manifolds: Vec<Manifold>,
    pub normalize_euclidean: bool,
    /// Divide features by their batch-mean norm before the exponential map.
    pub normalize_hyperbolic: bool,
    pub output_mode: OutputMode,
    /// Latent relational term of the relational objective.
    pub latent: bool,
    /// Beam-steering output term of the relational objective.
    pub output: bool,
    /// How the n×n relational sums are scaled against the per-sample losses.
    pub pair_reduction: PairReduction,
}

/// Scaling of the pairwise relational sums within a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairReduction {
    /// The plain sum over all n² pairs.
    Sum,
    /// The pair sum divided by n: each sample contributes the mean over its
    /// partners, which matches the batch-summed focal and KL terms.
    PerAnchor,
}

impl PairReduction {
    pub fn factor(self, n: usize) -> f64 {
        match self {
            PairReduction::Sum => 1.0,
            PairReduction::PerAnchor => 1.0 / n.max(1) as f64,
        }
    }
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            alpha: 0.5,
            temperature: 2.0,
            curvature: 1.0,
            distance: RelationDistance::Huber,
            huber_delta: 1.0,
            manifolds: vec![Manifold::Euclidean, Manifold::Cosine, Manifold::Hyperbolic],
            normalize_euclidean: true,
            normalize_hyperbolic: true,
            output_mode: OutputMode::SoftExpected,
            latent: true,
            output: true,
            pair_reduction: PairReduction::PerAnchor,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("distill: {m}")));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad("temperature must be positive".into());
        }
        if !(self.curvature.is_finite() && self.curvature > 0.0) {
            return bad("curvature must be positive".into());
        }
        if !(self.huber_delta.is_finite() && self.huber_delta > 0.0) {
            return bad("huber_delta must be positive".into());
        }
        if !self.latent && !self.output {
            return bad("at least one relational loss must be enabled".into());
        }
        if self.latent && self.manifolds.is_empty() {
            return bad("latent loss enabled with no manifolds".into());
        }
        let mut seen = self.manifolds.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.manifolds.len() {
            return bad("manifolds listed twice".into());
        }
        Ok(())
    }
}

/// `(1−α)·focal + α·(kl_mid + kl_end)`.
pub fn kd_total_loss(focal: f64, kl_mid: f64, kl_end: f64, alpha: f64) -> f64 {
    (1.0 - alpha) * focal + alpha * (kl_mid + kl_end)
}

/// `(1−α)·focal + α·(latent + output)`.
pub fn rkd_total_loss(focal: f64, latent_rel: f64, output_rel: f64, alpha: f64) -> f64 {
    (1.0 - alpha) * focal + alpha * (latent_rel + output_rel)
}

/// Which training signal a student receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Focal loss only.
    Supervised,
    /// Focal loss plus KL on mid features and logits.
    Kd,
    /// Focal loss plus the relational terms enabled here.
    Rkd { latent: bool, output: bool },
}

/// Frozen teacher outputs for one batch.
#[derive(Debug, Clone, Copy)]
pub struct TeacherBatch<'a> {
    pub mid: ArrayView2<'a, f64>,
    pub logits: ArrayView2<'a, f64>,
    /// Teacher's predicted beam per sample.
    pub beams: &'a [usize],
}

/// Loss components of one batch (summed over the batch; relational terms
/// after the pair reduction).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Components {
    pub total: f64,
    pub focal: f64,
    pub kl_mid: f64,
    pub kl_end: f64,
    pub latent_rel: f64,
    pub output_rel: f64,
}

/// Gradients of one batch objective.
#[derive(Debug, Clone)]
pub struct BatchGrads {
    pub components: Components,
    pub d_logits: Array2<f64>,
    pub d_mid: Option<Array2<f64>>,
    /// Gradient of the teacher-side projection head (KD only).
    pub d_projection: Option<Dense>,
    pub clamped_rows: usize,
    pub focal_clamps: usize,
}

/// Evaluates the objective on a student batch and returns the gradients at
/// the student's logits and mid features.
#[allow(clippy::too_many_arguments)]
pub fn batch_objective(
    objective: Objective,
    student: &Features,
    labels: &[usize],
    gamma: f64,
    teacher: Option<TeacherBatch>,
    projection: Option<&Dense>,
    space: Option<&BeamSpace>,
    config: &DistillConfig,
) -> Result<BatchGrads> {
    let (focal, d_focal, focal_clamps) = focal_loss_batch(student.logits.view(), labels, gamma);
    let mut c = Components {
        focal,
        ..Components::default()
    };
    if objective == Objective::Supervised {
        c.total = focal;
        return Ok(BatchGrads {
            components: c,
            d_logits: d_focal,
            d_mid: None,
            d_projection: None,
            clamped_rows: 0,
            focal_clamps,
        });
    }
    let teacher =
        teacher.ok_or_else(|| Error::Invalid("distillation needs teacher outputs".into()))?;
    let alpha = config.alpha;
    let mut d_logits = d_focal * (1.0 - alpha);
    let mut d_mid = Array2::zeros(student.mid.raw_dim());
    let mut d_projection = None;
    let mut clamped_rows = 0;
    match objective {
        Objective::Supervised => unreachable!(),
        Objective::Kd => {
            let proj =
                projection.ok_or_else(|| Error::Invalid("KD needs a projection head".into()))?;
            let projected = proj.forward(teacher.mid);
            let (kl_mid, gs_mid, gt_mid) =
                kd_kl_batch(projected.view(), student.mid.view(), config.temperature)?;
            let (kl_end, gs_end, _) =
                kd_kl_batch(teacher.logits, student.logits.view(), config.temperature)?;
            c.kl_mid = kl_mid;
            c.kl_end = kl_end;
            c.total = kd_total_loss(focal, kl_mid, kl_end, alpha);
            d_mid.scaled_add(alpha, &gs_mid);
            d_logits.scaled_add(alpha, &gs_end);
            let (mut gp, _) = proj.backward(teacher.mid, &gt_mid);
            gp.weight *= alpha;
            gp.bias *= alpha;
            d_projection = Some(gp);
        }
        Objective::Rkd { latent, output } => {
            let scale = config.pair_reduction.factor(labels.len());
            if latent {
                let out = latent_relational_loss(teacher.mid, student.mid.view(), config)?;
                c.latent_rel = scale * out.loss;
                clamped_rows = out.clamped_rows;
                d_mid.scaled_add(alpha * scale, &out.grad);
            }
            if output {
                let space = space
                    .ok_or_else(|| Error::Invalid("output relation needs the codebook".into()))?;
                let (loss, gz) = output_relational_from_logits(
                    teacher.beams,
                    student.logits.view(),
                    space,
                    config.output_mode,
                )?;
                c.output_rel = scale * loss;
                d_logits.scaled_add(alpha * scale, &gz);
            }
            c.total = rkd_total_loss(focal, c.latent_rel, c.output_rel, alpha);
        }
    }
    Ok(BatchGrads {
        components: c,
        d_logits,
        d_mid: Some(d_mid),
        d_projection,
        clamped_rows,
        focal_clamps,
    })
}
