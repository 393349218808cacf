use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use super::mlp::Dense;
use super::model::BeamNet;
use super::sgd::{sgd_step, TrainConfig};
use crate::distill::{
    batch_objective, BeamSpace, Components, DistillConfig, Objective, TeacherBatch,
};
use crate::error::{Error, Result};
use crate::metrics::{argmax, evaluate};
use crate::seed;

const STREAM_SHUFFLE: u64 = 1;
const STREAM_PROJECTION: u64 = 2;

/// Training inputs and labels.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub inputs: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
}

/// Validation inputs with full RSS vectors for MPR.
#[derive(Debug, Clone, Copy)]
pub struct ValData<'a> {
    pub inputs: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
    pub rss: &'a [Vec<f32>],
}

/// Frozen teacher outputs for every training sample, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherTargets {
    pub mid: Array2<f64>,
    pub logits: Array2<f64>,
    pub beams: Vec<usize>,
}

impl TeacherTargets {
    pub fn compute<M: BeamNet>(teacher: &M, inputs: ArrayView2<f64>) -> Result<Self> {
        let f = teacher.forward(inputs)?;
        let beams = f
            .logits
            .rows()
            .into_iter()
            .map(|r| argmax(&r.to_vec()))
            .collect();
        Ok(TeacherTargets {
            mid: f.mid,
            logits: f.logits,
            beams,
        })
    }
}

/// What a training run optimizes beyond the focal loss.
#[derive(Debug, Clone, Copy)]
pub struct Guidance<'a> {
    pub objective: Objective,
    pub teacher: Option<&'a TeacherTargets>,
    pub space: Option<&'a BeamSpace>,
    pub distill: &'a DistillConfig,
}

impl<'a> Guidance<'a> {
    pub fn supervised(distill: &'a DistillConfig) -> Self {
        Guidance {
            objective: Objective::Supervised,
            teacher: None,
            space: None,
            distill,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean total loss per training sample.
    pub train_loss: f64,
    pub val_mpr: Option<f64>,
    /// Per-sample means of each component.
    pub components: Components,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub size: usize,
    pub components: Components,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub batches: Vec<BatchRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub hyperbolic_clamps: usize,
    pub focal_clamps: usize,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl History {
    /// Per-epoch CSV.
    pub fn epochs_csv(&self) -> String {
        let mut s =
            String::from("epoch,lr,train_loss,val_mpr,focal,kl_mid,kl_end,latent_rel,output_rel\n");
        for e in &self.epochs {
            let c = &e.components;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                e.epoch,
                e.lr,
                e.train_loss,
                fmt_opt(e.val_mpr),
                c.focal,
                c.kl_mid,
                c.kl_end,
                c.latent_rel,
                c.output_rel
            );
        }
        s
    }

    /// Per-batch CSV of summed loss components.
    pub fn batches_csv(&self) -> String {
        let mut s =
            String::from("epoch,batch,size,total,focal,kl_mid,kl_end,latent_rel,output_rel\n");
        for b in &self.batches {
            let c = &b.components;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                b.epoch,
                b.batch,
                b.size,
                c.total,
                c.focal,
                c.kl_mid,
                c.kl_end,
                c.latent_rel,
                c.output_rel
            );
        }
        s
    }

    pub fn write_csv(&self, dir: &Path, stem: &str) -> Result<()> {
        for (name, body) in [
            (format!("{stem}_history.csv"), self.epochs_csv()),
            (format!("{stem}_batches.csv"), self.batches_csv()),
        ] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

fn accumulate(into: &mut Components, c: &Components) {
    into.total += c.total;
    into.focal += c.focal;
    into.kl_mid += c.kl_mid;
    into.kl_end += c.kl_end;
    into.latent_rel += c.latent_rel;
    into.output_rel += c.output_rel;
}

fn scale(c: &Components, s: f64) -> Components {
    Components {
        total: c.total * s,
        focal: c.focal * s,
        kl_mid: c.kl_mid * s,
        kl_end: c.kl_end * s,
        latent_rel: c.latent_rel * s,
        output_rel: c.output_rel * s,
    }
}

fn projection_for<M: BeamNet>(
    model: &M,
    teacher: Option<&TeacherTargets>,
    seed: u64,
) -> Option<Dense> {
    let t = teacher?;
    let (tin, sout) = (t.mid.ncols(), model.mid_dim());
    Some(if tin == sout {
        Dense::identity(tin)
    } else {
        Dense::he(tin, sout, &mut seed::rng(seed, &[STREAM_PROJECTION]))
    })
}

/// Mini-batch SGD with per-epoch seeded shuffling. Returns the parameters of
/// the epoch with the best validation MPR (earliest on ties), or the final
/// parameters when no validation set is given.
pub fn train<M: BeamNet>(
    mut model: M,
    data: TrainData,
    val: Option<ValData>,
    config: &TrainConfig,
    guidance: &Guidance,
) -> Result<(M, History)> {
    config.validate()?;
    let n = data.inputs.nrows();
    if n == 0 {
        return Err(Error::Invalid("empty training set".into()));
    }
    if data.labels.len() != n {
        return Err(Error::shape(format!("{n} labels"), data.labels.len()));
    }
    if let Some(t) = guidance.teacher {
        if t.mid.nrows() != n || t.logits.nrows() != n || t.beams.len() != n {
            return Err(Error::shape(
                format!("teacher targets for {n} samples"),
                t.mid.nrows(),
            ));
        }
    }
    let mut projection = match guidance.objective {
        Objective::Kd => projection_for(&model, guidance.teacher, config.seed),
        _ => None,
    };
    let mut history = History::default();
    let mut best: Option<(f64, M)> = None;
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..config.epochs {
        let lr = config.learning_rate(epoch);
        order.sort_unstable();
        order.shuffle(&mut seed::rng(config.seed, &[STREAM_SHUFFLE, epoch as u64]));
        let mut sums = Components::default();
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let x = data.inputs.select(Axis(0), idx);
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let (pass, features) = model.forward_pass(x.view())?;
            let teacher_rows = guidance.teacher.map(|t| {
                (
                    t.mid.select(Axis(0), idx),
                    t.logits.select(Axis(0), idx),
                    idx.iter().map(|&i| t.beams[i]).collect::<Vec<_>>(),
                )
            });
            let teacher_batch = teacher_rows.as_ref().map(|(m, l, bm)| TeacherBatch {
                mid: m.view(),
                logits: l.view(),
                beams: bm,
            });
            let g = batch_objective(
                guidance.objective,
                &features,
                &labels,
                config.focal_gamma,
                teacher_batch,
                projection.as_ref(),
                guidance.space,
                guidance.distill,
            )?;
            if !g.components.total.is_finite() {
                return Err(Error::NonFiniteGradient(format!(
                    "loss at epoch {epoch}, batch {b}"
                )));
            }
            let grads = model.backward(&pass, &g.d_logits, g.d_mid.as_ref());
            sgd_step(&mut model, &grads, epoch, config)?;
            if let (Some(p), Some(gp)) = (projection.as_mut(), g.d_projection.as_ref()) {
                if !gp.is_finite() {
                    return Err(Error::NonFiniteGradient(format!(
                        "projection at epoch {epoch}"
                    )));
                }
                p.axpy(-lr, gp);
            }
            history.hyperbolic_clamps += g.clamped_rows;
            history.focal_clamps += g.focal_clamps;
            accumulate(&mut sums, &g.components);
            history.batches.push(BatchRecord {
                epoch,
                batch: b,
                size: idx.len(),
                components: g.components,
            });
        }
        let val_mpr = match val {
            Some(v) => Some(evaluate(&model, v.inputs, v.labels, v.rss)?.mpr_percent),
            None => None,
        };
        if let Some(m) = val_mpr {
            if best.as_ref().is_none_or(|(b, _)| m > *b) {
                best = Some((m, model.clone()));
                history.best_epoch = epoch;
            }
        } else {
            history.best_epoch = epoch;
        }
        let mean = scale(&sums, 1.0 / n as f64);
        history.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss: mean.total,
            val_mpr,
            components: mean,
        });
    }
    Ok((best.map(|(_, m)| m).unwrap_or(model), history))
}
