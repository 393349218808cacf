//! Finite-difference verification of every hand-derived gradient.
//!
//! Each case draws random inputs from a seeded stream, computes the analytic
//! gradient, and compares it with central differences on every coordinate.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::beams::{build_codebook, ArrayGeometry, CodebookSpec, MultiBeamRule};
use crate::distill::{
    batch_objective, kd_kl_batch, latent_relational_loss, output_relational_from_logits, BeamSpace,
    DistillConfig, Manifold, Objective, OutputMode, PairReduction, RelationDistance, TeacherBatch,
};
use crate::error::Result;
use crate::nn::{
    focal_loss_batch, grad_check, BeamNet, Dense, Mlp, MlpSpec, Parameterized, TeacherArch,
    TeacherNet,
};
use crate::seed;

/// Acceptance threshold on the worst relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Central-difference step.
pub const STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub configurations: usize,
    pub max_relative_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= TOLERANCE
    }
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

fn labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

/// Replaces every parameter (biases included) with a random draw so that no
/// ReLU sits exactly at its kink.
fn randomize<M: Parameterized>(model: &mut M, rng: &mut ChaCha8Rng, scale: f64) {
    let p: Vec<f64> = (0..model.param_count())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect();
    model.read_params(&p);
}

fn all_coords(len: usize) -> Vec<usize> {
    (0..len).collect()
}

/// Checks a loss over a flat vector, given its analytic gradient.
fn check_flat<F: FnMut(&[f64]) -> f64>(f: F, point: &[f64], analytic: &[f64]) -> f64 {
    grad_check(f, point, analytic, STEP, &all_coords(point.len()))
}

fn from_flat(v: &[f64], rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), v.to_vec()).expect("flat shape")
}

fn flat(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn small_codebook_space() -> Result<BeamSpace> {
    let spec = CodebookSpec {
        geometry: ArrayGeometry {
            rows: 2,
            cols: 4,
            ..ArrayGeometry::default()
        },
        azimuth_beams: 6,
        elevation_beams: 2,
        multi_beam: vec![MultiBeamRule {
            offsets: vec![[0, 0], [1, 0]],
            wrap_azimuth: true,
        }],
        ..CodebookSpec::default()
    };
    BeamSpace::new(&build_codebook(&spec)?)
}

fn student_net(rng: &mut ChaCha8Rng, input: usize, mid: usize, out: usize) -> Result<Mlp> {
    let mut net = Mlp::new(
        &MlpSpec {
            widths: vec![input, 9, mid, out],
            mid_layer: 1,
            relu_output: false,
        },
        rng,
    )?;
    randomize(&mut net, rng, 0.6);
    Ok(net)
}

/// Loss of a parameter vector for a network, given a closure mapping
/// features to (loss, d_logits, d_mid).
fn check_network<M, F>(net: &M, x: ArrayView2<f64>, mut objective: F) -> Result<f64>
where
    M: BeamNet,
    F: FnMut(&crate::nn::Features) -> Result<(f64, Array2<f64>, Option<Array2<f64>>)>,
{
    let (pass, features) = net.forward_pass(x)?;
    let (_, d_logits, d_mid) = objective(&features)?;
    let analytic = net.backward(&pass, &d_logits, d_mid.as_ref()).params();
    let point = net.params();
    let mut probe = net.clone();
    Ok(check_flat(
        |p| {
            probe.read_params(p);
            let f = probe.forward(x).expect("shapes fixed");
            objective(&f).expect("objective").0
        },
        &point,
        &analytic,
    ))
}

fn run_case<F: FnMut(&mut ChaCha8Rng) -> Result<f64>>(
    name: &str,
    configurations: usize,
    base_seed: u64,
    stream: u64,
    mut case: F,
) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for k in 0..configurations {
        let mut rng = seed::rng(base_seed, &[stream, k as u64]);
        worst = worst.max(case(&mut rng)?);
    }
    Ok(CheckResult {
        name: name.to_string(),
        configurations,
        max_relative_error: worst,
    })
}

fn latent_config(manifolds: &[Manifold], distance: RelationDistance) -> DistillConfig {
    DistillConfig {
        manifolds: manifolds.to_vec(),
        distance,
        ..DistillConfig::default()
    }
}

/// Runs every gradient check over `configurations` seeded random instances.
pub fn gradient_suite(configurations: usize, base_seed: u64) -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();

    results.push(run_case(
        "focal loss (2-layer MLP)",
        configurations,
        base_seed,
        1,
        |rng| {
            let mut net = Mlp::new(
                &MlpSpec {
                    widths: vec![6, 8, 5],
                    mid_layer: 0,
                    relu_output: false,
                },
                rng,
            )?;
            randomize(&mut net, rng, 0.6);
            let x = normal_matrix(rng, 4, 6, 1.0);
            let y = labels(rng, 4, 5);
            check_network(&net, x.view(), |f| {
                let (l, g, _) = focal_loss_batch(f.logits.view(), &y, 2.0);
                Ok((l, g, None))
            })
        },
    )?);

    results.push(run_case(
        "focal loss (teacher)",
        configurations,
        base_seed,
        2,
        |rng| {
            let spec = TeacherArch {
                radar: vec![4],
                bev: vec![3],
                gps: vec![3],
                fusion: vec![6, 5],
                mid_layer: 0,
            }
            .spec([5, 4, 3], 4);
            let mut net = TeacherNet::new(&spec, rng)?;
            randomize(&mut net, rng, 0.6);
            let x = normal_matrix(rng, 3, 12, 1.0);
            let y = labels(rng, 3, 4);
            check_network(&net, x.view(), |f| {
                let (l, g, _) = focal_loss_batch(f.logits.view(), &y, 2.0);
                Ok((l, g, None))
            })
        },
    )?);

    for (name, stream) in [
        ("KL distillation (student side)", 3u64),
        ("KL distillation (teacher side)", 4),
    ] {
        results.push(run_case(name, configurations, base_seed, stream, |rng| {
            let (n, d) = (4, 7);
            let t = normal_matrix(rng, n, d, 2.0);
            let s = normal_matrix(rng, n, d, 2.0);
            let temp = rng.random_range(1.0..4.0);
            if stream == 3 {
                let (_, gs, _) = kd_kl_batch(t.view(), s.view(), temp)?;
                Ok(check_flat(
                    |p| {
                        kd_kl_batch(t.view(), from_flat(p, n, d).view(), temp)
                            .unwrap()
                            .0
                    },
                    &flat(&s),
                    &flat(&gs),
                ))
            } else {
                let (_, _, gt) = kd_kl_batch(t.view(), s.view(), temp)?;
                Ok(check_flat(
                    |p| {
                        kd_kl_batch(from_flat(p, n, d).view(), s.view(), temp)
                            .unwrap()
                            .0
                    },
                    &flat(&t),
                    &flat(&gt),
                ))
            }
        })?);
    }

    let latent_cases: [(&str, &[Manifold]); 4] = [
        ("euclidean", &[Manifold::Euclidean]),
        ("cosine", &[Manifold::Cosine]),
        ("hyperbolic", &[Manifold::Hyperbolic]),
        (
            "all manifolds",
            &[Manifold::Euclidean, Manifold::Cosine, Manifold::Hyperbolic],
        ),
    ];
    for (stream, (label, manifolds)) in latent_cases.iter().enumerate() {
        for (dstream, distance) in [RelationDistance::Huber, RelationDistance::SquaredError]
            .into_iter()
            .enumerate()
        {
            let dname = match distance {
                RelationDistance::Huber => "huber",
                RelationDistance::SquaredError => "squared",
            };
            let cfg = latent_config(manifolds, distance);
            let name = format!("latent relation ({label}, {dname})");
            results.push(run_case(
                &name,
                configurations,
                base_seed,
                10 + 2 * stream as u64 + dstream as u64,
                |rng| {
                    let n = 5;
                    // Teacher and student widths differ on purpose.
                    let t = normal_matrix(rng, n, 6, 0.6);
                    let s = normal_matrix(rng, n, 4, 0.6);
                    let mut cfg = cfg.clone();
                    cfg.curvature = [0.5, 1.0, 2.0][rng.random_range(0..3)];
                    cfg.normalize_euclidean = rng.random_bool(0.5);
                    cfg.normalize_hyperbolic = rng.random_bool(0.5);
                    let out = latent_relational_loss(t.view(), s.view(), &cfg)?;
                    Ok(check_flat(
                        |p| {
                            latent_relational_loss(t.view(), from_flat(p, n, 4).view(), &cfg)
                                .unwrap()
                                .loss
                        },
                        &flat(&s),
                        &flat(&out.grad),
                    ))
                },
            )?);
        }
    }

    results.push(run_case(
        "latent relation (hyperbolic, clamped points)",
        configurations,
        base_seed,
        19,
        |rng| {
            // Large features saturate the exponential map and hit the margin.
            let n = 5;
            let t = normal_matrix(rng, n, 6, 4.0);
            let s = normal_matrix(rng, n, 4, 4.0);
            let cfg = DistillConfig {
                normalize_hyperbolic: false,
                ..latent_config(&[Manifold::Hyperbolic], RelationDistance::Huber)
            };
            let out = latent_relational_loss(t.view(), s.view(), &cfg)?;
            Ok(check_flat(
                |p| {
                    latent_relational_loss(t.view(), from_flat(p, n, 4).view(), &cfg)
                        .unwrap()
                        .loss
                },
                &flat(&s),
                &flat(&out.grad),
            ))
        },
    )?);

    let space = small_codebook_space()?;
    results.push(run_case(
        "output relation (soft-expected)",
        configurations,
        base_seed,
        20,
        |rng| {
            let n = 5;
            let b = space.beams();
            let z = normal_matrix(rng, n, b, 1.5);
            let tb = labels(rng, n, b);
            let (_, g) =
                output_relational_from_logits(&tb, z.view(), &space, OutputMode::SoftExpected)?;
            Ok(check_flat(
                |p| {
                    output_relational_from_logits(
                        &tb,
                        from_flat(p, n, b).view(),
                        &space,
                        OutputMode::SoftExpected,
                    )
                    .unwrap()
                    .0
                },
                &flat(&z),
                &flat(&g),
            ))
        },
    )?);

    for (name, stream, objective) in [
        ("KD objective (student network)", 21u64, Objective::Kd),
        (
            "relational objective (student network)",
            22,
            Objective::Rkd {
                latent: true,
                output: true,
            },
        ),
    ] {
        results.push(run_case(name, configurations, base_seed, stream, |rng| {
            let (n, input) = (4, 5);
            let b = space.beams();
            let net = student_net(rng, input, 6, b)?;
            let x = normal_matrix(rng, n, input, 1.0);
            let y = labels(rng, n, b);
            let t_mid = normal_matrix(rng, n, 6, 1.0);
            let t_logits = normal_matrix(rng, n, b, 1.0);
            let t_beams = labels(rng, n, b);
            let teacher = TeacherBatch {
                mid: t_mid.view(),
                logits: t_logits.view(),
                beams: &t_beams,
            };
            let mut proj = Dense::identity(6);
            proj.weight += &normal_matrix(rng, 6, 6, 0.1);
            let cfg = DistillConfig {
                pair_reduction: if rng.random_bool(0.5) {
                    PairReduction::Sum
                } else {
                    PairReduction::PerAnchor
                },
                ..DistillConfig::default()
            };
            let net_err = check_network(&net, x.view(), |f| {
                let g = batch_objective(
                    objective,
                    f,
                    &y,
                    2.0,
                    Some(teacher),
                    Some(&proj),
                    Some(&space),
                    &cfg,
                )?;
                Ok((g.components.total, g.d_logits, g.d_mid))
            })?;
            if objective != Objective::Kd {
                return Ok(net_err);
            }
            // Projection head on the teacher side.
            let f = BeamNet::forward(&net, x.view())?;
            let g = batch_objective(
                objective,
                &f,
                &y,
                2.0,
                Some(teacher),
                Some(&proj),
                Some(&space),
                &cfg,
            )?;
            let analytic = g.d_projection.expect("KD has a projection").params();
            let mut probe = proj.clone();
            let proj_err = check_flat(
                |p| {
                    probe.read_params(p);
                    batch_objective(
                        objective,
                        &f,
                        &y,
                        2.0,
                        Some(teacher),
                        Some(&probe),
                        Some(&space),
                        &cfg,
                    )
                    .unwrap()
                    .components
                    .total
                },
                &proj.params(),
                &analytic,
            );
            Ok(net_err.max(proj_err))
        })?);
    }

    Ok(results)
}
