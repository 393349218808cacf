//! Poincaré-ball axioms on seeded random points.

use beamkd::distill::{exp_map, hyperbolic_distance, mobius_add};
use beamkd::seed;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub const CURVATURES: [f64; 3] = [0.5, 1.0, 2.0];
pub const TRIPLES: usize = 10_000;

/// A point inside the ball: the image of a Gaussian tangent vector.
fn random_point(rng: &mut impl Rng, dim: usize, c: f64) -> Vec<f64> {
    let scale: f64 = rng.random_range(0.05..2.5);
    let t: Vec<f64> = (0..dim)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            scale * g
        })
        .collect();
    exp_map(&t, c).unwrap()
}

/// Nonnegativity, identity of indiscernibles, symmetry and the triangle
/// inequality on [`TRIPLES`] triples per curvature; panics on a violation.
pub fn verify_metric_axioms() -> String {
    let mut worst_triangle = f64::INFINITY;
    let mut worst_symmetry: f64 = 0.0;
    for (k, &c) in CURVATURES.iter().enumerate() {
        let mut rng = seed::rng(2024, &[k as u64]);
        for _ in 0..TRIPLES {
            let dim = rng.random_range(2..=16);
            let x = random_point(&mut rng, dim, c);
            let y = random_point(&mut rng, dim, c);
            let z = random_point(&mut rng, dim, c);
            let (dxy, dyz, dxz) = (
                hyperbolic_distance(&x, &y, c),
                hyperbolic_distance(&y, &z, c),
                hyperbolic_distance(&x, &z, c),
            );
            for d in [dxy, dyz, dxz] {
                assert!(d.is_finite() && d >= 0.0, "c={c}: distance {d}");
            }
            assert!(
                hyperbolic_distance(&x, &x, c).abs() <= 1e-9,
                "c={c}: d(x, x) is not zero"
            );
            assert!(dxy > 0.0, "c={c}: distinct points at distance zero");
            let sym = (dxy - hyperbolic_distance(&y, &x, c)).abs();
            assert!(sym <= 1e-12, "c={c}: asymmetry {sym}");
            worst_symmetry = worst_symmetry.max(sym);
            worst_triangle = worst_triangle.min(dxy + dyz - dxz);
            assert!(
                dxy + dyz - dxz >= -1e-9,
                "c={c}: triangle slack {}",
                dxy + dyz - dxz
            );
        }
    }
    format!(
        "{TRIPLES} triples x c in {CURVATURES:?}: worst triangle slack {worst_triangle:.2e}, worst asymmetry {worst_symmetry:.1e}"
    )
}

/// `x ⊕ 0 = x`, `0 ⊕ x = x` and `(−x) ⊕ x = 0` to 1e-12 on seeded points.
pub fn verify_mobius_identities() -> String {
    let mut worst: f64 = 0.0;
    for (k, &c) in CURVATURES.iter().enumerate() {
        let mut rng = seed::rng(2025, &[k as u64]);
        for _ in 0..TRIPLES {
            let dim = rng.random_range(1..=16);
            let x = random_point(&mut rng, dim, c);
            let zero = vec![0.0; dim];
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            let right = mobius_add(&x, &zero, c).unwrap();
            let left = mobius_add(&zero, &x, c).unwrap();
            let inverse = mobius_add(&neg, &x, c).unwrap();
            for i in 0..dim {
                worst = worst
                    .max((right[i] - x[i]).abs())
                    .max((left[i] - x[i]).abs())
                    .max(inverse[i].abs());
            }
        }
    }
    assert!(worst <= 1e-12, "Möbius identity error {worst}");
    format!("Möbius identities worst error {worst:.1e}")
}
