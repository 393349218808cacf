//! Poincaré-ball operations used by the hyperbolic relation.

use crate::error::{Error, Result};

/// Relative margin kept from the ball boundary before `artanh`.
pub const BALL_MARGIN: f64 = 1e-5;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_curvature(c: f64) -> Result<()> {
    if c.is_finite() && c > 0.0 {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "curvature must be positive, got {c}"
        )))
    }
}

/// `tanh(u)/u` with its limit 1 at the origin.
fn tanh_ratio(u: f64) -> f64 {
    if u == 0.0 {
        1.0
    } else {
        u.tanh() / u
    }
}

/// `g'(u)/u` for `g(u) = tanh(u)/u`, with a series near the origin.
fn tanh_ratio_slope_over_u(u: f64) -> f64 {
    if u < 1e-2 {
        let u2 = u * u;
        -2.0 / 3.0 + 8.0 * u2 / 15.0 - 34.0 * u2 * u2 / 105.0
    } else {
        let sech = 1.0 / u.cosh();
        (u * sech * sech - u.tanh()) / (u * u * u)
    }
}

/// Exponential map at the origin: `tanh(√c‖x‖)·x/(√c‖x‖)`.
pub fn exp_map(x: &[f64], c: f64) -> Result<Vec<f64>> {
    check_curvature(c)?;
    let f = tanh_ratio(c.sqrt() * norm(x));
    let mut y: Vec<f64> = x.iter().map(|v| f * v).collect();
    // tanh rounds to 1 for large arguments; keep the image strictly inside.
    let n = norm(&y);
    if n >= radius(c) {
        let s = (1.0 - 4.0 * f64::EPSILON) * radius(c) / n;
        y.iter_mut().for_each(|v| *v *= s);
    }
    Ok(y)
}

/// Vector-Jacobian product of [`exp_map`]: the gradient at `x` given `gy`
/// at the output.
pub(crate) fn exp_map_backward(x: &[f64], c: f64, gy: &[f64]) -> Vec<f64> {
    let sc = c.sqrt();
    let u = sc * norm(x);
    let f = tanh_ratio(u);
    // d/dx [f(r) x] = f I + (f'(r)/r) x xᵀ, and f'(r)/r = c·g'(u)/u.
    let k = c * tanh_ratio_slope_over_u(u) * dot(x, gy);
    x.iter().zip(gy).map(|(xi, gi)| f * gi + k * xi).collect()
}

fn radius(c: f64) -> f64 {
    1.0 / c.sqrt()
}

fn inside(x: &[f64], c: f64) -> Result<()> {
    let n = norm(x);
    if !(n < radius(c)) {
        return Err(Error::OutsideBall {
            norm: n,
            radius: radius(c),
        });
    }
    Ok(())
}

/// Möbius addition `x ⊕_c y`. Points on or outside the ball are rejected.
pub fn mobius_add(x: &[f64], y: &[f64], c: f64) -> Result<Vec<f64>> {
    check_curvature(c)?;
    if x.len() != y.len() {
        return Err(Error::shape(x.len(), y.len()));
    }
    inside(x, c)?;
    inside(y, c)?;
    let xy = dot(x, y);
    let x2 = dot(x, x);
    let y2 = dot(y, y);
    let a = 1.0 + 2.0 * c * xy + c * y2;
    let b = 1.0 - c * x2;
    let den = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
    Ok(x.iter()
        .zip(y)
        .map(|(xi, yi)| (a * xi + b * yi) / den)
        .collect())
}

/// Pulls `y` back to norm `(1 − margin)/√c` if it lies beyond. Returns
/// whether it was clamped.
pub(crate) fn clamp_to_ball(y: &mut [f64], c: f64) -> bool {
    let limit = (1.0 - BALL_MARGIN) * radius(c);
    let n = norm(y);
    if n > limit {
        let s = limit / n;
        y.iter_mut().for_each(|v| *v *= s);
        true
    } else {
        false
    }
}

/// Gradient through [`clamp_to_ball`] for a point whose pre-clamp value was
/// `y_raw` (norm above the limit): `limit/‖y‖ · (I − ŷŷᵀ)`.
pub(crate) fn clamp_backward(y_raw: &[f64], c: f64, g: &[f64]) -> Vec<f64> {
    let limit = (1.0 - BALL_MARGIN) * radius(c);
    let n = norm(y_raw);
    let proj = dot(y_raw, g) / (n * n);
    y_raw
        .iter()
        .zip(g)
        .map(|(yi, gi)| limit / n * (gi - proj * yi))
        .collect()
}

/// Möbius-gap identity behind the distance formulas below: since
/// `1 − 2c⟨x,y⟩ + c²‖x‖²‖y‖² = (1 − c‖x‖²)(1 − c‖y‖²) + c‖x−y‖²`, the
/// distance `(2/√c)·artanh(√c‖(−x)⊕y‖)` equals
/// `(1/√c)·acosh(1 + 2c‖x−y‖² / ((1 − c‖x‖²)(1 − c‖y‖²)))`. The second form
/// stays well conditioned near the boundary, where the first cancels.
fn squared_gap(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// `acosh(1 + z)` accurate for small `z`.
fn acosh1p(z: f64) -> f64 {
    (z + (z * (z + 2.0)).sqrt()).ln_1p()
}

/// `1 − c‖y‖²` computed from the point's coordinates.
fn conformal(y: &[f64], c: f64) -> f64 {
    1.0 - c * dot(y, y)
}

/// Distance given the conformal factors `1 − c‖x‖²` and `1 − c‖y‖²`.
pub(crate) fn distance_with(x: &[f64], y: &[f64], fx: f64, fy: f64, c: f64) -> f64 {
    acosh1p(2.0 * c * squared_gap(x, y) / (fx * fy)) / c.sqrt()
}

/// Geodesic distance between two points inside the ball.
pub fn hyperbolic_distance(x: &[f64], y: &[f64], c: f64) -> f64 {
    distance_with(x, y, conformal(x, c), conformal(y, c), c)
}

/// Gradients of [`distance_with`] with respect to `x` and `y`, treating the
/// conformal factors as the functions of `x` and `y` they stand for.
pub(crate) fn distance_grad_with(
    x: &[f64],
    y: &[f64],
    fx: f64,
    fy: f64,
    c: f64,
) -> (Vec<f64>, Vec<f64>) {
    let a = squared_gap(x, y);
    let p = fx * fy;
    let z = 2.0 * c * a / p;
    if z == 0.0 {
        return (vec![0.0; x.len()], vec![0.0; y.len()]);
    }
    // dD/dz = 1/(√c·√(z(z+2))), dz/dx = (4c/P)·((x − y) + cA·x/(1 − c‖x‖²)).
    let k = 4.0 * c / (p * c.sqrt() * (z * (z + 2.0)).sqrt());
    let gx = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| k * ((xi - yi) + c * a * xi / fx))
        .collect();
    let gy = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| k * ((yi - xi) + c * a * yi / fy))
        .collect();
    (gx, gy)
}

/// `1 − c‖exp_map(x)‖²` evaluated as `sech²(√c‖x‖)`, exact where the
/// coordinate form would cancel.
pub(crate) fn exp_map_conformal(x: &[f64], c: f64) -> f64 {
    let s = 1.0 / (c.sqrt() * norm(x)).cosh();
    s * s
}

/// `1 − c‖y‖²` for a point clamped to the ball margin.
pub(crate) fn clamped_conformal() -> f64 {
    BALL_MARGIN * (2.0 - BALL_MARGIN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_maps_to_origin() {
        assert_eq!(exp_map(&[0.0, 0.0, 0.0], 1.0).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn image_stays_inside_ball() {
        for c in [0.5, 1.0, 2.0] {
            for scale in [1e-6, 0.3, 2.0, 50.0] {
                let y = exp_map(&[scale, -2.0 * scale, 0.5 * scale], c).unwrap();
                assert!(norm(&y) < 1.0 / f64::sqrt(c));
            }
        }
    }

    #[test]
    fn mobius_identities() {
        let x = [0.2, -0.4, 0.1];
        assert_eq!(mobius_add(&x, &[0.0; 3], 1.0).unwrap(), x.to_vec());
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let z = mobius_add(&neg, &x, 1.0).unwrap();
        assert!(norm(&z) < 1e-15);
    }

    #[test]
    fn boundary_points_are_rejected() {
        assert!(matches!(
            mobius_add(&[1.0, 0.0], &[0.0, 0.0], 1.0),
            Err(Error::OutsideBall { .. })
        ));
        assert!(mobius_add(&[0.0, 0.8], &[0.0, 0.0], 2.0).is_err());
    }

    #[test]
    fn distance_matches_artanh_of_mobius_gap() {
        let x = [0.3, -0.1, 0.25];
        let y = [-0.2, 0.4, 0.05];
        for c in [0.5, 1.0, 2.0] {
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            let gap = norm(&mobius_add(&neg, &y, c).unwrap());
            let direct = 2.0 / c.sqrt() * (c.sqrt() * gap).atanh();
            assert!((hyperbolic_distance(&x, &y, c) - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn series_branch_is_continuous() {
        let a = tanh_ratio_slope_over_u(0.99e-2);
        let b = tanh_ratio_slope_over_u(1.01e-2);
        assert!((a - b).abs() < 1e-4);
        assert!((tanh_ratio_slope_over_u(0.0) + 2.0 / 3.0).abs() < 1e-15);
    }
}
