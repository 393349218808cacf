/// Components smaller than this fraction of the largest analytic component
/// are compared against that scale instead of their own magnitude, which
/// keeps central-difference roundoff on near-zero entries from dominating.
pub const SCALE_FLOOR: f64 = 1e-3;

/// Relative error between an analytic and a numeric derivative, with the
/// denominator floored at `floor`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Worst relative error between `analytic` and central differences of `f`
/// at `point`, over the given coordinates. The denominator of each
/// coordinate's error is at least [`SCALE_FLOOR`] times the largest
/// analytic component among `coords` (and never below 1e-12).
pub fn grad_check<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    eps: f64,
    coords: &[usize],
) -> f64 {
    let scale = coords
        .iter()
        .map(|&i| analytic[i].abs())
        .fold(0.0, f64::max);
    let floor = (SCALE_FLOOR * scale).max(1e-12);
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = x[i];
        x[i] = orig + eps;
        let up = f(&x);
        x[i] = orig - eps;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric, floor));
    }
    worst
}

/// Up to `count` coordinates out of `len`, evenly spread and always including
/// the first and the last.
pub fn sample_coords(len: usize, count: usize) -> Vec<usize> {
    if count >= len {
        return (0..len).collect();
    }
    if count <= 1 {
        return vec![0];
    }
    let mut v: Vec<usize> = (0..count).map(|k| k * (len - 1) / (count - 1)).collect();
    v.dedup();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let theta = [0.3, -1.2, 2.5, 0.0];
        let err = grad_check(
            |x| 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
            &theta,
            &theta,
            1e-4,
            &[0, 1, 2, 3],
        );
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let theta = [0.3, -1.2, 2.5];
        let mut g = theta;
        g[1] *= 1.1;
        let err = grad_check(
            |x| 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
            &theta,
            &g,
            1e-4,
            &[0, 1, 2],
        );
        assert!(err > 1e-2);
    }

    #[test]
    fn coordinate_sampling() {
        assert_eq!(sample_coords(3, 10), vec![0, 1, 2]);
        let s = sample_coords(1000, 5);
        assert_eq!(s.first(), Some(&0));
        assert_eq!(s.last(), Some(&999));
        assert_eq!(s.len(), 5);
    }

    #[test]
    fn small_components_use_the_gradient_scale() {
        assert_eq!(relative_error(2.0, 1.0, 1e-3), 0.5);
        assert_eq!(relative_error(1e-9, 2e-9, 1e-3), 1e-9 / 1e-3);
    }
}
