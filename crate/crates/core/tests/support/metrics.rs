//! Sort-based brute-force oracles for top-k accuracy and mean percentile rank.

use beamkd::metrics::{argmax, mpr, rank, top_k_accuracy};
use beamkd::seed;
use ndarray::Array2;
use rand::Rng;

pub const INSTANCES: u64 = 1000;
pub const BEAMS: usize = 20;
pub const SAMPLES: usize = 1000;

/// Quantized values so that ties are common.
pub fn instance(index: u64) -> (Array2<f64>, Vec<usize>, Vec<Vec<f32>>) {
    let mut rng = seed::rng(17, &[index]);
    let levels = if index.is_multiple_of(2) { 8 } else { 1 << 20 };
    let scores = Array2::from_shape_fn((SAMPLES, BEAMS), |_| rng.random_range(0..levels) as f64);
    let labels = (0..SAMPLES).map(|_| rng.random_range(0..BEAMS)).collect();
    let rss = (0..SAMPLES)
        .map(|_| {
            (0..BEAMS)
                .map(|_| -(rng.random_range(0..levels) as f32) / 7.0)
                .collect()
        })
        .collect();
    (scores, labels, rss)
}

/// Position of `label` after a full descending sort with index tie-breaks.
fn sorted_position(scores: &[f64], label: usize) -> usize {
    let mut order: Vec<(f64, usize)> = scores.iter().copied().zip(0..).collect();
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    order.iter().position(|&(_, i)| i == label).unwrap()
}

/// Rank by sorting: one plus the number of values strictly above.
fn sorted_rank(rss: &[f32], predicted: usize) -> usize {
    let mut v = rss.to_vec();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    1 + v.iter().take_while(|&&x| x > rss[predicted]).count()
}

/// Compares the metrics with the oracles on every instance; panics on the
/// first difference.
pub fn verify() -> String {
    for index in 0..INSTANCES {
        let (scores, labels, rss) = instance(index);
        let rows: Vec<Vec<f64>> = scores.rows().into_iter().map(|r| r.to_vec()).collect();
        for k in [1, 3, 5, 10, BEAMS] {
            let hits = rows
                .iter()
                .zip(&labels)
                .filter(|(r, &y)| sorted_position(r, y) < k)
                .count();
            assert_eq!(
                top_k_accuracy(scores.view(), &labels, k).unwrap(),
                hits as f64 / SAMPLES as f64,
                "instance {index}, top-{k}"
            );
        }
        let predicted: Vec<usize> = rows.iter().map(|r| argmax(r)).collect();
        let mut sum = 0.0;
        for (&p, row) in predicted.iter().zip(&rss) {
            let r = sorted_rank(row, p);
            assert_eq!(rank(row, p), r, "instance {index}");
            sum += (BEAMS - r + 1) as f64 / BEAMS as f64;
        }
        assert_eq!(
            mpr(&predicted, &rss).unwrap(),
            100.0 * sum / SAMPLES as f64,
            "instance {index}"
        );
    }

    let (scores, labels, rss) = instance(1);
    let best: Vec<usize> = rss
        .iter()
        .map(|r| argmax(&r.iter().map(|&v| v as f64).collect::<Vec<_>>()))
        .collect();
    let oracle_mpr = mpr(&best, &rss).unwrap();
    let top_b = top_k_accuracy(scores.view(), &labels, BEAMS).unwrap();
    assert_eq!(oracle_mpr, 100.0);
    assert_eq!(top_b, 1.0);
    format!(
        "{INSTANCES} instances (B={BEAMS}, n={SAMPLES}) match exactly; oracle predictor MPR {oracle_mpr:.3}, top-{BEAMS} {top_b:.1}"
    )
}
