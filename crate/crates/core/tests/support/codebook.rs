//! Properties of the shipped default codebook.

use beamkd::beams::{beam_similarity, build_codebook, l2_norm};
use beamkd::config::ExperimentConfig;

/// Pattern count, unit norms, and the similarity matrix's diagonal and
/// symmetry; panics on a violation.
pub fn verify() -> String {
    let config = ExperimentConfig::default();
    let codebook = build_codebook(&config.codebook).unwrap();
    assert_eq!(codebook.len(), 152, "pattern count");
    let mut worst_norm: f64 = 0.0;
    for (b, p) in codebook.patterns.iter().enumerate() {
        assert_eq!(p.index, b);
        assert!((1..=3).contains(&p.components.len()));
        worst_norm = worst_norm.max((l2_norm(&p.weights) - 1.0).abs());
    }
    assert!(worst_norm <= 1e-12, "norm error {worst_norm}");

    let n = codebook.len();
    let s: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| beam_similarity(&codebook.patterns[i], &codebook.patterns[j]).unwrap())
                .collect()
        })
        .collect();
    let (mut worst_diag, mut worst_sym): (f64, f64) = (0.0, 0.0);
    for (i, row) in s.iter().enumerate() {
        worst_diag = worst_diag.max((row[i] - 1.0).abs());
        for (j, v) in row.iter().enumerate() {
            worst_sym = worst_sym.max((v - s[j][i]).abs());
            assert!((0.0..=1.0).contains(v));
        }
    }
    assert!(
        worst_diag <= 1e-12 && worst_sym <= 1e-12,
        "diagonal {worst_diag}, symmetry {worst_sym}"
    );
    // Distinct patterns are distinguishable.
    let duplicates = (0..n)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .filter(|&(i, j)| s[i][j] > 1.0 - 1e-9)
        .count();
    assert_eq!(duplicates, 0, "duplicate patterns");
    format!("{n} patterns; norm error {worst_norm:.1e}, |s_ii - 1| {worst_diag:.1e}, asymmetry {worst_sym:.1e}")
}
