//! Top-k accuracy, mean RSS and mean percentile rank.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::BeamNet;

/// The k values reported by [`evaluate`].
pub const REPORTED_K: [usize; 3] = [1, 5, 10];

/// Indices of the `k` largest scores; equal scores go to the lower index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Highest-scoring index, lowest index on ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in scores.iter().enumerate() {
        if v.total_cmp(&scores[best]).is_gt() {
            best = i;
        }
    }
    best
}

fn check_rows(rows: usize, other: usize, what: &str) -> Result<()> {
    if rows == 0 {
        return Err(Error::Invalid("empty evaluation set".into()));
    }
    if rows != other {
        return Err(Error::shape(format!("{rows} {what}"), other));
    }
    Ok(())
}

/// Fraction of rows whose label is among the `k` highest scores.
pub fn top_k_accuracy(scores: ArrayView2<f64>, labels: &[usize], k: usize) -> Result<f64> {
    check_rows(scores.nrows(), labels.len(), "labels")?;
    if k == 0 || k > scores.ncols() {
        return Err(Error::Invalid(format!(
            "k = {k} outside 1..={}",
            scores.ncols()
        )));
    }
    let mut hits = 0usize;
    for (row, &y) in scores.rows().into_iter().zip(labels) {
        let row = row.to_vec();
        if top_k_indices(&row, k).contains(&y) {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

fn check_prediction(pred: usize, rss: &[f32]) -> Result<()> {
    if pred >= rss.len() {
        return Err(Error::Invalid(format!(
            "predicted beam {pred} outside codebook of {}",
            rss.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanRss {
    pub mean_dbm: f64,
    /// Samples whose predicted beam had no coverage and were left out.
    pub excluded: usize,
}

/// Mean of `rss[i][pred[i]]` in dB, skipping no-coverage entries.
pub fn mean_rss(predicted: &[usize], rss: &[Vec<f32>]) -> Result<MeanRss> {
    check_rows(predicted.len(), rss.len(), "predictions")?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (&p, row) in predicted.iter().zip(rss) {
        check_prediction(p, row)?;
        let v = row[p] as f64;
        if v.is_finite() {
            sum += v;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Invalid(
            "every predicted beam has no coverage".into(),
        ));
    }
    Ok(MeanRss {
        mean_dbm: sum / used as f64,
        excluded: predicted.len() - used,
    })
}

/// `1 + #{b : S(b) > S(ŷ)}`.
pub fn rank(rss: &[f32], predicted: usize) -> usize {
    let s = rss[predicted];
    1 + rss.iter().filter(|&&v| v > s).count()
}

/// Mean percentile rank in percent.
pub fn mpr(predicted: &[usize], rss: &[Vec<f32>]) -> Result<f64> {
    check_rows(predicted.len(), rss.len(), "predictions")?;
    let mut sum = 0.0;
    for (&p, row) in predicted.iter().zip(rss) {
        check_prediction(p, row)?;
        let b = row.len();
        sum += (b - rank(row, p) + 1) as f64 / b as f64;
    }
    Ok(100.0 * sum / predicted.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    /// Top-k accuracy keyed by k.
    pub top_k: BTreeMap<usize, f64>,
    pub mean_rss_dbm: f64,
    pub rss_excluded: usize,
    pub mpr_percent: f64,
}

/// Metrics for per-sample beam scores (logits or probabilities).
pub fn evaluate_scores(
    scores: ArrayView2<f64>,
    labels: &[usize],
    rss: &[Vec<f32>],
) -> Result<MetricsReport> {
    check_rows(scores.nrows(), rss.len(), "RSS vectors")?;
    let predicted: Vec<usize> = scores
        .rows()
        .into_iter()
        .map(|r| argmax(&r.to_vec()))
        .collect();
    let mut top_k = BTreeMap::new();
    for k in REPORTED_K {
        top_k.insert(k, top_k_accuracy(scores, labels, k.min(scores.ncols()))?);
    }
    let m = mean_rss(&predicted, rss)?;
    Ok(MetricsReport {
        samples: labels.len(),
        top_k,
        mean_rss_dbm: m.mean_dbm,
        rss_excluded: m.excluded,
        mpr_percent: mpr(&predicted, rss)?,
    })
}

/// Runs `model` over `inputs` in one pass and scores its predictions.
pub fn evaluate<M: BeamNet>(
    model: &M,
    inputs: ArrayView2<f64>,
    labels: &[usize],
    rss: &[Vec<f32>],
) -> Result<MetricsReport> {
    let logits = model.forward(inputs)?.logits;
    evaluate_scores(logits.view(), labels, rss)
}

/// Fixed-width table, one row per named report.
pub fn format_table(rows: &[(String, MetricsReport)]) -> String {
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<name_w$}  {:>7}  {:>7}  {:>7}  {:>10}  {:>8}",
        "Method", "Top-1", "Top-5", "Top-10", "RSS (dBm)", "MPR (%)"
    );
    let _ = writeln!(out, "{}", "-".repeat(name_w + 51));
    for (name, r) in rows {
        let t = |k| r.top_k.get(&k).copied().unwrap_or(f64::NAN);
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>7.4}  {:>7.4}  {:>7.4}  {:>10.3}  {:>8.3}",
            name,
            t(1),
            t(5),
            t(10),
            r.mean_rss_dbm,
            r.mpr_percent
        );
    }
    out
}
