//! Rank metrics over scored examples.

use crate::error::{Error, Result};

/// `score` grows with the evidence that the example is positive
/// (anomalous).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredExample {
    pub score: f64,
    pub positive: bool,
}

/// Operating points `(fp, tp)` at every distinct threshold, highest first,
/// starting from `(0, 0)`. Equal scores form one threshold.
fn operating_points(scored: &[ScoredExample]) -> Result<(Vec<(usize, usize)>, usize, usize)> {
    if let Some(bad) = scored.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::non_finite(format!("score {}", bad.score)));
    }
    let pos = scored.iter().filter(|s| s.positive).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Data(format!(
            "rank metrics need both classes, got {pos} positive and {neg} negative"
        )));
    }
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = vec![(0, 0)];
    let (mut fp, mut tp) = (0, 0);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].score;
        while i < sorted.len() && sorted[i].score == s {
            if sorted[i].positive {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp, tp));
    }
    Ok((points, pos, neg))
}

/// Average precision: `Σ_k (R_k − R_{k−1})·P_k` over distinct thresholds.
pub fn auprc(scored: &[ScoredExample]) -> Result<f64> {
    let (points, pos, _) = operating_points(scored)?;
    let mut ap = 0.0;
    for w in points.windows(2) {
        let (fp, tp) = w[1];
        let gained = (tp - w[0].1) as f64 / pos as f64;
        if gained > 0.0 {
            ap += gained * tp as f64 / (tp + fp) as f64;
        }
    }
    Ok(ap)
}

/// Trapezoidal area under the ROC curve; ties contribute half credit.
pub fn auroc(scored: &[ScoredExample]) -> Result<f64> {
    let (points, pos, neg) = operating_points(scored)?;
    let mut area = 0.0;
    for w in points.windows(2) {
        let dx = (w[1].0 - w[0].0) as f64 / neg as f64;
        area += dx * (w[0].1 + w[1].1) as f64 / (2.0 * pos as f64);
    }
    Ok(area)
}
