//! Answer-length summaries in the layout of the answer-length appendix table
//! (mean, std, min, quartiles, max, in characters).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Answer;

#[derive(Debug, Error, PartialEq)]
#[error("cannot summarise an empty list of answers")]
pub struct EmptyInput;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single answer.
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

pub fn answer_length_stats(answers: &[Answer]) -> Result<LengthSummary, EmptyInput> {
    let lengths: Vec<usize> = answers.iter().map(|a| a.length_chars).collect();
    length_stats(&lengths)
}

pub fn length_stats(lengths: &[usize]) -> Result<LengthSummary, EmptyInput> {
    if lengths.is_empty() {
        return Err(EmptyInput);
    }
    let mut sorted: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let std = if sorted.len() > 1 {
        (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(LengthSummary {
        count: sorted.len(),
        mean,
        std,
        min: sorted[0],
        q25: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q75: quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    })
}

/// Linear interpolation between order statistics at rank `(n - 1) * p`
/// (the "type 7" definition). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
