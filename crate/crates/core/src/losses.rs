//! Reference evaluators for the heatmap regression losses.
//!
//! These are plain reductions over grids, meant to check the numbers an
//! external training stack reports.

use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input")]
    EmptyList,
    #[error("loss {index} is negative or non-finite ({value})")]
    InvalidLoss { index: usize, value: f64 },
}

/// Ground-truth and predicted heatmaps for `T` target channels.
#[derive(Debug, Clone)]
pub struct HeatmapBatch {
    truth: Vec<Array2<f64>>,
    pred: Vec<Array2<f64>>,
}

impl HeatmapBatch {
    pub fn new(truth: Vec<Array2<f64>>, pred: Vec<Array2<f64>>) -> Result<Self, LossError> {
        if truth.is_empty() {
            return Err(LossError::EmptyList);
        }
        if truth.len() != pred.len() {
            return Err(LossError::ShapeMismatch(format!(
                "{} truth channels vs {} predicted",
                truth.len(),
                pred.len()
            )));
        }
        let shape = truth[0].dim();
        for (t, (h, p)) in truth.iter().zip(&pred).enumerate() {
            if h.dim() != shape || p.dim() != shape {
                return Err(LossError::ShapeMismatch(format!(
                    "channel {t}: truth {:?}, prediction {:?}, expected {shape:?}",
                    h.dim(),
                    p.dim()
                )));
            }
        }
        if shape.0 * shape.1 == 0 {
            return Err(LossError::EmptyList);
        }
        Ok(Self { truth, pred })
    }

    pub fn channels(&self) -> usize {
        self.truth.len()
    }
}

/// Mean squared error over channels and pixels.
pub fn l2_heatmap_loss(batch: &HeatmapBatch) -> f64 {
    let pixels = batch.truth[0].len() as f64;
    let total: f64 = batch
        .truth
        .iter()
        .zip(&batch.pred)
        .map(|(h, p)| {
            h.iter()
                .zip(p.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / pixels
        })
        .sum();
    total / batch.channels() as f64
}

/// Weights `1 / 2^(N-n)` for hourglass outputs `n = 1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackWeights(Vec<f64>);

impl StackWeights {
    pub fn new(n: usize) -> Self {
        Self((1..=n).map(|i| 1.0 / 2f64.powi((n - i) as i32)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Weighted mean of per-hourglass losses, later outputs weighted higher.
pub fn stacked_loss(per_hourglass: &[f64]) -> Result<f64, LossError> {
    if per_hourglass.is_empty() {
        return Err(LossError::EmptyList);
    }
    if let Some((index, &value)) = per_hourglass
        .iter()
        .enumerate()
        .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
    {
        return Err(LossError::InvalidLoss { index, value });
    }
    let w = StackWeights::new(per_hourglass.len());
    let num: f64 = w
        .as_slice()
        .iter()
        .zip(per_hourglass)
        .map(|(w, l)| w * l)
        .sum();
    Ok(num / w.total())
}
