//! Gaussian distance-to-line heatmaps and continuous sampling along segments.

use ndarray::Array2;
use thiserror::Error;

use crate::geometry::{ClippedSegment, Line2D, SliceGeometry};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HeatmapError {
    #[error("grid is {got_rows}x{got_cols} but geometry is {rows}x{cols}")]
    Shape {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("pixel spacing is anisotropic ({row} mm rows vs {col} mm columns)")]
    AnisotropicPixels { row: f64, col: f64 },
    #[error("sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("non-finite heatmap value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("sample point ({x}, {y}) lies outside the image")]
    OutOfBounds { x: f64, y: f64 },
}

/// A real-valued grid bound to the slice it was computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    geometry: SliceGeometry,
    values: Array2<f64>,
}

impl Heatmap {
    pub fn new(geometry: SliceGeometry, values: Array2<f64>) -> Result<Self, HeatmapError> {
        if values.dim() != (geometry.rows, geometry.cols) {
            return Err(HeatmapError::Shape {
                rows: geometry.rows,
                cols: geometry.cols,
                got_rows: values.nrows(),
                got_cols: values.ncols(),
            });
        }
        // Row-major storage lets the samplers index the raw buffer.
        let values = if values.is_standard_layout() {
            values
        } else {
            values.as_standard_layout().into_owned()
        };
        Ok(Self { geometry, values })
    }

    /// Wraps a network prediction: values must be finite and are clamped
    /// to `[0, 1]`.
    pub fn from_prediction(
        geometry: SliceGeometry,
        mut values: Array2<f64>,
    ) -> Result<Self, HeatmapError> {
        if let Some(((row, col), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(HeatmapError::NonFinite { row, col });
        }
        values.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Self::new(geometry, values)
    }

    pub fn zeros(geometry: SliceGeometry) -> Self {
        let values = Array2::zeros((geometry.rows, geometry.cols));
        Self { geometry, values }
    }

    pub fn geometry(&self) -> &SliceGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// Value at integer pixel `(x, y)`.
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[[y, x]]
    }

    /// `(x, y)` of the first maximum in row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = ((0, 0), f64::NEG_INFINITY);
        for ((r, c), &v) in self.values.indexed_iter() {
            if v > best.1 {
                best = ((c, r), v);
            }
        }
        best.0
    }

    /// Bilinear value at a fractional point inside the image.
    pub fn bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let (w, h) = self.geometry.extent();
        if !((0.0..=w).contains(&x) && (0.0..=h).contains(&y)) {
            return None;
        }
        Some(self.bilinear_unchecked(x, y))
    }

    #[inline]
    fn bilinear_unchecked(&self, x: f64, y: f64) -> f64 {
        let data = self.values.as_slice().expect("row-major storage");
        bilinear_in(data, self.geometry.cols, self.geometry.rows, x, y)
    }

    /// Sum of bilinear samples along a clipped segment, in traversal order.
    pub fn segment_sum(&self, segment: &ClippedSegment) -> f64 {
        let data = self.values.as_slice().expect("row-major storage");
        let (cols, rows) = (self.geometry.cols, self.geometry.rows);
        segment
            .samples()
            .map(|(x, y)| bilinear_in(data, cols, rows, x, y))
            .sum()
    }
}

#[inline(always)]
fn bilinear_in(data: &[f64], cols: usize, rows: usize, x: f64, y: f64) -> f64 {
    let x0 = (x as usize).min(cols - 2);
    let y0 = (y as usize).min(rows - 2);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let i = y0 * cols + x0;
    let top = (1.0 - fx) * data[i] + fx * data[i + 1];
    let bottom = (1.0 - fx) * data[i + cols] + fx * data[i + cols + 1];
    (1.0 - fy) * top + fy * bottom
}

/// Heatmap width as a multiple of the target view's slice thickness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaSpec {
    pub alpha: f64,
}

impl Default for SigmaSpec {
    fn default() -> Self {
        Self { alpha: 0.5 }
    }
}

impl SigmaSpec {
    pub fn new(alpha: f64) -> Result<Self, HeatmapError> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(HeatmapError::InvalidSigma(alpha));
        }
        Ok(Self { alpha })
    }

    /// Sigma in mm for a target view of the given slice thickness.
    pub fn sigma_mm(&self, target_thickness: f64) -> f64 {
        self.alpha * target_thickness
    }
}

/// Renders `exp(-d^2 / (2 sigma^2))` at every integer pixel, with `d` the
/// perpendicular distance to `line` converted to mm.
///
/// Far from the line the exponent underflows and values reach exactly 0.
pub fn render_target(
    g: &SliceGeometry,
    line: &Line2D,
    sigma_mm: f64,
) -> Result<Heatmap, HeatmapError> {
    if !g.is_isotropic() {
        return Err(HeatmapError::AnisotropicPixels {
            row: g.pixel_spacing_row,
            col: g.pixel_spacing_col,
        });
    }
    if !(sigma_mm.is_finite() && sigma_mm > 0.0) {
        return Err(HeatmapError::InvalidSigma(sigma_mm));
    }
    let norm = line.a.hypot(line.b);
    let scale = g.pixel_spacing_col / norm;
    let denom = 2.0 * sigma_mm * sigma_mm;
    let values = Array2::from_shape_fn((g.rows, g.cols), |(y, x)| {
        let d_mm = (line.a * x as f64 + line.b * y as f64 + line.c).abs() * scale;
        (-d_mm * d_mm / denom).exp()
    });
    Ok(Heatmap {
        geometry: g.clone(),
        values,
    })
}

pub fn sample_bilinear(h: &Heatmap, pts: &[(f64, f64)]) -> Result<Vec<f64>, HeatmapError> {
    pts.iter()
        .map(|&(x, y)| h.bilinear(x, y).ok_or(HeatmapError::OutOfBounds { x, y }))
        .collect()
}
