//! Patient-coordinate geometry for 2D slices.
//!
//! A slice lives in the patient reference coordinate system (RCS, mm). Its
//! image coordinate system (ICS) has the first transmitted pixel at the
//! origin, `x` running along the first row (column index) and `y` running
//! down the first column (row index).
//!
//! DICOM `PixelSpacing` is ordered (row spacing, column spacing). Moving one
//! step in `x` crosses one column, so it is scaled by `pixel_spacing_col`;
//! moving one step in `y` is scaled by `pixel_spacing_row`.

use nalgebra::Vector3;
use ndarray::Array2;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

const UNIT_TOL: f64 = 1e-9;
const ORTHO_TOL: f64 = 1e-6;
/// Threshold on `|n1 x n2|` below which two planes count as parallel.
pub const PARALLEL_TOL: f64 = 1e-9;
/// Sign decisions on near-zero components use this cutoff.
const SIGN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid slice geometry: {field}: {reason}")]
    InvalidSlice { field: &'static str, reason: String },
    #[error("invalid plane: {0}")]
    InvalidPlane(String),
    #[error("degenerate line: a and b are both zero")]
    DegenerateLine,
    #[error("planes are parallel or coincident")]
    ParallelPlanes,
    #[error("stack is empty")]
    EmptyStack,
    #[error("stack slice {0} is not parallel to slice 0")]
    NonParallelStack(usize),
    #[error("stack slices {0} and {1} occupy the same position")]
    DuplicateStackPosition(usize, usize),
    #[error("stack slice {index}: grid is {got_rows}x{got_cols}, geometry is {rows}x{cols}")]
    GridShape {
        index: usize,
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("output grid dimensions and spacing must be positive")]
    InvalidOutput,
}

/// Position, orientation and sampling of one 2D slice in the RCS.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceGeometry {
    /// Center of the first transmitted pixel, mm.
    pub ipp: Vec3,
    /// Direction of increasing column index.
    pub row_dir: Vec3,
    /// Direction of increasing row index.
    pub col_dir: Vec3,
    /// Spacing between adjacent rows (along `col_dir`), mm.
    pub pixel_spacing_row: f64,
    /// Spacing between adjacent columns (along `row_dir`), mm.
    pub pixel_spacing_col: f64,
    pub rows: usize,
    pub cols: usize,
    pub slice_thickness: f64,
}

impl SliceGeometry {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ipp: Vec3,
        row_dir: Vec3,
        col_dir: Vec3,
        pixel_spacing_row: f64,
        pixel_spacing_col: f64,
        rows: usize,
        cols: usize,
        slice_thickness: f64,
    ) -> Result<Self, GeometryError> {
        let g = Self {
            ipp,
            row_dir,
            col_dir,
            pixel_spacing_row,
            pixel_spacing_col,
            rows,
            cols,
            slice_thickness,
        };
        g.validate()?;
        Ok(g)
    }

    /// Builds a slice whose center pixel sits at `center`, spanned by the
    /// given in-plane unit directions.
    #[allow(clippy::too_many_arguments)]
    pub fn centered(
        center: Vec3,
        row_dir: Vec3,
        col_dir: Vec3,
        spacing: f64,
        rows: usize,
        cols: usize,
        slice_thickness: f64,
    ) -> Result<Self, GeometryError> {
        let half_x = (cols as f64 - 1.0) / 2.0;
        let half_y = (rows as f64 - 1.0) / 2.0;
        let ipp = center - row_dir * (half_x * spacing) - col_dir * (half_y * spacing);
        Self::new(
            ipp,
            row_dir,
            col_dir,
            spacing,
            spacing,
            rows,
            cols,
            slice_thickness,
        )
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |field, reason: String| Err(GeometryError::InvalidSlice { field, reason });
        for (field, v) in [
            ("ipp", &self.ipp),
            ("row_dir", &self.row_dir),
            ("col_dir", &self.col_dir),
        ] {
            if !v.iter().all(|c| c.is_finite()) {
                return bad(field, "non-finite component".into());
            }
        }
        for (field, v) in [("row_dir", &self.row_dir), ("col_dir", &self.col_dir)] {
            let n = v.norm();
            if (n - 1.0).abs() > UNIT_TOL {
                return bad(field, format!("not a unit vector (norm {n})"));
            }
        }
        let dot = self.row_dir.dot(&self.col_dir);
        if dot.abs() > ORTHO_TOL {
            return bad("col_dir", format!("not orthogonal to row_dir (dot {dot})"));
        }
        for (field, v) in [
            ("pixel_spacing_row", self.pixel_spacing_row),
            ("pixel_spacing_col", self.pixel_spacing_col),
            ("slice_thickness", self.slice_thickness),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(field, format!("must be positive, got {v}"));
            }
        }
        if self.rows < 2 {
            return bad("rows", format!("must be at least 2, got {}", self.rows));
        }
        if self.cols < 2 {
            return bad("cols", format!("must be at least 2, got {}", self.cols));
        }
        Ok(())
    }

    /// Unit normal `row_dir x col_dir` (oriented, not canonicalized).
    pub fn normal(&self) -> Vec3 {
        self.row_dir.cross(&self.col_dir).normalize()
    }

    pub fn pixel_to_rcs(&self, x: f64, y: f64) -> Vec3 {
        pixel_to_rcs(self, x, y)
    }

    /// Inverse of [`pixel_to_rcs`] for points on the slice plane; off-plane
    /// points are projected orthogonally first.
    pub fn rcs_to_pixel(&self, q: &Vec3) -> (f64, f64) {
        let d = q - self.ipp;
        (
            d.dot(&self.row_dir) / self.pixel_spacing_col,
            d.dot(&self.col_dir) / self.pixel_spacing_row,
        )
    }

    /// RCS position of the image center, `((cols-1)/2, (rows-1)/2)`.
    pub fn center(&self) -> Vec3 {
        self.pixel_to_rcs(
            (self.cols as f64 - 1.0) / 2.0,
            (self.rows as f64 - 1.0) / 2.0,
        )
    }

    pub fn is_isotropic(&self) -> bool {
        (self.pixel_spacing_row - self.pixel_spacing_col).abs() <= 1e-9
    }

    pub fn is_parallel_to(&self, other: &SliceGeometry) -> bool {
        self.normal().cross(&other.normal()).norm() < PARALLEL_TOL
    }

    /// Largest valid `x` and `y` pixel coordinates.
    pub fn extent(&self) -> (f64, f64) {
        (self.cols as f64 - 1.0, self.rows as f64 - 1.0)
    }
}

pub fn pixel_to_rcs(g: &SliceGeometry, x: f64, y: f64) -> Vec3 {
    g.ipp + g.row_dir * (x * g.pixel_spacing_col) + g.col_dir * (y * g.pixel_spacing_row)
}

/// Flips `n` into the hemisphere `y > 0`, then `x > 0`, then `z > 0`.
///
/// This is the half-space reachable with polar and azimuthal angles both in
/// `[0, 180)`, so `n` and `-n` always map to the same vector.
fn canonical_direction(n: Vec3) -> Vec3 {
    let flip = if n.y.abs() > SIGN_EPS {
        n.y < 0.0
    } else if n.x.abs() > SIGN_EPS {
        n.x < 0.0
    } else {
        n.z < 0.0
    };
    if flip {
        -n
    } else {
        n
    }
}

/// Unoriented plane: anchor point and spherical angles (degrees) of its normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane3D {
    pub p: Vec3,
    pub theta: f64,
    pub phi: f64,
}

impl Plane3D {
    /// Angles must lie in `[0, 180)`. A polar angle of 0 forces `phi = 0`.
    pub fn new(p: Vec3, theta: f64, phi: f64) -> Result<Self, GeometryError> {
        for (name, v) in [("theta", theta), ("phi", phi)] {
            if !(v.is_finite() && (0.0..180.0).contains(&v)) {
                return Err(GeometryError::InvalidPlane(format!(
                    "{name} = {v} outside [0, 180)"
                )));
            }
        }
        if !p.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::InvalidPlane("non-finite anchor".into()));
        }
        let phi = if theta == 0.0 { 0.0 } else { phi };
        Ok(Self { p, theta, phi })
    }

    pub fn from_normal(p: Vec3, n: Vec3) -> Result<Self, GeometryError> {
        let len = n.norm();
        if !(len.is_finite() && len > 0.0) {
            return Err(GeometryError::InvalidPlane("zero normal".into()));
        }
        let n = canonical_direction(n / len);
        let theta = n.z.clamp(-1.0, 1.0).acos().to_degrees();
        let phi = if n.x.abs() <= SIGN_EPS && n.y.abs() <= SIGN_EPS {
            0.0
        } else {
            n.y.atan2(n.x).to_degrees().max(0.0)
        };
        // Guard against a rounding overshoot at the open upper bound.
        let wrap = |a: f64| if a >= 180.0 { 0.0 } else { a };
        Self::new(p, wrap(theta), wrap(phi))
    }

    pub fn normal(&self) -> Vec3 {
        let (st, ct) = self.theta.to_radians().sin_cos();
        let (sp, cp) = self.phi.to_radians().sin_cos();
        Vec3::new(st * cp, st * sp, ct)
    }

    pub fn signed_distance(&self, q: &Vec3) -> f64 {
        (q - self.p).dot(&self.normal())
    }

    /// Same plane re-expressed with the anchor moved to the orthogonal
    /// projection of `q`.
    pub fn reanchored(&self, q: &Vec3) -> Self {
        let n = self.normal();
        Self {
            p: q - n * (q - self.p).dot(&n),
            ..*self
        }
    }
}

/// `a x + b y + c = 0` in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line2D {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Line2D {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, GeometryError> {
        if !(a.is_finite() && b.is_finite() && c.is_finite()) || (a == 0.0 && b == 0.0) {
            return Err(GeometryError::DegenerateLine);
        }
        Ok(Self { a, b, c })
    }

    /// Line through `(x0, y0)` with direction angle `theta_deg` measured
    /// from the `+x` axis towards `+y`.
    pub fn through_point(x0: f64, y0: f64, theta_deg: f64) -> Self {
        let (s, c) = theta_deg.to_radians().sin_cos();
        Self {
            a: s,
            b: -c,
            c: -(s * x0 - c * y0),
        }
        .canonical()
    }

    /// Unit `(a, b)` with the first non-negligible of `a`, `b` positive.
    /// Idempotent bit-for-bit.
    pub fn canonical(&self) -> Self {
        let n = self.a.hypot(self.b);
        let (mut a, mut b, mut c) = (self.a, self.b, self.c);
        if (n - 1.0).abs() > 4.0 * f64::EPSILON {
            a /= n;
            b /= n;
            c /= n;
        }
        let flip = if a.abs() > SIGN_EPS { a < 0.0 } else { b < 0.0 };
        if flip {
            a = -a;
            b = -b;
            c = -c;
        }
        Self { a, b, c }
    }

    /// Euclidean distance between coefficient triples after canonicalization.
    pub fn coefficient_distance(&self, other: &Line2D) -> f64 {
        let (l, r) = (self.canonical(), other.canonical());
        ((l.a - r.a).powi(2) + (l.b - r.b).powi(2) + (l.c - r.c).powi(2)).sqrt()
    }

    /// Perpendicular distance of `(x, y)` from the line, in pixels.
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        (self.a * x + self.b * y + self.c).abs() / self.a.hypot(self.b)
    }

    /// Direction angle in `[0, 180)` degrees.
    pub fn angle_deg(&self) -> f64 {
        let ang = self.a.atan2(-self.b).to_degrees().rem_euclid(180.0);
        if ang >= 180.0 {
            0.0
        } else {
            ang
        }
    }
}

/// A line in the RCS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line3 {
    pub point: Vec3,
    pub direction: Vec3,
}

pub fn slice_plane(g: &SliceGeometry) -> Plane3D {
    Plane3D::from_normal(g.ipp, g.row_dir.cross(&g.col_dir))
        .expect("validated slice geometry has a non-degenerate normal")
}

/// Intersection line of two planes.
///
/// The returned point is the minimum-norm offset from `pl1.p` that satisfies
/// both plane equations, so the result depends only on the inputs.
pub fn intersect_planes(pl1: &Plane3D, pl2: &Plane3D) -> Result<Line3, GeometryError> {
    let n1 = pl1.normal();
    let n2 = pl2.normal();
    let d = n1.cross(&n2);
    let dn = d.norm();
    if dn < PARALLEL_TOL {
        return Err(GeometryError::ParallelPlanes);
    }
    let cos = n1.dot(&n2);
    let h2 = n2.dot(&(pl2.p - pl1.p));
    let det = 1.0 - cos * cos;
    let alpha = -cos * h2 / det;
    let beta = h2 / det;
    Ok(Line3 {
        point: pl1.p + n1 * alpha + n2 * beta,
        direction: d / dn,
    })
}

/// Intersection of `target` with the slice plane of `g`, in `g`'s pixel ICS.
///
/// Substituting [`pixel_to_rcs`] into the plane equation `n . (q - p) = 0`
/// gives the line directly, which is the same line [`intersect_planes`]
/// finds, without the angle round trip.
pub fn project_line_to_view(g: &SliceGeometry, target: &Plane3D) -> Result<Line2D, GeometryError> {
    line_in_view(g, &target.normal(), &target.p)
}

/// [`project_line_to_view`] for a plane given by unit normal `n` and a
/// point `p`.
pub fn line_in_view(g: &SliceGeometry, n: &Vec3, p: &Vec3) -> Result<Line2D, GeometryError> {
    let (nr, nc) = (n.dot(&g.row_dir), n.dot(&g.col_dir));
    // In-plane part of n has length |n x slice normal|.
    if nr.hypot(nc) < PARALLEL_TOL {
        return Err(GeometryError::ParallelPlanes);
    }
    Line2D::new(
        nr * g.pixel_spacing_col,
        nc * g.pixel_spacing_row,
        n.dot(&(g.ipp - p)),
    )
    .map(|l| l.canonical())
}

/// The plane through `line` that is orthogonal to the slice plane of `g`.
pub fn lift_line_orthogonal(g: &SliceGeometry, line: &Line2D) -> Plane3D {
    let n = g.row_dir * (line.a / g.pixel_spacing_col) + g.col_dir * (line.b / g.pixel_spacing_row);
    let (cx, cy) = {
        let (w, h) = g.extent();
        (w / 2.0, h / 2.0)
    };
    let k = (line.a * cx + line.b * cy + line.c) / (line.a * line.a + line.b * line.b);
    let anchor = g.pixel_to_rcs(cx - k * line.a, cy - k * line.b);
    Plane3D::from_normal(anchor, n).expect("line normal is non-zero")
}

/// The part of a line inside an image rectangle, parameterized by arc length
/// in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClippedSegment {
    pub start: (f64, f64),
    pub direction: (f64, f64),
    pub length: f64,
    bounds: (f64, f64),
}

impl ClippedSegment {
    pub fn sample_count(&self) -> usize {
        (self.length + 1e-9).floor() as usize + 1
    }

    pub fn sample(&self, k: usize) -> (f64, f64) {
        let t = k as f64;
        (
            (self.start.0 + t * self.direction.0).clamp(0.0, self.bounds.0),
            (self.start.1 + t * self.direction.1).clamp(0.0, self.bounds.1),
        )
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.sample_count()).map(move |k| self.sample(k))
    }

    pub fn end(&self) -> (f64, f64) {
        (
            (self.start.0 + self.length * self.direction.0).clamp(0.0, self.bounds.0),
            (self.start.1 + self.length * self.direction.1).clamp(0.0, self.bounds.1),
        )
    }
}

/// Clips `line` to `[0, cols-1] x [0, rows-1]`. Traversal runs along
/// `(-b, a)` of the canonical line.
pub fn clip_line(g: &SliceGeometry, line: &Line2D) -> Option<ClippedSegment> {
    let l = line.canonical();
    let (w, h) = g.extent();
    let (cx, cy) = (w / 2.0, h / 2.0);
    let s = l.a * cx + l.b * cy + l.c;
    let foot = (cx - s * l.a, cy - s * l.b);
    let dir = (-l.b, l.a);
    const TOL: f64 = 1e-9;

    let mut t_lo = f64::NEG_INFINITY;
    let mut t_hi = f64::INFINITY;
    for (f, u, max) in [(foot.0, dir.0, w), (foot.1, dir.1, h)] {
        if u.abs() < 1e-15 {
            if f < -TOL || f > max + TOL {
                return None;
            }
        } else {
            let (t0, t1) = ((0.0 - f) / u, (max - f) / u);
            t_lo = t_lo.max(t0.min(t1));
            t_hi = t_hi.min(t0.max(t1));
        }
    }
    if t_lo > t_hi + TOL {
        return None;
    }
    Some(ClippedSegment {
        start: (foot.0 + t_lo * dir.0, foot.1 + t_lo * dir.1),
        direction: dir,
        length: (t_hi - t_lo).max(0.0),
        bounds: (w, h),
    })
}

/// Sample points along a clipped line, one pixel of arc length apart.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentPixels(pub Vec<(f64, f64)>);

impl SegmentPixels {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.0
    }
}

/// Samples at arc length `0, 1, ..., floor(L)` from the first boundary
/// crossing; the far endpoint is included whenever `L` is integral.
pub fn clip_and_sample(g: &SliceGeometry, line: &Line2D) -> SegmentPixels {
    match clip_line(g, line) {
        Some(seg) => SegmentPixels(seg.samples().collect()),
        None => SegmentPixels::default(),
    }
}

/// Deterministic orthonormal in-plane basis `(e1, e2)` with `e1 x e2 = n`.
///
/// `e1` is the projection of the coordinate axis least aligned with `n`
/// (lowest index on ties).
pub fn plane_basis(n: &Vec3) -> (Vec3, Vec3) {
    let mut axis = 0;
    for i in 1..3 {
        if n[i].abs() < n[axis].abs() {
            axis = i;
        }
    }
    let mut e = Vec3::zeros();
    e[axis] = 1.0;
    let e1 = (e - n * e.dot(n)).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

/// Nearest-neighbor resampling of a stack of parallel slices on `target`.
///
/// The output frame is centered on the projection of the stack centroid onto
/// `target` and spanned by [`plane_basis`]. Slice and pixel indices are
/// rounded half away from zero; points that round outside the stack read 0.
pub fn resample_plane_from_stack(
    stack: &[(SliceGeometry, Array2<f64>)],
    target: &Plane3D,
    out_rows: usize,
    out_cols: usize,
    out_spacing: f64,
) -> Result<Array2<f64>, GeometryError> {
    if stack.is_empty() {
        return Err(GeometryError::EmptyStack);
    }
    if out_rows == 0 || out_cols == 0 || !(out_spacing.is_finite() && out_spacing > 0.0) {
        return Err(GeometryError::InvalidOutput);
    }
    let g0 = &stack[0].0;
    for (i, (g, grid)) in stack.iter().enumerate() {
        if i > 0 && !g.is_parallel_to(g0) {
            return Err(GeometryError::NonParallelStack(i));
        }
        if grid.dim() != (g.rows, g.cols) {
            return Err(GeometryError::GridShape {
                index: i,
                rows: g.rows,
                cols: g.cols,
                got_rows: grid.nrows(),
                got_cols: grid.ncols(),
            });
        }
    }

    let stack_normal = g0.normal();
    let mut order: Vec<(f64, usize)> = stack
        .iter()
        .enumerate()
        .map(|(i, (g, _))| ((g.ipp - g0.ipp).dot(&stack_normal), i))
        .collect();
    order.sort_by(|l, r| l.0.total_cmp(&r.0));
    for w in order.windows(2) {
        if w[1].0 - w[0].0 < 1e-9 {
            return Err(GeometryError::DuplicateStackPosition(w[0].1, w[1].1));
        }
    }
    let offsets: Vec<f64> = order.iter().map(|o| o.0).collect();
    let n = offsets.len();
    let fractional_index = |o: f64| -> f64 {
        if n == 1 {
            return (o - offsets[0]) / g0.slice_thickness;
        }
        if o <= offsets[0] {
            return (o - offsets[0]) / (offsets[1] - offsets[0]);
        }
        if o >= offsets[n - 1] {
            return (n - 1) as f64 + (o - offsets[n - 1]) / (offsets[n - 1] - offsets[n - 2]);
        }
        let k = offsets.partition_point(|&s| s <= o) - 1;
        k as f64 + (o - offsets[k]) / (offsets[k + 1] - offsets[k])
    };

    let centroid = stack.iter().map(|(g, _)| g.center()).sum::<Vec3>() / stack.len() as f64;
    let n_t = target.normal();
    let center = centroid - n_t * (centroid - target.p).dot(&n_t);
    let (e1, e2) = plane_basis(&n_t);
    let half_c = (out_cols as f64 - 1.0) / 2.0;
    let half_r = (out_rows as f64 - 1.0) / 2.0;

    let out = Array2::from_shape_fn((out_rows, out_cols), |(i, j)| {
        let q = center
            + e1 * ((j as f64 - half_c) * out_spacing)
            + e2 * ((i as f64 - half_r) * out_spacing);
        let k = fractional_index((q - g0.ipp).dot(&stack_normal)).round();
        if !(0.0..=(n - 1) as f64).contains(&k) {
            return 0.0;
        }
        let (g, grid) = &stack[order[k as usize].1];
        let (x, y) = g.rcs_to_pixel(&q);
        let (x, y) = (x.round(), y.round());
        let (w, h) = g.extent();
        if (0.0..=w).contains(&x) && (0.0..=h).contains(&y) {
            grid[[y as usize, x as usize]]
        } else {
            0.0
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn axial(spacing: f64, rows: usize, cols: usize) -> SliceGeometry {
        SliceGeometry::new(
            Vec3::zeros(),
            Vec3::x(),
            Vec3::y(),
            spacing,
            spacing,
            rows,
            cols,
            1.0,
        )
        .unwrap()
    }

    fn slice_with(row_dir: Vec3, col_dir: Vec3) -> SliceGeometry {
        SliceGeometry::new(Vec3::zeros(), row_dir, col_dir, 1.0, 1.0, 8, 8, 1.0).unwrap()
    }

    #[test]
    fn pixel_to_rcs_examples() {
        let g = axial(1.0, 10, 10);
        assert_eq!(pixel_to_rcs(&g, 0.0, 0.0), Vec3::zeros());
        assert_eq!(pixel_to_rcs(&g, 10.0, 5.0), Vec3::new(10.0, 5.0, 0.0));

        let g = SliceGeometry::new(
            Vec3::new(3.0, -2.0, 7.0),
            Vec3::y(),
            -Vec3::z(),
            2.0,
            2.0,
            4,
            4,
            1.0,
        )
        .unwrap();
        assert_eq!(pixel_to_rcs(&g, 1.0, 1.0), Vec3::new(3.0, 0.0, 5.0));
    }

    #[test]
    fn anisotropic_spacing_maps_x_to_column_spacing() {
        let g =
            SliceGeometry::new(Vec3::zeros(), Vec3::x(), Vec3::y(), 3.0, 0.5, 4, 4, 1.0).unwrap();
        assert_eq!(g.pixel_to_rcs(2.0, 0.0), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(g.pixel_to_rcs(0.0, 2.0), Vec3::new(0.0, 6.0, 0.0));
    }

    #[test]
    fn slice_validation_names_field() {
        let err = SliceGeometry::new(
            Vec3::zeros(),
            Vec3::new(1.0, 0.1, 0.0),
            Vec3::y(),
            1.0,
            1.0,
            4,
            4,
            1.0,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            GeometryError::InvalidSlice {
                field: "row_dir",
                ..
            }
        ));

        let skew = Vec3::new(0.01, 1.0, 0.0).normalize();
        let err =
            SliceGeometry::new(Vec3::zeros(), Vec3::x(), skew, 1.0, 1.0, 4, 4, 1.0).unwrap_err();
        assert!(matches!(
            err,
            GeometryError::InvalidSlice {
                field: "col_dir",
                ..
            }
        ));

        let err = SliceGeometry::new(Vec3::zeros(), Vec3::x(), Vec3::y(), 1.0, 1.0, 1, 4, 1.0)
            .unwrap_err();
        assert!(matches!(
            err,
            GeometryError::InvalidSlice { field: "rows", .. }
        ));
        let err = SliceGeometry::new(Vec3::zeros(), Vec3::x(), Vec3::y(), 1.0, 0.0, 4, 4, 1.0)
            .unwrap_err();
        assert!(matches!(
            err,
            GeometryError::InvalidSlice {
                field: "pixel_spacing_col",
                ..
            }
        ));
    }

    #[test]
    fn slice_plane_examples() {
        let pl = slice_plane(&slice_with(Vec3::x(), Vec3::y()));
        assert_eq!((pl.theta, pl.phi), (0.0, 0.0));

        let pl = slice_plane(&slice_with(Vec3::y(), -Vec3::z()));
        assert_abs_diff_eq!(pl.theta, 90.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pl.phi, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pl.normal(), Vec3::x(), epsilon = 1e-12);

        let h = std::f64::consts::FRAC_1_SQRT_2;
        let pl = slice_plane(&slice_with(Vec3::x(), Vec3::new(0.0, h, -h)));
        assert_abs_diff_eq!(pl.theta, 45.0, epsilon = 1e-9);
        assert_abs_diff_eq!(pl.phi, 90.0, epsilon = 1e-9);
        assert_abs_diff_eq!(pl.normal(), Vec3::new(0.0, h, h), epsilon = 1e-12);
    }

    #[test]
    fn plane_normal_sign_is_irrelevant() {
        let n = Vec3::new(0.3, -0.5, 0.8).normalize();
        let a = Plane3D::from_normal(Vec3::zeros(), n).unwrap();
        let b = Plane3D::from_normal(Vec3::zeros(), -n).unwrap();
        assert_eq!(a, b);
        let down = Plane3D::from_normal(Vec3::zeros(), -Vec3::z()).unwrap();
        assert_eq!((down.theta, down.phi), (0.0, 0.0));
        assert!(Plane3D::new(Vec3::zeros(), 180.0, 0.0).is_err());
        assert_eq!(Plane3D::new(Vec3::zeros(), 0.0, 33.0).unwrap().phi, 0.0);
    }

    #[test]
    fn intersect_coordinate_planes() {
        let z0 = Plane3D::new(Vec3::zeros(), 0.0, 0.0).unwrap();
        let x0 = Plane3D::new(Vec3::zeros(), 90.0, 0.0).unwrap();
        let l = intersect_planes(&z0, &x0).unwrap();
        assert_abs_diff_eq!(l.point, Vec3::zeros(), epsilon = 1e-12);
        assert_abs_diff_eq!(l.direction.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.direction.y.abs(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.direction.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn intersect_parallel_planes_fails() {
        let a = Plane3D::new(Vec3::zeros(), 0.0, 0.0).unwrap();
        let b = Plane3D::new(Vec3::new(0.0, 0.0, 5.0), 0.0, 0.0).unwrap();
        assert_eq!(intersect_planes(&a, &b), Err(GeometryError::ParallelPlanes));
    }

    #[test]
    fn intersect_oblique_plane_with_axial() {
        // x + y = 1 and z = 0 meet along the line through (0.5, 0.5, 0)
        // with direction (-1, 1, 0) / sqrt(2).
        let diag = Plane3D::new(Vec3::new(1.0, 0.0, 0.0), 90.0, 45.0).unwrap();
        let z0 = Plane3D::new(Vec3::zeros(), 0.0, 0.0).unwrap();
        let l = intersect_planes(&diag, &z0).unwrap();
        let expected_dir = Vec3::new(-1.0, 1.0, 0.0).normalize();
        assert_abs_diff_eq!(
            l.direction.cross(&expected_dir).norm(),
            0.0,
            epsilon = 1e-12
        );
        let off = Vec3::new(0.5, 0.5, 0.0) - l.point;
        assert_abs_diff_eq!(off.cross(&l.direction).norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(diag.signed_distance(&l.point), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z0.signed_distance(&l.point), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn project_examples() {
        let x5 = Plane3D::new(Vec3::new(5.0, 0.0, 0.0), 90.0, 0.0).unwrap();
        let l = project_line_to_view(&axial(1.0, 16, 16), &x5).unwrap();
        assert_abs_diff_eq!(l.a, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.b, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.c, -5.0, epsilon = 1e-12);

        let l = project_line_to_view(&axial(2.0, 16, 16), &x5).unwrap();
        assert_abs_diff_eq!(l.a, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.b, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.c, -2.5, epsilon = 1e-12);

        let z3 = Plane3D::new(Vec3::new(0.0, 0.0, 3.0), 0.0, 0.0).unwrap();
        assert_eq!(
            project_line_to_view(&axial(1.0, 16, 16), &z3),
            Err(GeometryError::ParallelPlanes)
        );
    }

    #[test]
    fn canonical_line_is_idempotent_and_scale_free() {
        let l = Line2D::new(-3.0, 4.0, 10.0).unwrap();
        let c = l.canonical();
        assert_eq!(c.canonical(), c);
        assert_abs_diff_eq!(c.a, 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(c.b, -0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(c.c, -2.0, epsilon = 1e-15);
        let scaled = Line2D::new(-6.0, 8.0, 20.0).unwrap();
        assert_abs_diff_eq!(scaled.coefficient_distance(&l), 0.0, epsilon = 1e-15);
        let horizontal = Line2D::new(0.0, -2.0, 4.0).unwrap().canonical();
        assert_eq!((horizontal.a, horizontal.b, horizontal.c), (0.0, 1.0, -2.0));
        assert!(Line2D::new(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn clip_vertical_line() {
        let g = axial(1.0, 10, 10);
        let s = clip_and_sample(&g, &Line2D::new(1.0, 0.0, -5.0).unwrap());
        let expected: Vec<_> = (0..10).map(|y| (5.0, y as f64)).collect();
        assert_eq!(s.points(), expected.as_slice());
    }

    #[test]
    fn clip_miss_is_empty() {
        let g = axial(1.0, 10, 10);
        assert!(clip_and_sample(&g, &Line2D::new(1.0, 0.0, 3.0).unwrap()).is_empty());
    }

    #[test]
    fn clip_diagonal() {
        // Arc length 9*sqrt(2) = 12.73 gives samples at 0..=12.
        let g = axial(1.0, 10, 10);
        let s = clip_and_sample(&g, &Line2D::new(1.0, -1.0, 0.0).unwrap());
        assert_eq!(s.len(), 13);
        assert_abs_diff_eq!(s.0[0].0, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.0[0].1, 0.0, epsilon = 1e-12);
        for w in s.0.windows(2) {
            let d = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
            assert_abs_diff_eq!(d, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn clip_corner_touch_is_single_sample() {
        let g = axial(1.0, 10, 10);
        let s = clip_and_sample(&g, &Line2D::new(1.0, 1.0, 0.0).unwrap());
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn plane_basis_is_right_handed() {
        for n in [Vec3::z(), Vec3::x(), Vec3::new(0.2, -0.7, 0.4).normalize()] {
            let (e1, e2) = plane_basis(&n);
            assert_abs_diff_eq!(e1.norm(), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(e1.dot(&n), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(e1.cross(&e2), n, epsilon = 1e-12);
        }
        let (e1, e2) = plane_basis(&Vec3::z());
        assert_eq!((e1, e2), (Vec3::x(), Vec3::y()));
    }

    fn stack_of(values: &[f64], z_step: f64) -> Vec<(SliceGeometry, Array2<f64>)> {
        values
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let mut g = axial(1.0, 10, 10);
                g.ipp = Vec3::new(0.0, 0.0, k as f64 * z_step);
                g.slice_thickness = z_step;
                let grid = Array2::from_shape_fn((10, 10), |(i, j)| v + (i * 10 + j) as f64);
                (g, grid)
            })
            .collect()
    }

    #[test]
    fn resample_identity() {
        let stack = stack_of(&[0.0, 1000.0, 2000.0], 5.0);
        let target = slice_plane(&stack[0].0);
        let out = resample_plane_from_stack(&stack, &target, 10, 10, 1.0).unwrap();
        assert_eq!(out, stack[0].1);
    }

    #[test]
    fn resample_outside_volume_is_zero() {
        let stack = stack_of(&[1.0, 2.0], 5.0);
        let target = Plane3D::new(Vec3::new(0.0, 0.0, 100.0), 0.0, 0.0).unwrap();
        let out = resample_plane_from_stack(&stack, &target, 8, 8, 1.0).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resample_halfway_rounds_away_from_zero() {
        let mut stack = stack_of(&[0.0, 0.0], 2.0);
        stack[0].1.fill(0.0);
        stack[1].1.fill(10.0);
        let target = Plane3D::new(Vec3::new(0.0, 0.0, 1.0), 0.0, 0.0).unwrap();
        let out = resample_plane_from_stack(&stack, &target, 10, 10, 1.0).unwrap();
        assert!(out.iter().all(|&v| v == 10.0));
    }

    #[test]
    fn resample_rejects_bad_stacks() {
        let target = Plane3D::new(Vec3::zeros(), 0.0, 0.0).unwrap();
        assert_eq!(
            resample_plane_from_stack(&[], &target, 4, 4, 1.0),
            Err(GeometryError::EmptyStack)
        );
        let mut stack = stack_of(&[0.0, 1.0], 2.0);
        stack[1].0 = slice_with(Vec3::y(), Vec3::z());
        assert_eq!(
            resample_plane_from_stack(&stack, &target, 4, 4, 1.0),
            Err(GeometryError::NonParallelStack(1))
        );
    }

    fn unit() -> impl Strategy<Value = Vec3> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(x, y, z)| x * x + y * y + z * z > 0.01)
            .prop_map(|(x, y, z)| Vec3::new(x, y, z).normalize())
    }

    fn slice() -> impl Strategy<Value = SliceGeometry> {
        (
            unit(),
            unit(),
            (-200.0..200.0f64, -200.0..200.0f64, -200.0..200.0f64),
            0.3..3.0f64,
            0.3..3.0f64,
            4usize..300,
            4usize..300,
        )
            .prop_filter("non-collinear", |(a, b, ..)| a.cross(b).norm() > 0.1)
            .prop_map(|(a, b, (x, y, z), sr, sc, rows, cols)| {
                let col = (b - a * a.dot(&b)).normalize();
                SliceGeometry::new(Vec3::new(x, y, z), a, col, sr, sc, rows, cols, 2.0).unwrap()
            })
    }

    proptest! {
        #[test]
        fn pixel_to_rcs_is_affine(g in slice(), x1 in -50.0..50.0f64, y1 in -50.0..50.0f64,
                                  x2 in -50.0..50.0f64, y2 in -50.0..50.0f64) {
            let o = g.pixel_to_rcs(0.0, 0.0);
            let sum = g.pixel_to_rcs(x1 + x2, y1 + y2) - o;
            let parts = (g.pixel_to_rcs(x1, y1) - o) + (g.pixel_to_rcs(x2, y2) - o);
            prop_assert!((sum - parts).norm() < 1e-12 * (1.0 + sum.norm()));
        }

        #[test]
        fn slice_plane_contains_pixels(g in slice(), x in -10.0..400.0f64, y in -10.0..400.0f64) {
            let pl = slice_plane(&g);
            prop_assert!(pl.signed_distance(&g.pixel_to_rcs(x, y)).abs() < 1e-6);
        }

        #[test]
        fn intersection_lies_on_both_planes(n1 in unit(), n2 in unit(),
                                            p1 in (-100.0..100.0f64, -100.0..100.0f64, -100.0..100.0f64),
                                            p2 in (-100.0..100.0f64, -100.0..100.0f64, -100.0..100.0f64)) {
            prop_assume!(n1.cross(&n2).norm() > 1e-3);
            let a = Plane3D::from_normal(Vec3::new(p1.0, p1.1, p1.2), n1).unwrap();
            let b = Plane3D::from_normal(Vec3::new(p2.0, p2.1, p2.2), n2).unwrap();
            let l = intersect_planes(&a, &b).unwrap();
            prop_assert!(a.signed_distance(&l.point).abs() < 1e-6);
            prop_assert!(b.signed_distance(&l.point).abs() < 1e-6);
            prop_assert!(l.direction.dot(&a.normal()).abs() < 1e-9);
            prop_assert!(l.direction.dot(&b.normal()).abs() < 1e-9);
        }

        #[test]
        fn canonical_is_idempotent(a in -10.0..10.0f64, b in -10.0..10.0f64, c in -500.0..500.0f64) {
            prop_assume!(a.abs() + b.abs() > 1e-6);
            let once = Line2D::new(a, b, c).unwrap().canonical();
            prop_assert_eq!(once.canonical(), once);
        }

        #[test]
        fn samples_stay_inside_and_unit_spaced(g in slice(), a in -1.0..1.0f64, b in -1.0..1.0f64,
                                               px in 0.0..1.0f64, py in 0.0..1.0f64) {
            prop_assume!(a.abs() + b.abs() > 1e-3);
            let (w, h) = g.extent();
            let (x0, y0) = (px * w, py * h);
            let line = Line2D::new(a, b, -(a * x0 + b * y0)).unwrap();
            let s = clip_and_sample(&g, &line);
            prop_assert!(!s.is_empty());
            for &(x, y) in s.points() {
                prop_assert!((0.0..=w).contains(&x) && (0.0..=h).contains(&y));
                prop_assert!(line.distance(x, y) < 1e-6);
            }
            for p in s.0.windows(2) {
                let d = (p[1].0 - p[0].0).hypot(p[1].1 - p[0].1);
                prop_assert!((d - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn from_normal_roundtrips_direction(n in unit()) {
            let pl = Plane3D::from_normal(Vec3::zeros(), n).unwrap();
            prop_assert!((0.0..180.0).contains(&pl.theta) && (0.0..180.0).contains(&pl.phi));
            prop_assert!((pl.normal().norm() - 1.0).abs() < 1e-9);
            prop_assert!(pl.normal().cross(&n).norm() < 1e-9);
        }
    }
}
