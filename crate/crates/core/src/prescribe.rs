//! Plane prescription from per-view heatmaps.
//!
//! A candidate plane scores the raw sum of heatmap responses sampled along
//! its intersection with every source view. Multi-view and parallel-stack
//! prescriptions search `(anchor, theta, phi)` with the anchor restricted to
//! a seed segment; single-view prescription searches lines in the one source
//! image and returns the plane through the best line orthogonal to that view.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    clip_line, lift_line_orthogonal, line_in_view, project_line_to_view, slice_plane, Line2D,
    Plane3D, SliceGeometry, Vec3,
};
use crate::heatmap::Heatmap;
use crate::pyramid::{candidate_count, pyramid_wrapped, scan, AxisScan, LevelBest, PYRAMID_STEPS};

/// Largest candidate count [`brute_force_plane`] will evaluate.
pub const BRUTE_FORCE_LIMIT: usize = 10_000_000;
/// Polar and azimuthal angles are searched over `0..=MAX_ANGLE` degrees.
pub const MAX_ANGLE: i64 = 179;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrescribeError {
    #[error("invalid source view set: {0}")]
    InvalidViewSet(String),
    #[error("no pair of source views intersects inside the reference image")]
    NoIntersectingPair,
    #[error("seed segment has zero length")]
    DegenerateSeed,
    #[error("{count} candidates exceed the brute-force limit of {limit}")]
    InstanceTooLarge { count: usize, limit: usize },
    #[error("scan steps must be positive")]
    InvalidStep,
    #[error("{0} prescription does not use a seed segment")]
    ModeMismatch(PrescriptionMode),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrescriptionMode {
    MultiView,
    ParallelStack,
    SingleView,
}

impl std::fmt::Display for PrescriptionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PrescriptionMode::MultiView => "multi-view",
            PrescriptionMode::ParallelStack => "parallel-stack",
            PrescriptionMode::SingleView => "single-view",
        })
    }
}

/// All source slices of one target plane, with their heatmaps.
#[derive(Debug, Clone)]
pub struct SourceViewSet {
    views: Vec<Heatmap>,
    mode: PrescriptionMode,
}

impl SourceViewSet {
    pub fn new(views: Vec<Heatmap>, mode: PrescriptionMode) -> Result<Self, PrescribeError> {
        let invalid = |m: &str| Err(PrescribeError::InvalidViewSet(m.to_string()));
        match mode {
            PrescriptionMode::SingleView if views.len() != 1 => {
                return invalid("single-view prescription needs exactly one source slice")
            }
            PrescriptionMode::ParallelStack => {
                let Some(first) = views.first() else {
                    return invalid("parallel-stack prescription needs at least one slice");
                };
                if views
                    .iter()
                    .any(|h| !h.geometry().is_parallel_to(first.geometry()))
                {
                    return invalid("parallel-stack source slices must be mutually parallel");
                }
            }
            PrescriptionMode::MultiView => {
                if views.len() < 2 {
                    return invalid("multi-view prescription needs at least two source slices");
                }
                if first_intersecting_pair(&views).is_none() {
                    return Err(PrescribeError::NoIntersectingPair);
                }
            }
            _ => {}
        }
        Ok(Self { views, mode })
    }

    pub fn views(&self) -> &[Heatmap] {
        &self.views
    }

    pub fn mode(&self) -> PrescriptionMode {
        self.mode
    }
}

fn first_intersecting_pair(views: &[Heatmap]) -> Option<(usize, usize)> {
    (0..views.len())
        .flat_map(|i| ((i + 1)..views.len()).map(move |j| (i, j)))
        .find(|&(i, j)| !views[i].geometry().is_parallel_to(views[j].geometry()))
}

/// Segment in the RCS along which the plane anchor is searched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedSegment {
    pub start: Vec3,
    pub end: Vec3,
    /// Arc length of one anchor step at the finest level, mm.
    pub step_base: f64,
}

impl SeedSegment {
    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    /// Number of anchor samples at `step_base` spacing, both ends counted.
    pub fn sample_count(&self) -> Result<usize, PrescribeError> {
        let len = self.length();
        if !(len > 1e-9 && self.step_base > 0.0 && len.is_finite()) {
            return Err(PrescribeError::DegenerateSeed);
        }
        Ok((len / self.step_base + 1e-9).floor() as usize + 1)
    }

    pub fn sample(&self, k: usize) -> Vec3 {
        let dir = (self.end - self.start) / self.length();
        self.start + dir * (k as f64 * self.step_base)
    }
}

fn view_score(h: &Heatmap, n: &Vec3, p: &Vec3) -> f64 {
    match line_in_view(h.geometry(), n, p) {
        Ok(line) => clip_line(h.geometry(), &line).map_or(0.0, |seg| h.segment_sum(&seg)),
        Err(_) => 0.0,
    }
}

/// Response of each source view along its intersection with `plane`.
/// Parallel views and empty intersections contribute 0.
pub fn per_view_scores(views: &SourceViewSet, plane: &Plane3D) -> Vec<f64> {
    let n = plane.normal();
    views
        .views
        .iter()
        .map(|h| view_score(h, &n, &plane.p))
        .collect()
}

/// Collective response of `plane` over all source views.
pub fn aggregate_score(views: &SourceViewSet, plane: &Plane3D) -> f64 {
    let n = plane.normal();
    views
        .views
        .iter()
        .map(|h| view_score(h, &n, &plane.p))
        .sum()
}

/// The anchor search segment for multi-view and parallel-stack modes.
///
/// Multi-view: the intersection of the first non-parallel pair `(i, j)`,
/// `i < j` in source order, clipped to view `i`'s image. Parallel-stack:
/// the middle row `floor((rows-1)/2)` of the first slice. The step base is
/// the pixel spacing of the reference view.
pub fn seed_segment(views: &SourceViewSet) -> Result<SeedSegment, PrescribeError> {
    match views.mode {
        PrescriptionMode::ParallelStack => {
            let g = views.views[0].geometry();
            let row = ((g.rows - 1) / 2) as f64;
            Ok(SeedSegment {
                start: g.pixel_to_rcs(0.0, row),
                end: g.pixel_to_rcs((g.cols - 1) as f64, row),
                step_base: g.pixel_spacing_col,
            })
        }
        PrescriptionMode::MultiView => {
            let v = &views.views;
            for i in 0..v.len() {
                for j in (i + 1)..v.len() {
                    let (gi, gj) = (v[i].geometry(), v[j].geometry());
                    if gi.is_parallel_to(gj) {
                        continue;
                    }
                    let Ok(line) = project_line_to_view(gi, &slice_plane(gj)) else {
                        continue;
                    };
                    match clip_line(gi, &line) {
                        Some(seg) if seg.length > 0.0 => {
                            let (x0, y0) = seg.start;
                            let (x1, y1) = seg.end();
                            return Ok(SeedSegment {
                                start: gi.pixel_to_rcs(x0, y0),
                                end: gi.pixel_to_rcs(x1, y1),
                                step_base: gi.pixel_spacing_row.min(gi.pixel_spacing_col),
                            });
                        }
                        _ => continue,
                    }
                }
            }
            Err(PrescribeError::NoIntersectingPair)
        }
        PrescriptionMode::SingleView => Err(PrescribeError::ModeMismatch(views.mode)),
    }
}

/// Best candidate after one search level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelTrace {
    pub step: i64,
    pub p_index: usize,
    pub theta: i64,
    pub phi: i64,
    pub anchor: Vec3,
    pub score: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub plane: Plane3D,
    pub score: f64,
    pub p_index: usize,
    pub per_view_scores: Vec<f64>,
    pub trace: Vec<LevelTrace>,
}

impl SearchResult {
    pub fn evaluations(&self) -> usize {
        self.trace.iter().map(|l| l.evaluations).sum()
    }
}

fn candidate_plane(seed: &SeedSegment, p: i64, theta: i64, phi: i64) -> Plane3D {
    Plane3D::new(seed.sample(p as usize), theta as f64, phi as f64)
        .expect("lattice angles lie in [0, 180)")
}

fn finish(views: &SourceViewSet, seed: &SeedSegment, levels: &[LevelBest<3>]) -> SearchResult {
    let last = levels.last().expect("at least one level");
    let [p, theta, phi] = last.point;
    let plane = candidate_plane(seed, p, theta, phi);
    let trace = levels
        .iter()
        .map(|l| LevelTrace {
            step: l.step,
            p_index: l.point[0] as usize,
            theta: l.point[1],
            phi: l.point[2],
            anchor: seed.sample(l.point[0] as usize),
            score: l.score,
            evaluations: l.evaluations,
        })
        .collect();
    SearchResult {
        plane,
        score: last.score,
        p_index: p as usize,
        per_view_scores: per_view_scores(views, &plane),
        trace,
    }
}

/// Maps lattice angles pushed past `[0, 179]` back into it. For an
/// unoriented normal, `theta` has period 180 and `(theta, phi + 180)` is the
/// plane `(180 - theta, phi)`.
fn wrap_angles([p, theta, phi]: [i64; 3]) -> [i64; 3] {
    let period = MAX_ANGLE + 1;
    let (theta, phi) = if (0..period).contains(&phi) {
        (theta, phi)
    } else {
        (period - theta, phi.rem_euclid(period))
    };
    [p, theta.rem_euclid(period), phi]
}

/// Three-level coarse-to-fine search (steps 15, 5, 1 in anchor samples and
/// degrees) maximizing [`aggregate_score`].
///
/// Anchor windows are clamped to the seed. Angle windows wrap across the
/// seams of the `(theta, phi)` chart, so a normal near `phi = 179` is
/// reachable from a coarse incumbent near `phi = 0`.
pub fn grid_search_plane(
    views: &SourceViewSet,
    seed: &SeedSegment,
) -> Result<SearchResult, PrescribeError> {
    let n_p = seed.sample_count()? as i64;
    let eval = |[p, t, f]: [i64; 3]| aggregate_score(views, &candidate_plane(seed, p, t, f));
    let levels = pyramid_wrapped(
        &[(0, n_p - 1), (0, MAX_ANGLE), (0, MAX_ANGLE)],
        &[false, true, true],
        &wrap_angles,
        &PYRAMID_STEPS,
        &eval,
    );
    Ok(finish(views, seed, &levels))
}

/// Single-level exhaustive scan with the same lattice origin and tie-break
/// as [`grid_search_plane`]. `p_step` counts anchor samples.
pub fn brute_force_plane(
    views: &SourceViewSet,
    seed: &SeedSegment,
    p_step: usize,
    angle_step: usize,
) -> Result<SearchResult, PrescribeError> {
    if p_step == 0 || angle_step == 0 {
        return Err(PrescribeError::InvalidStep);
    }
    let n_p = seed.sample_count()? as i64;
    let angles = AxisScan {
        lo: 0,
        hi: MAX_ANGLE,
        step: angle_step as i64,
    };
    let axes = [
        AxisScan {
            lo: 0,
            hi: n_p - 1,
            step: p_step as i64,
        },
        angles,
        angles,
    ];
    let count = candidate_count(&axes);
    if count > BRUTE_FORCE_LIMIT {
        return Err(PrescribeError::InstanceTooLarge {
            count,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let eval = |[p, t, f]: [i64; 3]| aggregate_score(views, &candidate_plane(seed, p, t, f));
    let best = scan(&axes, &eval).expect("non-empty lattice");
    let level = LevelBest {
        step: 1,
        point: best.point,
        score: best.score,
        evaluations: best.evaluations,
    };
    Ok(finish(views, seed, &[level]))
}

/// Best line found in a single source view and the plane through it.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchResult {
    pub line: Line2D,
    pub plane: Plane3D,
    pub score: f64,
    /// Lattice index of the signed offset, see [`LineLattice`].
    pub offset_index: usize,
    /// Foot of the perpendicular from the image center, pixels.
    pub anchor: (f64, f64),
    pub theta: i64,
    pub trace: Vec<LevelBest<2>>,
}

/// Candidate lines of one image, indexed by `(k, theta)`.
///
/// Line `(k, theta)` has direction angle `theta` and passes through the
/// point `center + (k - half) * (sin theta, -cos theta)`, the foot of the
/// perpendicular from the image center. `half` is the half-diagonal rounded
/// up, so `k` in `0..=2 * half` reaches every line that meets the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineLattice {
    pub center: (f64, f64),
    pub half: i64,
}

impl LineLattice {
    pub fn new(g: &SliceGeometry) -> Self {
        let (w, h) = g.extent();
        Self {
            center: (w / 2.0, h / 2.0),
            half: (w / 2.0).hypot(h / 2.0).ceil() as i64,
        }
    }

    pub fn offsets(&self) -> i64 {
        2 * self.half + 1
    }

    pub fn anchor(&self, k: i64, theta: i64) -> (f64, f64) {
        let (s, c) = (theta as f64).to_radians().sin_cos();
        let d = (k - self.half) as f64;
        (self.center.0 + d * s, self.center.1 - d * c)
    }

    pub fn line(&self, k: i64, theta: i64) -> Line2D {
        let (x, y) = self.anchor(k, theta);
        Line2D::through_point(x, y, theta as f64)
    }

    /// Turning a line by 180 degrees flips its normal, so the offset index
    /// mirrors.
    fn wrap(&self, [k, theta]: [i64; 2]) -> [i64; 2] {
        let period = MAX_ANGLE + 1;
        if (0..period).contains(&theta) {
            [k, theta]
        } else {
            [2 * self.half - k, theta.rem_euclid(period)]
        }
    }
}

pub fn line_response(h: &Heatmap, line: &Line2D) -> f64 {
    clip_line(h.geometry(), line).map_or(0.0, |seg| h.segment_sum(&seg))
}

/// Searches `(offset, direction angle)` over [`LineLattice`] with the 15/5/1
/// pyramid (pixels and degrees) for the line of greatest summed response,
/// then lifts it to the plane orthogonal to the source view. Angle windows
/// wrap around 0/180 degrees.
pub fn line_search_single_view(h: &Heatmap) -> LineSearchResult {
    let g = h.geometry();
    let lattice = LineLattice::new(g);
    let eval = |[k, t]: [i64; 2]| line_response(h, &lattice.line(k, t));
    let trace = pyramid_wrapped(
        &[(0, lattice.offsets() - 1), (0, MAX_ANGLE)],
        &[false, true],
        &|p| lattice.wrap(p),
        &PYRAMID_STEPS,
        &eval,
    );
    let last = *trace.last().expect("three levels");
    let [k, theta] = last.point;
    let line = lattice.line(k, theta);
    LineSearchResult {
        line,
        plane: lift_line_orthogonal(g, &line),
        score: last.score,
        offset_index: k as usize,
        anchor: lattice.anchor(k, theta),
        theta,
        trace,
    }
}

/// Outcome of dispatching a view set to its search mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Prescription {
    pub plane: Plane3D,
    pub score: f64,
    /// Anchor step at the finest level, mm.
    pub step_base: f64,
}

pub fn prescribe(views: &SourceViewSet) -> Result<Prescription, PrescribeError> {
    match views.mode {
        PrescriptionMode::SingleView => {
            let r = line_search_single_view(&views.views[0]);
            let g = views.views[0].geometry();
            Ok(Prescription {
                plane: r.plane,
                score: r.score,
                step_base: g.pixel_spacing_row.min(g.pixel_spacing_col),
            })
        }
        _ => {
            let seed = seed_segment(views)?;
            let r = grid_search_plane(views, &seed)?;
            Ok(Prescription {
                plane: r.plane,
                score: r.score,
                step_base: seed.step_base,
            })
        }
    }
}
