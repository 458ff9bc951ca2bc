//! Synthetic studies with known ground-truth planes.
//!
//! The topology follows a clinical localizer protocol: an axial stack, from
//! which the pseudo two-chamber localizer (p2C) is planned; the pseudo
//! four-chamber (p4C) and pseudo short-axis (pSA) localizers planned from
//! p2C; and the standard 2C, 3C, 4C and short-axis (SAX) views planned from
//! the localizers. Every prescription mode is therefore exercised.
//!
//! Geometry and noise draw from separate ChaCha streams of the same seed, so
//! studies that differ only in noise level share their geometry.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Rotation3, Unit};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::{
    clip_line, project_line_to_view, slice_plane, GeometryError, Plane3D, SliceGeometry, Vec3,
};
use crate::heatmap::{Heatmap, SigmaSpec};
use crate::io::{
    heatmap_path, save_manifest, slice_file_name, HeatFile, PlaneRecord, SliceEntry, StudyError,
    StudyManifest, TargetEntry, ViewEntry,
};
use crate::pipeline::render_target_file;
use crate::prescribe::{seed_segment, PrescribeError, PrescriptionMode, SourceViewSet};

/// Ground-truth angles are kept this far from the ends of `[0, 180)`, where
/// the angle chart folds and equal planes get distant lattice points.
pub const ANGLE_MARGIN: f64 = 3.0;
const MAX_ATTEMPTS: usize = 200;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("no feasible study after {attempts} attempts: {last}")]
    InfeasibleSpec { attempts: usize, last: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error(transparent)]
    Prescribe(#[from] PrescribeError),
}

/// Sampling of one view. Single-slice views use `slices = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewTemplate {
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
    pub thickness: f64,
    pub slices: usize,
    /// Center-to-center distance between slices, mm.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub seed: u64,
    /// Standard deviation of the additive heatmap noise, in `[0, 0.2]`.
    pub noise: f64,
    pub sigma: SigmaSpec,
    pub axial: ViewTemplate,
    pub localizer: ViewTemplate,
    pub short_axis: ViewTemplate,
    pub standard: ViewTemplate,
    /// Largest tilt of a standard view away from its nominal orientation.
    pub max_tilt_deg: f64,
}

/// Target width of phantom heatmaps relative to slice thickness. Wider than
/// the training default so the 15 degree coarse search level still sees the
/// peak.
pub const PHANTOM_SIGMA_ALPHA: f64 = 1.25;

impl PhantomSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            noise: 0.0,
            sigma: SigmaSpec {
                alpha: PHANTOM_SIGMA_ALPHA,
            },
            axial: ViewTemplate {
                rows: 200,
                cols: 200,
                spacing: 1.6,
                thickness: 8.0,
                slices: 20,
                gap: 8.0,
            },
            localizer: ViewTemplate {
                rows: 240,
                cols: 240,
                spacing: 1.2,
                thickness: 8.0,
                slices: 1,
                gap: 0.0,
            },
            short_axis: ViewTemplate {
                rows: 240,
                cols: 240,
                spacing: 1.2,
                thickness: 8.0,
                slices: 3,
                gap: 15.0,
            },
            standard: ViewTemplate {
                rows: 160,
                cols: 160,
                spacing: 1.5,
                thickness: 6.0,
                slices: 1,
                gap: 0.0,
            },
            max_tilt_deg: 10.0,
        }
    }

    /// Coarse images, cheap enough for exhaustive searches.
    pub fn small(seed: u64) -> Self {
        Self {
            axial: ViewTemplate {
                rows: 40,
                cols: 40,
                spacing: 6.0,
                thickness: 10.0,
                slices: 5,
                gap: 10.0,
            },
            localizer: ViewTemplate {
                rows: 48,
                cols: 48,
                spacing: 5.0,
                thickness: 10.0,
                slices: 1,
                gap: 0.0,
            },
            short_axis: ViewTemplate {
                rows: 48,
                cols: 48,
                spacing: 5.0,
                thickness: 10.0,
                slices: 3,
                gap: 15.0,
            },
            standard: ViewTemplate {
                rows: 48,
                cols: 48,
                spacing: 5.0,
                thickness: 8.0,
                slices: 1,
                gap: 0.0,
            },
            ..Self::new(seed)
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_sigma(mut self, sigma: SigmaSpec) -> Self {
        self.sigma = sigma;
        self
    }

    fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::InvalidSpec(m));
        if !(0.0..=0.2).contains(&self.noise) {
            return bad(format!("noise {} outside [0, 0.2]", self.noise));
        }
        if !(self.sigma.alpha.is_finite() && self.sigma.alpha > 0.0) {
            return bad(format!("sigma alpha {} must be positive", self.sigma.alpha));
        }
        if !(0.0..=45.0).contains(&self.max_tilt_deg) {
            return bad(format!("max tilt {} outside [0, 45]", self.max_tilt_deg));
        }
        for (name, t, single) in [
            ("axial", &self.axial, false),
            ("localizer", &self.localizer, true),
            ("short_axis", &self.short_axis, false),
            ("standard", &self.standard, true),
        ] {
            if t.rows < 2 || t.cols < 2 || t.slices == 0 {
                return bad(format!("{name}: needs at least 2x2 pixels and one slice"));
            }
            if !(t.spacing > 0.0 && t.thickness > 0.0 && t.gap >= 0.0) {
                return bad(format!("{name}: spacing and thickness must be positive"));
            }
            if single && t.slices != 1 {
                return bad(format!(
                    "{name}: single-slice view, got {} slices",
                    t.slices
                ));
            }
            if t.slices > 1 && t.gap <= 0.0 {
                return bad(format!("{name}: stacked slices need a positive gap"));
            }
        }
        Ok(())
    }
}

/// Principal axes of the synthetic heart: long axis `l`, and `a`, `b`
/// spanning the short-axis plane, right-handed as `(l, a, b)`.
#[derive(Debug, Clone, Copy)]
struct HeartFrame {
    center: Vec3,
    l: Vec3,
    a: Vec3,
    b: Vec3,
}

fn rotate(v: &Vec3, axis: &Vec3, deg: f64) -> Vec3 {
    Rotation3::from_axis_angle(&Unit::new_normalize(*axis), deg.to_radians()) * v
}

fn uniform_vec(rng: &mut ChaCha8Rng, half: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-half..=half),
        rng.random_range(-half..=half),
        rng.random_range(-half..=half),
    )
}

fn heart_frame(rng: &mut ChaCha8Rng) -> HeartFrame {
    let center = uniform_vec(rng, 10.0);
    let l = (Vec3::new(0.55, -0.55, -0.62) + uniform_vec(rng, 0.1)).normalize();
    let a0 = l.cross(&Vec3::z()).normalize();
    let a = rotate(&a0, &l, rng.random_range(-25.0..=25.0));
    let b = l.cross(&a);
    HeartFrame { center, l, a, b }
}

/// Slices of a stack along `row x col`, centered on `center`.
fn stack(
    t: &ViewTemplate,
    center: Vec3,
    row: Vec3,
    col: Vec3,
) -> Result<Vec<SliceGeometry>, GeometryError> {
    let n = row.cross(&col);
    (0..t.slices)
        .map(|k| {
            let off = (k as f64 - (t.slices as f64 - 1.0) / 2.0) * t.gap;
            SliceGeometry::centered(
                center + n * off,
                row,
                col,
                t.spacing,
                t.rows,
                t.cols,
                t.thickness,
            )
        })
        .collect()
}

/// Tilts `n` by up to `max_deg` about a random axis orthogonal to it.
fn tilt(rng: &mut ChaCha8Rng, n: &Vec3, max_deg: f64) -> Vec3 {
    let spin = rng.random_range(0.0..360.0);
    let (e1, _) = crate::geometry::plane_basis(n);
    let axis = rotate(&e1, n, spin);
    rotate(n, &axis, rng.random_range(0.0..=max_deg)).normalize()
}

/// A single-slice view on a plane with normal `n` through `center`, with a
/// random in-plane rotation.
fn oblique_view(
    rng: &mut ChaCha8Rng,
    t: &ViewTemplate,
    center: Vec3,
    n: Vec3,
) -> Result<SliceGeometry, GeometryError> {
    let (e1, _) = crate::geometry::plane_basis(&n);
    let row = rotate(&e1, &n, rng.random_range(0.0..360.0));
    let col = n.cross(&row);
    SliceGeometry::centered(center, row, col, t.spacing, t.rows, t.cols, t.thickness)
}

/// Target id, source view ids and mode, in the order targets are planned.
fn protocol() -> Vec<(&'static str, Vec<&'static str>, PrescriptionMode)> {
    use PrescriptionMode::*;
    vec![
        ("p2C", vec!["axial"], ParallelStack),
        ("p4C", vec!["p2C"], SingleView),
        ("pSA", vec!["p2C"], SingleView),
        ("2C", vec!["p4C", "pSA"], MultiView),
        ("3C", vec!["p2C", "pSA", "p4C"], MultiView),
        ("4C", vec!["p2C", "pSA"], MultiView),
        ("SAX", vec!["p2C", "p4C"], MultiView),
    ]
}

/// A view id and its slices.
type ViewSlices = (&'static str, Vec<SliceGeometry>);

/// Geometry of every view, in declaration order.
fn sample_views(
    spec: &PhantomSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(HeartFrame, Vec<ViewSlices>), GeometryError> {
    let h = heart_frame(rng);
    let c = h.center;
    let axial = stack(&spec.axial, c, Vec3::x(), Vec3::y())?;

    let psi = rng.random_range(-20.0..=20.0);
    let p2c_row = rotate(&h.b, &h.a, psi);
    let p2c_col = rotate(&h.l, &h.a, psi);
    let p2c = stack(
        &spec.localizer,
        c + h.a * rng.random_range(-3.0..=3.0),
        p2c_row,
        p2c_col,
    )?;
    let p4c = stack(
        &spec.localizer,
        c + h.b * rng.random_range(-3.0..=3.0),
        h.a,
        h.l,
    )?;
    let psa = stack(
        &spec.short_axis,
        c + h.l * rng.random_range(-3.0..=3.0),
        h.a,
        h.b,
    )?;

    let three = (h.a * 0.5 + h.b * 0.75f64.sqrt()).normalize();
    let mut standard = Vec::new();
    for (id, nominal) in [("2C", h.a), ("3C", three), ("4C", h.b), ("SAX", h.l)] {
        let n = tilt(rng, &nominal, spec.max_tilt_deg);
        let center = c + uniform_vec(rng, 5.0);
        standard.push((id, vec![oblique_view(rng, &spec.standard, center, n)?]));
    }

    let mut views = vec![("axial", axial), ("p2C", p2c), ("p4C", p4c), ("pSA", psa)];
    views.extend(standard);
    Ok((h, views))
}

/// Why a sampled study cannot serve its protocol, if it cannot.
fn infeasibility(
    views: &BTreeMap<&str, Vec<SliceGeometry>>,
    truths: &BTreeMap<&str, Plane3D>,
) -> Option<String> {
    let in_range = |a: f64| (ANGLE_MARGIN..=180.0 - 1.0 - ANGLE_MARGIN).contains(&a);
    for (target, sources, mode) in protocol() {
        let truth = &truths[target];
        if !(in_range(truth.theta) && in_range(truth.phi)) {
            return Some(format!(
                "{target}: angles ({:.2}, {:.2}) too close to the lattice ends",
                truth.theta, truth.phi
            ));
        }
        let slices: Vec<&SliceGeometry> = sources.iter().flat_map(|s| &views[s]).collect();
        for g in &slices {
            let Ok(line) = project_line_to_view(g, truth) else {
                return Some(format!("{target}: parallel to a source slice"));
            };
            let long_enough = clip_line(g, &line)
                .is_some_and(|seg| seg.length >= 0.5 * g.rows.min(g.cols) as f64);
            if !long_enough {
                return Some(format!("{target}: misses or grazes a source slice"));
            }
            if mode == PrescriptionMode::SingleView {
                let (w, h) = g.extent();
                if line.distance(w / 2.0, h / 2.0) > 0.25 * w.min(h) {
                    return Some(format!("{target}: line passes far from the source center"));
                }
            }
        }
        if mode != PrescriptionMode::SingleView {
            let zeros = slices
                .iter()
                .map(|g| Heatmap::zeros((*g).clone()))
                .collect();
            let Ok(set) = SourceViewSet::new(zeros, mode) else {
                return Some(format!("{target}: invalid source view set"));
            };
            let Ok(seed) = seed_segment(&set) else {
                return Some(format!("{target}: no seed segment"));
            };
            let (d0, d1) = (
                truth.signed_distance(&seed.start),
                truth.signed_distance(&seed.end),
            );
            // The crossing must sit well inside the seed.
            let t = d0 / (d0 - d1);
            if !(d0 * d1 < 0.0 && (0.1..=0.9).contains(&t)) {
                return Some(format!("{target}: does not cross the interior of its seed"));
            }
        }
    }
    None
}

/// Smooth synthetic anatomy: a body cylinder and an ellipsoidal heart.
fn synth_image(g: &SliceGeometry, center: &Vec3, l: &Vec3) -> Array2<f64> {
    Array2::from_shape_fn((g.rows, g.cols), |(y, x)| {
        let q = g.pixel_to_rcs(x as f64, y as f64);
        let d = q - center;
        let along = d.dot(l);
        let across = (d - l * along).norm();
        let heart = (along / 55.0).powi(2) + (across / 35.0).powi(2);
        let body = ((q.x - center.x) / 160.0).powi(2) + ((q.y - center.y) / 110.0).powi(2);
        let mut v = 0.0;
        if body <= 1.0 {
            v += 0.25;
        }
        if heart <= 1.0 {
            v += 0.7 * (1.0 - 0.5 * heart);
        }
        v
    })
}

#[derive(Debug, Clone)]
pub struct PhantomStudy {
    pub manifest: StudyManifest,
    /// Slice geometries per view id.
    pub geometries: BTreeMap<String, Vec<SliceGeometry>>,
    /// Synthetic images per view id, one per slice.
    pub images: BTreeMap<String, Vec<HeatFile>>,
    /// Per target: `(source view, slice index, heatmap)` in source order.
    pub heatmaps: BTreeMap<String, Vec<(String, usize, HeatFile)>>,
    /// Acquired plane of each target view.
    pub truths: BTreeMap<String, Plane3D>,
}

/// Generates a study. Fully determined by `spec`.
pub fn synth_study(spec: &PhantomSpec) -> Result<PhantomStudy, PhantomError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(1);

    let mut last = String::new();
    for _ in 0..MAX_ATTEMPTS {
        let (heart, views) = sample_views(spec, &mut rng)?;
        let by_id: BTreeMap<&str, Vec<SliceGeometry>> =
            views.iter().map(|(id, g)| (*id, g.clone())).collect();
        let truths: BTreeMap<&str, Plane3D> = protocol()
            .iter()
            .map(|(t, _, _)| (*t, slice_plane(&by_id[t][0])))
            .collect();
        if let Some(why) = infeasibility(&by_id, &truths) {
            last = why;
            continue;
        }
        return assemble(spec, &heart, &views, &truths, &mut noise_rng);
    }
    Err(PhantomError::InfeasibleSpec {
        attempts: MAX_ATTEMPTS,
        last,
    })
}

fn assemble(
    spec: &PhantomSpec,
    heart: &HeartFrame,
    views: &[ViewSlices],
    truths: &BTreeMap<&str, Plane3D>,
    noise_rng: &mut ChaCha8Rng,
) -> Result<PhantomStudy, PhantomError> {
    let by_id: BTreeMap<&str, &Vec<SliceGeometry>> = views.iter().map(|(id, g)| (*id, g)).collect();
    let mut entries = Vec::new();
    let mut images = BTreeMap::new();
    let mut geometries = BTreeMap::new();
    for (id, slices) in views {
        let mut files = Vec::new();
        let mut slice_entries = Vec::new();
        for (k, g) in slices.iter().enumerate() {
            files.push(HeatFile::from_grid(&synth_image(
                g,
                &heart.center,
                &heart.l,
            )));
            let rel = format!("images/{}", slice_file_name(id, k));
            slice_entries.push(SliceEntry::from_geometry(g, Some(rel)));
        }
        entries.push(ViewEntry {
            id: id.to_string(),
            slices: slice_entries,
        });
        images.insert(id.to_string(), files);
        geometries.insert(id.to_string(), slices.clone());
    }

    let noise =
        (spec.noise > 0.0).then(|| Normal::new(0.0, spec.noise).expect("validated noise level"));
    let mut targets = Vec::new();
    let mut heatmaps = BTreeMap::new();
    for (target, sources, mode) in protocol() {
        let truth = &truths[target];
        let sigma_mm = spec.sigma.sigma_mm(by_id[target][0].slice_thickness);
        let mut rendered = Vec::new();
        for src in &sources {
            for (k, g) in by_id[src].iter().enumerate() {
                let mut file = render_target_file(g, truth, sigma_mm)
                    .map_err(|e| PhantomError::InvalidSpec(e.to_string()))?
                    .expect("feasibility excludes parallel sources");
                if let Some(dist) = &noise {
                    for v in &mut file.values {
                        let noisy = *v as f64 + dist.sample(noise_rng);
                        *v = noisy.clamp(0.0, 1.0) as f32;
                    }
                }
                rendered.push((src.to_string(), k, file));
            }
        }
        heatmaps.insert(target.to_string(), rendered);
        targets.push(TargetEntry {
            id: target.to_string(),
            sources: sources.iter().map(|s| s.to_string()).collect(),
            mode,
        });
    }

    Ok(PhantomStudy {
        manifest: StudyManifest::new(entries, targets),
        geometries,
        images,
        heatmaps,
        truths: truths.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    })
}

impl PhantomStudy {
    /// Writes `manifest.json`, `images/`, `heatmaps/<target>/` and
    /// `truth/<target>.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), StudyError> {
        std::fs::create_dir_all(dir).map_err(|e| StudyError::io(dir, e))?;
        save_manifest(&self.manifest, &dir.join("manifest.json"))?;
        for (id, files) in &self.images {
            for (k, f) in files.iter().enumerate() {
                f.write(&dir.join("images").join(slice_file_name(id, k)))?;
            }
        }
        let heat_dir = dir.join("heatmaps");
        for (target, files) in &self.heatmaps {
            for (view, k, f) in files {
                f.write(&heatmap_path(&heat_dir, target, view, *k))?;
            }
        }
        for (target, plane) in &self.truths {
            let entry = self
                .manifest
                .target(target)
                .expect("every truth is a target");
            PlaneRecord::new(target, entry.sources.clone(), Some(entry.mode), plane, None)
                .save(&dir.join("truth").join(format!("{target}.json")))?;
        }
        Ok(())
    }

    /// Source heatmaps of `target`, as the prescription engine consumes them.
    pub fn source_views(&self, target: &str) -> Option<SourceViewSet> {
        let entry = self.manifest.target(target)?;
        let views = self.heatmaps[target]
            .iter()
            .map(|(view, k, f)| {
                Heatmap::from_prediction(self.geometries[view][*k].clone(), f.to_grid())
                    .expect("generated heatmaps match their slices")
            })
            .collect();
        SourceViewSet::new(views, entry.mode).ok()
    }

    /// Acquired geometry of view `id` (first slice).
    pub fn truth_view(&self, id: &str) -> Option<&SliceGeometry> {
        self.geometries.get(id).and_then(|g| g.first())
    }

    pub fn target_ids(&self) -> Vec<String> {
        self.manifest.targets.iter().map(|t| t.id.clone()).collect()
    }
}

/// Largest angle between a compact instance's target normal and the shared
/// source axis.
pub const COMPACT_MAX_TILT: f64 = 15.0;

/// Shape of a [`compact_instance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompactSpec {
    /// Pixels along the shared axis.
    pub along: usize,
    /// Pixels across it.
    pub across: usize,
    pub spacing: f64,
    /// Width of the heatmap blobs, mm.
    pub blob_mm: f64,
    /// Distance of each blob from the shared axis, mm.
    pub reach_mm: f64,
    /// Largest in-plane rotation of a view, degrees.
    pub max_spin: f64,
}

impl Default for CompactSpec {
    fn default() -> Self {
        Self {
            along: 81,
            across: 401,
            spacing: 1.0,
            blob_mm: 20.0,
            reach_mm: 90.0,
            max_spin: 5.0,
        }
    }
}

/// A small multi-view search problem with a known plane.
#[derive(Debug, Clone)]
pub struct CompactInstance {
    pub views: SourceViewSet,
    pub truth: Plane3D,
    /// Blob centers, one per view, all on `truth`.
    pub marks: Vec<Vec3>,
}

/// Three localizers that share one axis through the origin at roughly 60
/// degree intervals, and a target plane crossing the axis within 15 mm of
/// the origin, tilted at most [`COMPACT_MAX_TILT`] from perpendicular.
///
/// Each heatmap is an isotropic Gaussian blob centered on the target's line
/// in that view, `reach_mm` from the shared axis. The aggregate score is
/// then a sum of three bumps, each a function of one point-to-plane
/// distance, with a single basin at the plane through the three centers.
/// Line-shaped targets never give that: a candidate collects a response
/// wherever it crosses a ridge. Blobs must fade out well inside the frame:
/// otherwise the sample count along a line, which changes in whole pixels,
/// adds a ripple comparable to the curvature of the peak. This is a fixture
/// for comparing the pyramid with exhaustive search.
pub fn compact_instance(seed: u64, spec: &CompactSpec) -> Result<CompactInstance, PhantomError> {
    let ok = spec.blob_mm > 0.0
        && spec.reach_mm >= 0.0
        && spec.spacing > 0.0
        && spec.along >= 2
        && spec.across >= 2
        && spec.max_spin >= 0.0;
    if !ok {
        return Err(PhantomError::InvalidSpec(format!(
            "compact instance {spec:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = loop {
        let v = uniform_vec(&mut rng, 1.0);
        let n = v.norm();
        if n > 0.2 && n <= 1.0 && (v.z / n).abs() < 0.7 {
            break v / n;
        }
    };
    let (side, _) = crate::geometry::plane_basis(&axis);
    let turn = rng.random_range(0.0..360.0);
    let normal = tilt(&mut rng, &axis, COMPACT_MAX_TILT);
    let truth = Plane3D::from_normal(axis * rng.random_range(-15.0..=15.0), normal)?;
    let denom = 2.0 * spec.blob_mm * spec.blob_mm;
    let mut views = Vec::with_capacity(3);
    let mut marks = Vec::with_capacity(3);
    for k in 0..3 {
        let view_normal = rotate(
            &side,
            &axis,
            turn + 60.0 * k as f64 + rng.random_range(-10.0..=10.0),
        );
        let spin = rng.random_range(-spec.max_spin..=spec.max_spin);
        let row = rotate(&axis, &view_normal, spin);
        let col = rotate(&view_normal.cross(&axis), &view_normal, spin);
        let g = SliceGeometry::centered(
            Vec3::zeros(),
            row,
            col,
            spec.spacing,
            spec.across,
            spec.along,
            8.0,
        )?;
        let line = crate::geometry::intersect_planes(&slice_plane(&g), &truth)?;
        let crossing = line.point - line.direction * (line.point - truth.p).dot(&line.direction);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let mark = crossing + line.direction * (sign * spec.reach_mm);
        let (mx, my) = g.rcs_to_pixel(&mark);
        let grid = Array2::from_shape_fn((spec.across, spec.along), |(y, x)| {
            let r2 = ((x as f64 - mx).powi(2) + (y as f64 - my).powi(2)) * spec.spacing.powi(2);
            (-r2 / denom).exp()
        });
        views.push(Heatmap::from_prediction(g, grid).expect("grid matches the slice"));
        marks.push(mark);
    }
    let views = SourceViewSet::new(views, PrescriptionMode::MultiView)?;
    Ok(CompactInstance {
        views,
        truth,
        marks,
    })
}

/// Which normal a perturbation shifts the anchor along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftAlong {
    OriginalNormal,
    PerturbedNormal,
}

/// Rotates `g`'s normal by `(d_theta, d_phi)` degrees and moves the anchor
/// by `d_p` mm along the chosen normal. The perturbed angles must stay in
/// `[0, 180)`.
pub fn perturb_plane(
    g: &Plane3D,
    d_theta: f64,
    d_phi: f64,
    d_p: f64,
    along: ShiftAlong,
) -> Result<Plane3D, GeometryError> {
    let rotated = Plane3D::new(g.p, g.theta + d_theta, g.phi + d_phi)?;
    let n = match along {
        ShiftAlong::OriginalNormal => g.normal(),
        ShiftAlong::PerturbedNormal => rotated.normal(),
    };
    Ok(Plane3D {
        p: g.p + n * d_p,
        ..rotated
    })
}
