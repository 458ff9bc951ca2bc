//! Glue between the on-disk study layout and the prescription engine.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::{project_line_to_view, slice_plane, GeometryError, Plane3D, SliceGeometry};
use crate::heatmap::{render_target, Heatmap, HeatmapError, SigmaSpec};
use crate::io::{heatmap_path, HeatFile, PlaneRecord, StudyError, StudyManifest, TargetEntry};
use crate::metrics::{evaluate_study, MetricsError, StdDivisor, StudyEval};
use crate::prescribe::{prescribe, PrescribeError, SourceViewSet};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
    #[error(transparent)]
    Prescribe(#[from] PrescribeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("no target {0:?} in the manifest")]
    UnknownTarget(String),
    #[error("no acquired view {0:?} to take the ground-truth plane from")]
    NoTruthView(String),
    #[error("missing heatmap for {view} slice {slice}: {path}")]
    MissingHeatmap {
        view: String,
        slice: usize,
        path: PathBuf,
    },
    #[error("heatmap {path} is {got_rows}x{got_cols}, slice is {rows}x{cols}")]
    HeatmapShape {
        path: PathBuf,
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
}

/// Training target for one source slice, narrowed to the file format.
/// `None` when the slice is parallel to the target plane.
pub fn render_target_file(
    source: &SliceGeometry,
    target: &Plane3D,
    sigma_mm: f64,
) -> Result<Option<HeatFile>, HeatmapError> {
    match project_line_to_view(source, target) {
        Ok(line) => Ok(Some(HeatFile::from_grid(
            render_target(source, &line, sigma_mm)?.values(),
        ))),
        Err(_) => Ok(None),
    }
}

/// The acquired plane of view `id` (its first slice).
pub fn truth_view(manifest: &StudyManifest, id: &str) -> Result<SliceGeometry, PipelineError> {
    manifest
        .geometries(id)
        .and_then(|g| g.into_iter().next())
        .ok_or_else(|| PipelineError::NoTruthView(id.to_string()))
}

fn target_entry<'a>(
    manifest: &'a StudyManifest,
    id: &str,
) -> Result<&'a TargetEntry, PipelineError> {
    manifest
        .target(id)
        .ok_or_else(|| PipelineError::UnknownTarget(id.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSlice {
    pub view: String,
    pub slice: usize,
    /// `None` when the slice was skipped as parallel to the target.
    pub path: Option<PathBuf>,
}

/// Writes the ground-truth heatmap of `target_id` for every one of its
/// source slices under `out/<target>/`.
pub fn gen_targets(
    manifest: &StudyManifest,
    target_id: &str,
    sigma: SigmaSpec,
    out: &Path,
) -> Result<Vec<GeneratedSlice>, PipelineError> {
    let target = target_entry(manifest, target_id)?;
    let truth_geometry = truth_view(manifest, target_id)?;
    let truth = slice_plane(&truth_geometry);
    let sigma_mm = sigma.sigma_mm(truth_geometry.slice_thickness);
    let mut written = Vec::new();
    for (view, slice, g) in manifest.source_slices(target) {
        let path = match render_target_file(&g, &truth, sigma_mm)? {
            Some(file) => {
                let path = heatmap_path(out, target_id, &view, slice);
                file.write(&path)?;
                Some(path)
            }
            None => {
                log::info!("{target_id}: {view} slice {slice} is parallel to the target, skipped");
                None
            }
        };
        written.push(GeneratedSlice { view, slice, path });
    }
    Ok(written)
}

/// Reads the heatmaps of every source slice of `target`.
pub fn load_source_views(
    manifest: &StudyManifest,
    target: &TargetEntry,
    heatmaps: &Path,
) -> Result<SourceViewSet, PipelineError> {
    let mut views = Vec::new();
    for (view, slice, g) in manifest.source_slices(target) {
        let path = heatmap_path(heatmaps, &target.id, &view, slice);
        if !path.is_file() {
            return Err(PipelineError::MissingHeatmap { view, slice, path });
        }
        let grid = HeatFile::read(&path)?.to_grid();
        if grid.dim() != (g.rows, g.cols) {
            return Err(PipelineError::HeatmapShape {
                path,
                rows: g.rows,
                cols: g.cols,
                got_rows: grid.nrows(),
                got_cols: grid.ncols(),
            });
        }
        views.push(Heatmap::from_prediction(g, grid)?);
    }
    Ok(SourceViewSet::new(views, target.mode)?)
}

/// Prescribes `target_id` from the heatmaps under `heatmaps/<target>/`.
pub fn prescribe_target(
    manifest: &StudyManifest,
    target_id: &str,
    heatmaps: &Path,
) -> Result<PlaneRecord, PipelineError> {
    let target = target_entry(manifest, target_id)?;
    let views = load_source_views(manifest, target, heatmaps)?;
    let result = prescribe(&views)?;
    Ok(PlaneRecord::new(
        target_id,
        target.sources.clone(),
        Some(target.mode),
        &result.plane,
        Some(result.score),
    ))
}

/// Reads every `*.json` plane record in `dir`, keyed by target id.
pub fn load_records(dir: &Path) -> Result<BTreeMap<String, Plane3D>, StudyError> {
    let entries = std::fs::read_dir(dir).map_err(|e| StudyError::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| StudyError::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    let mut out = BTreeMap::new();
    for path in paths {
        let rec = PlaneRecord::load(&path)?;
        let plane = rec.plane()?;
        if out.insert(rec.target.clone(), plane).is_some() {
            return Err(StudyError::invalid(
                "target",
                format!(
                    "{}: second record for target {:?}",
                    path.display(),
                    rec.target
                ),
            ));
        }
    }
    Ok(out)
}

/// Scores predictions against the acquired views of the same ids.
pub fn evaluate_predictions(
    manifest: &StudyManifest,
    predictions: &BTreeMap<String, Plane3D>,
    divisor: StdDivisor,
) -> Result<StudyEval, PipelineError> {
    let truths: BTreeMap<String, SliceGeometry> = predictions
        .keys()
        .filter_map(|id| truth_view(manifest, id).ok().map(|g| (id.clone(), g)))
        .collect();
    Ok(evaluate_study(predictions, &truths, divisor)?)
}
