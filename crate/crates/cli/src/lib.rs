//! Command implementations behind the `viewplan` binary.
//!
//! Every command returns `anyhow::Result`; [`exit_code`] maps the error
//! chain to the process status: 2 for invalid input, 3 for missing input,
//! 4 for anything else.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use viewplan_core::geometry::{
    clip_and_sample, project_line_to_view, resample_plane_from_stack, GeometryError, SliceGeometry,
};
use viewplan_core::heatmap::{HeatmapError, SigmaSpec};
use viewplan_core::io::{load_manifest, HeatFile, PlaneRecord, StudyError, StudyManifest};
use viewplan_core::losses::{l2_heatmap_loss, HeatmapBatch, LossError};
use viewplan_core::metrics::{MetricsError, StdDivisor, StudyEval};
use viewplan_core::phantom::{synth_study, PhantomError, PhantomSpec};
use viewplan_core::pipeline::{
    evaluate_predictions, gen_targets, load_records, prescribe_target, PipelineError,
};
use viewplan_core::prescribe::PrescribeError;

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_MISSING: u8 = 3;
pub const EXIT_INTERNAL: u8 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "viewplan",
    version,
    about = "Cardiac view-plane prescription from per-view heatmaps"
)]
pub struct Cli {
    /// Worker threads for the plane search (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render training heatmaps of one target for all of its source slices.
    GenTargets(GenTargetsArgs),
    /// Prescribe one target plane from its source heatmaps.
    Prescribe(PrescribeArgs),
    /// Compare predicted plane records with the acquired views.
    Evaluate(EvaluateArgs),
    /// Write a synthetic study with known ground-truth planes.
    Phantom(PhantomArgs),
    /// Mean squared error between two heatmap files.
    LossEval(LossEvalArgs),
    /// Resample a parallel stack on a plane and write a PNG.
    Resample(ResampleArgs),
}

#[derive(Debug, Args)]
pub struct GenTargetsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub target: String,
    /// Heatmap width as a multiple of the target slice thickness.
    #[arg(long, default_value_t = SigmaSpec::default().alpha)]
    pub sigma_alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PrescribeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding `<target>/<view>_<slice>.vphm`.
    #[arg(long)]
    pub heatmaps: PathBuf,
    #[arg(long)]
    pub target: String,
    /// Also write one PNG per source slice with the prescribed line drawn.
    #[arg(long)]
    pub overlay: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of plane records.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Divide the spread by n - 1 instead of n.
    #[arg(long)]
    pub sample_std: bool,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub seed: u64,
    /// Standard deviation of additive heatmap noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LossEvalArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
}

#[derive(Debug, Args)]
pub struct ResampleArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Plane record to resample on.
    #[arg(long)]
    pub plane: PathBuf,
    /// Stack to sample (default: the view with the most slices).
    #[arg(long)]
    pub view: Option<String>,
    /// Output spacing in mm (default: the stack's finest pixel spacing).
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs `cli.command` on a pool of `cli.threads` workers and returns the
/// text for stdout.
pub fn run(cli: Cli) -> Result<String> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(StudyError::Validation {
                field: "--threads".into(),
                reason: "must be at least 1".into(),
            }
            .into());
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("starting worker pool")?;
    pool.install(|| match cli.command {
        Command::GenTargets(a) => cmd_gen_targets(&a),
        Command::Prescribe(a) => cmd_prescribe(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Phantom(a) => cmd_phantom(&a),
        Command::LossEval(a) => cmd_loss_eval(&a),
        Command::Resample(a) => cmd_resample(&a),
    })
}

fn is_missing(e: &StudyError) -> bool {
    match e {
        StudyError::MissingPayload(_) => true,
        StudyError::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
        _ => false,
    }
}

/// The error chain on one line, skipping causes already spelled out by the
/// message above them.
pub fn describe(err: &anyhow::Error) -> String {
    let mut out = err.to_string();
    let mut last = out.clone();
    for cause in err.chain().skip(1) {
        let text = cause.to_string();
        if !last.contains(&text) {
            out.push_str(": ");
            out.push_str(&text);
        }
        last = text;
    }
    out
}

/// Process status for a failed command.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return match e {
                PipelineError::Study(s) if is_missing(s) => EXIT_MISSING,
                PipelineError::MissingHeatmap { .. } => EXIT_MISSING,
                PipelineError::UnknownTarget(_) | PipelineError::NoTruthView(_) => EXIT_MISSING,
                _ => EXIT_VALIDATION,
            };
        }
        if let Some(e) = cause.downcast_ref::<StudyError>() {
            return if is_missing(e) {
                EXIT_MISSING
            } else {
                EXIT_VALIDATION
            };
        }
        if let Some(e) = cause.downcast_ref::<PhantomError>() {
            return match e {
                PhantomError::Study(s) if is_missing(s) => EXIT_MISSING,
                PhantomError::InvalidSpec(_) => EXIT_VALIDATION,
                _ => EXIT_INTERNAL,
            };
        }
        if cause.is::<GeometryError>()
            || cause.is::<HeatmapError>()
            || cause.is::<PrescribeError>()
            || cause.is::<MetricsError>()
            || cause.is::<LossError>()
        {
            return EXIT_VALIDATION;
        }
    }
    EXIT_INTERNAL
}

fn cmd_gen_targets(a: &GenTargetsArgs) -> Result<String> {
    let manifest = load_manifest(&a.manifest)?;
    let sigma = SigmaSpec::new(a.sigma_alpha)?;
    let written = gen_targets(&manifest, &a.target, sigma, &a.out)?;
    let mut out = String::new();
    for s in &written {
        match &s.path {
            Some(p) => writeln!(out, "{} {} {}", s.view, s.slice, p.display())?,
            None => writeln!(out, "{} {} skipped (parallel to target)", s.view, s.slice)?,
        }
    }
    Ok(out)
}

fn record_path(dir: &Path, target: &str) -> PathBuf {
    dir.join(format!("{target}.json"))
}

fn cmd_prescribe(a: &PrescribeArgs) -> Result<String> {
    let manifest = load_manifest(&a.manifest)?;
    let record = prescribe_target(&manifest, &a.target, &a.heatmaps)?;
    let path = record_path(&a.out, &a.target);
    record.save(&path)?;
    let mut out = String::new();
    let plane = record.plane()?;
    writeln!(
        out,
        "{}: anchor ({:.2}, {:.2}, {:.2}) mm, theta {:.2} deg, phi {:.2} deg -> {}",
        a.target,
        plane.p.x,
        plane.p.y,
        plane.p.z,
        plane.theta,
        plane.phi,
        path.display()
    )?;
    if a.overlay {
        for p in write_overlays(&manifest, &a.manifest, &a.heatmaps, &record, &a.out)? {
            writeln!(out, "overlay {}", p.display())?;
        }
    }
    Ok(out)
}

/// Scales `grid` to 0..=255 over its own range.
fn to_gray(grid: &Array2<f64>) -> Vec<u8> {
    let (lo, hi) = grid
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    grid.iter()
        .map(|&v| (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

fn image_payload(manifest_path: &Path, rel: &str) -> Result<Array2<f64>> {
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    Ok(HeatFile::read(&base.join(rel))?.to_grid())
}

/// One PNG per source slice: the image (or its heatmap when the manifest has
/// no image) in gray, the prescribed line in red.
fn write_overlays(
    manifest: &StudyManifest,
    manifest_path: &Path,
    heatmaps: &Path,
    record: &PlaneRecord,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let plane = record.plane()?;
    let target = manifest
        .target(&record.target)
        .ok_or_else(|| PipelineError::UnknownTarget(record.target.clone()))?;
    let mut written = Vec::new();
    for (view, k, g) in manifest.source_slices(target) {
        let entry = &manifest
            .view(&view)
            .expect("source views are declared")
            .slices[k];
        let background = match &entry.image {
            Some(rel) => image_payload(manifest_path, rel)?,
            None => HeatFile::read(&viewplan_core::io::heatmap_path(
                heatmaps,
                &record.target,
                &view,
                k,
            ))?
            .to_grid(),
        };
        let gray = to_gray(&background);
        let mut img = image::RgbImage::from_fn(g.cols as u32, g.rows as u32, |x, y| {
            let v = gray[y as usize * g.cols + x as usize];
            image::Rgb([v, v, v])
        });
        if let Ok(line) = project_line_to_view(&g, &plane) {
            for &(x, y) in clip_and_sample(&g, &line).points() {
                let (px, py) = (x.round() as u32, y.round() as u32);
                if (px as usize) < g.cols && (py as usize) < g.rows {
                    img.put_pixel(px, py, image::Rgb([255, 0, 0]));
                }
            }
        }
        let path = out.join(format!("{}_{}_{k:03}.png", record.target, view));
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        img.save(&path)
            .with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

/// Table of per-target errors with a mean and spread row.
pub fn format_eval(eval: &StudyEval, divisor: StdDivisor) -> String {
    let mut out = String::new();
    let width = eval
        .per_target
        .keys()
        .map(String::len)
        .max()
        .unwrap_or(0)
        .max(6);
    let _ = writeln!(
        out,
        "{:<width$}  {:>16}  {:>18}",
        "target", "normal dev (deg)", "point-plane (mm)"
    );
    for (id, e) in &eval.per_target {
        let _ = writeln!(
            out,
            "{id:<width$}  {:>16.2}  {:>18.2}",
            e.normal_deviation, e.point_to_plane
        );
    }
    let label = match divisor {
        StdDivisor::Population => "mean ± std over targets (divisor n)",
        StdDivisor::Sample => "mean ± std over targets (divisor n-1)",
    };
    let _ = writeln!(
        out,
        "{:<width$}  {:>16}  {:>18}  {label}",
        "all",
        format!(
            "{:.2} ± {:.2}",
            eval.normal_deviation.mean, eval.normal_deviation.std
        ),
        format!(
            "{:.2} ± {:.2}",
            eval.point_to_plane.mean, eval.point_to_plane.std
        ),
    );
    out
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<String> {
    let manifest = load_manifest(&a.manifest)?;
    let preds = load_records(&a.pred)?;
    let divisor = if a.sample_std {
        StdDivisor::Sample
    } else {
        StdDivisor::Population
    };
    let eval = evaluate_predictions(&manifest, &preds, divisor)?;
    Ok(format_eval(&eval, divisor))
}

fn cmd_phantom(a: &PhantomArgs) -> Result<String> {
    let study = synth_study(&PhantomSpec::new(a.seed).with_noise(a.noise))?;
    study.write(&a.out)?;
    Ok(format!(
        "phantom seed {} noise {} -> {} ({} targets)\n",
        a.seed,
        a.noise,
        a.out.display(),
        study.truths.len()
    ))
}

fn cmd_loss_eval(a: &LossEvalArgs) -> Result<String> {
    let truth = HeatFile::read(&a.truth)?.to_grid();
    let pred = HeatFile::read(&a.pred)?.to_grid();
    let batch = HeatmapBatch::new(vec![truth], vec![pred])?;
    Ok(format!("{:.6}\n", l2_heatmap_loss(&batch)))
}

fn cmd_resample(a: &ResampleArgs) -> Result<String> {
    let manifest = load_manifest(&a.manifest)?;
    let plane = PlaneRecord::load(&a.plane)?.plane()?;
    let view = match &a.view {
        Some(id) => manifest.view(id).ok_or_else(|| StudyError::Validation {
            field: "--view".into(),
            reason: format!("no view {id:?} in the manifest"),
        })?,
        None => manifest
            .views
            .iter()
            .fold(
                None,
                |best: Option<&viewplan_core::io::ViewEntry>, v| match best {
                    Some(b) if b.slices.len() >= v.slices.len() => Some(b),
                    _ => Some(v),
                },
            )
            .context("manifest has no views")?,
    };
    let mut stack: Vec<(SliceGeometry, Array2<f64>)> = Vec::new();
    for (k, s) in view.slices.iter().enumerate() {
        let Some(rel) = &s.image else {
            bail!(StudyError::MissingPayload(PathBuf::from(format!(
                "{} slice {k} has no image",
                view.id
            ))));
        };
        stack.push((s.geometry()?, image_payload(&a.manifest, rel)?));
    }
    let g0 = &stack[0].0;
    let spacing = a
        .spacing
        .unwrap_or(g0.pixel_spacing_row.min(g0.pixel_spacing_col));
    let grid = resample_plane_from_stack(&stack, &plane, g0.rows, g0.cols, spacing)?;
    let img = image::GrayImage::from_raw(g0.cols as u32, g0.rows as u32, to_gray(&grid))
        .expect("buffer matches dimensions");
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    img.save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    Ok(format!(
        "resampled {} ({} slices) -> {}\n",
        view.id,
        stack.len(),
        a.out.display()
    ))
}
