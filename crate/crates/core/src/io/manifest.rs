use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_json, write_json, StudyError};
use crate::geometry::{GeometryError, SliceGeometry, Vec3};
use crate::prescribe::PrescriptionMode;

pub const MANIFEST_VERSION: &str = "viewplan-manifest/1; lengths mm; angles deg";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyManifest {
    pub version: String,
    pub views: Vec<ViewEntry>,
    #[serde(default)]
    pub targets: Vec<TargetEntry>,
}

/// One acquired view: a single slice or a stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub id: String,
    pub slices: Vec<SliceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceEntry {
    pub ipp: [f64; 3],
    pub row_dir: [f64; 3],
    pub col_dir: [f64; 3],
    pub pixel_spacing_row: f64,
    pub pixel_spacing_col: f64,
    pub rows: usize,
    pub cols: usize,
    pub slice_thickness: f64,
    /// Image payload, relative to the manifest directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

/// A plane to prescribe and the views it is planned from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetEntry {
    pub id: String,
    pub sources: Vec<String>,
    pub mode: PrescriptionMode,
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl SliceEntry {
    pub fn from_geometry(g: &SliceGeometry, image: Option<String>) -> Self {
        Self {
            ipp: arr(&g.ipp),
            row_dir: arr(&g.row_dir),
            col_dir: arr(&g.col_dir),
            pixel_spacing_row: g.pixel_spacing_row,
            pixel_spacing_col: g.pixel_spacing_col,
            rows: g.rows,
            cols: g.cols,
            slice_thickness: g.slice_thickness,
            image,
        }
    }

    pub fn geometry(&self) -> Result<SliceGeometry, GeometryError> {
        SliceGeometry::new(
            Vec3::from(self.ipp),
            Vec3::from(self.row_dir),
            Vec3::from(self.col_dir),
            self.pixel_spacing_row,
            self.pixel_spacing_col,
            self.rows,
            self.cols,
            self.slice_thickness,
        )
    }
}

impl StudyManifest {
    pub fn new(views: Vec<ViewEntry>, targets: Vec<TargetEntry>) -> Self {
        Self {
            version: MANIFEST_VERSION.to_string(),
            views,
            targets,
        }
    }

    pub fn view(&self, id: &str) -> Option<&ViewEntry> {
        self.views.iter().find(|v| v.id == id)
    }

    pub fn target(&self, id: &str) -> Option<&TargetEntry> {
        self.targets.iter().find(|t| t.id == id)
    }

    /// Geometries of every slice of view `id`.
    pub fn geometries(&self, id: &str) -> Option<Vec<SliceGeometry>> {
        let view = self.view(id)?;
        view.slices.iter().map(|s| s.geometry().ok()).collect()
    }

    /// `(view id, slice index, geometry)` for every source slice of a target,
    /// in source order.
    pub fn source_slices(&self, target: &TargetEntry) -> Vec<(String, usize, SliceGeometry)> {
        target
            .sources
            .iter()
            .filter_map(|id| self.view(id))
            .flat_map(|v| {
                v.slices
                    .iter()
                    .enumerate()
                    .filter_map(move |(k, s)| s.geometry().ok().map(|g| (v.id.clone(), k, g)))
            })
            .collect()
    }

    /// Checks every invariant that does not touch the filesystem.
    pub fn validate(&self) -> Result<(), StudyError> {
        if self.version != MANIFEST_VERSION {
            return Err(StudyError::invalid(
                "version",
                format!("expected {MANIFEST_VERSION:?}, got {:?}", self.version),
            ));
        }
        let mut ids = HashSet::new();
        for (i, view) in self.views.iter().enumerate() {
            if view.id.is_empty() {
                return Err(StudyError::invalid(format!("views[{i}].id"), "empty id"));
            }
            if !ids.insert(view.id.as_str()) {
                return Err(StudyError::invalid(
                    format!("views[{i}].id"),
                    format!("duplicate view id {:?}", view.id),
                ));
            }
            if view.slices.is_empty() {
                return Err(StudyError::invalid(
                    format!("views[{i}].slices"),
                    "no slices",
                ));
            }
            for (k, s) in view.slices.iter().enumerate() {
                if let Err(GeometryError::InvalidSlice { field, reason }) = s.geometry() {
                    return Err(StudyError::invalid(
                        format!("views[{i}].slices[{k}].{field}"),
                        reason,
                    ));
                }
            }
        }
        let mut target_ids = HashSet::new();
        for (t, target) in self.targets.iter().enumerate() {
            let field = |name: &str| format!("targets[{t}].{name}");
            if !target_ids.insert(target.id.as_str()) {
                return Err(StudyError::invalid(
                    field("id"),
                    format!("duplicate target id {:?}", target.id),
                ));
            }
            if target.sources.is_empty() {
                return Err(StudyError::invalid(field("sources"), "no source views"));
            }
            for (j, src) in target.sources.iter().enumerate() {
                if !ids.contains(src.as_str()) {
                    return Err(StudyError::invalid(
                        format!("targets[{t}].sources[{j}]"),
                        format!("undeclared view {src:?}"),
                    ));
                }
                if target.sources[..j].contains(src) {
                    return Err(StudyError::invalid(
                        format!("targets[{t}].sources[{j}]"),
                        format!("view {src:?} listed twice"),
                    ));
                }
            }
            let slices = self.source_slices(target);
            let parallel_to_first = |g: &SliceGeometry| g.is_parallel_to(&slices[0].2);
            let consistent = match target.mode {
                PrescriptionMode::SingleView => target.sources.len() == 1 && slices.len() == 1,
                PrescriptionMode::ParallelStack => {
                    target.sources.len() == 1 && slices.iter().all(|s| parallel_to_first(&s.2))
                }
                PrescriptionMode::MultiView => {
                    slices.len() >= 2 && !slices.iter().all(|s| parallel_to_first(&s.2))
                }
            };
            if !consistent {
                let need = match target.mode {
                    PrescriptionMode::SingleView => "exactly one single-slice source view",
                    PrescriptionMode::ParallelStack => {
                        "one source view of mutually parallel slices"
                    }
                    PrescriptionMode::MultiView => "at least two non-parallel source slices",
                };
                return Err(StudyError::invalid(
                    field("mode"),
                    format!("{} prescription needs {need}", target.mode),
                ));
            }
        }
        Ok(())
    }
}

/// Reads and validates a manifest. Image payloads are resolved against the
/// manifest's directory and must exist.
pub fn load_manifest(path: &Path) -> Result<StudyManifest, StudyError> {
    let manifest: StudyManifest = read_json(path)?;
    manifest.validate()?;
    let base = path.parent().unwrap_or(Path::new(""));
    for view in &manifest.views {
        for s in &view.slices {
            if let Some(rel) = &s.image {
                let p = base.join(rel);
                if !p.is_file() {
                    return Err(StudyError::MissingPayload(p));
                }
            }
        }
    }
    Ok(manifest)
}

pub fn save_manifest(manifest: &StudyManifest, path: &Path) -> Result<(), StudyError> {
    write_json(path, manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn axial(z: f64) -> SliceEntry {
        SliceEntry {
            ipp: [0.0, 0.0, z],
            row_dir: [1.0, 0.0, 0.0],
            col_dir: [0.0, 1.0, 0.0],
            pixel_spacing_row: 1.0,
            pixel_spacing_col: 1.0,
            rows: 8,
            cols: 8,
            slice_thickness: 2.0,
            image: None,
        }
    }

    fn sagittal() -> SliceEntry {
        SliceEntry {
            row_dir: [0.0, 1.0, 0.0],
            col_dir: [0.0, 0.0, -1.0],
            ..axial(0.0)
        }
    }

    fn minimal() -> StudyManifest {
        StudyManifest::new(
            vec![ViewEntry {
                id: "axial".into(),
                slices: vec![axial(0.0)],
            }],
            vec![],
        )
    }

    fn write_and_load(m: &StudyManifest) -> Result<StudyManifest, StudyError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        save_manifest(m, &path).unwrap();
        load_manifest(&path)
    }

    fn expect_field(r: Result<StudyManifest, StudyError>, needle: &str) {
        match r {
            Err(StudyError::Validation { field, reason }) => {
                assert!(
                    field.contains(needle) || reason.contains(needle),
                    "{field}: {reason}"
                )
            }
            other => panic!("expected validation error naming {needle}, got {other:?}"),
        }
    }

    #[test]
    fn minimal_manifest_loads() {
        assert_eq!(write_and_load(&minimal()).unwrap(), minimal());
    }

    #[test]
    fn non_unit_row_dir_is_named() {
        let mut m = minimal();
        m.views[0].slices[0].row_dir = [2.0, 0.0, 0.0];
        expect_field(write_and_load(&m), "views[0].slices[0].row_dir");
    }

    #[test]
    fn undeclared_source_is_rejected() {
        let mut m = minimal();
        m.targets.push(TargetEntry {
            id: "2C".into(),
            sources: vec!["p5C".into()],
            mode: PrescriptionMode::SingleView,
        });
        expect_field(write_and_load(&m), "p5C");
    }

    #[test]
    fn duplicate_view_ids_are_rejected() {
        let mut m = minimal();
        m.views.push(m.views[0].clone());
        expect_field(write_and_load(&m), "views[1].id");
    }

    #[test]
    fn modes_must_match_view_multiplicity() {
        let mut m = minimal();
        m.views[0].slices.push(axial(5.0));
        m.views.push(ViewEntry {
            id: "sag".into(),
            slices: vec![sagittal()],
        });
        let target = |sources: &[&str], mode| TargetEntry {
            id: "T".into(),
            sources: sources.iter().map(|s| s.to_string()).collect(),
            mode,
        };
        let ok = [
            target(&["axial"], PrescriptionMode::ParallelStack),
            target(&["sag"], PrescriptionMode::SingleView),
            target(&["axial", "sag"], PrescriptionMode::MultiView),
        ];
        for t in ok {
            let mut m = m.clone();
            m.targets = vec![t];
            write_and_load(&m).unwrap();
        }
        let bad = [
            target(&["axial"], PrescriptionMode::SingleView),
            target(&["axial"], PrescriptionMode::MultiView),
            target(&["axial", "sag"], PrescriptionMode::ParallelStack),
        ];
        for t in bad {
            let mut m = m.clone();
            m.targets = vec![t];
            expect_field(write_and_load(&m), "targets[0].mode");
        }
    }

    #[test]
    fn missing_payload_and_malformed_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut m = minimal();
        m.views[0].slices[0].image = Some("images/axial_000.vphm".into());
        save_manifest(&m, &path).unwrap();
        assert!(matches!(
            load_manifest(&path),
            Err(StudyError::MissingPayload(_))
        ));

        std::fs::write(&path, "{ \"version\": ").unwrap();
        assert!(matches!(
            load_manifest(&path),
            Err(StudyError::Parse { .. })
        ));
    }

    proptest! {
        #[test]
        fn roundtrip_is_field_exact(ipp in proptest::array::uniform3(-500.0..500.0f64),
                                    angle in 0.0..std::f64::consts::TAU,
                                    spacing in 0.3..4.0f64, thick in 0.5..12.0f64,
                                    rows in 2usize..512, cols in 2usize..512) {
            let (s, c) = angle.sin_cos();
            let slice = SliceEntry {
                ipp,
                row_dir: [c, s, 0.0],
                col_dir: [-s * 0.6, c * 0.6, 0.8],
                pixel_spacing_row: spacing,
                pixel_spacing_col: spacing * 1.25,
                rows,
                cols,
                slice_thickness: thick,
                image: None,
            };
            prop_assume!(slice.geometry().is_ok());
            let m = StudyManifest::new(
                vec![ViewEntry { id: "v".into(), slices: vec![slice] }],
                vec![TargetEntry { id: "t".into(), sources: vec!["v".into()], mode: PrescriptionMode::SingleView }],
            );
            prop_assert_eq!(write_and_load(&m).unwrap(), m);
        }
    }
}
