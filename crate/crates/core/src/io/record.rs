use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_json, write_json, StudyError};
use crate::geometry::{Plane3D, Vec3};
use crate::prescribe::PrescriptionMode;

pub const RECORD_VERSION: &str = "viewplan-plane/1; lengths mm; angles deg";

/// A prescribed (or ground-truth) plane with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneRecord {
    pub version: String,
    pub target: String,
    pub sources: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<PrescriptionMode>,
    pub anchor_mm: [f64; 3],
    pub theta_deg: f64,
    pub phi_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl PlaneRecord {
    pub fn new(
        target: &str,
        sources: Vec<String>,
        mode: Option<PrescriptionMode>,
        plane: &Plane3D,
        score: Option<f64>,
    ) -> Self {
        Self {
            version: RECORD_VERSION.to_string(),
            target: target.to_string(),
            sources,
            mode,
            anchor_mm: [plane.p.x, plane.p.y, plane.p.z],
            theta_deg: plane.theta,
            phi_deg: plane.phi,
            score,
        }
    }

    pub fn plane(&self) -> Result<Plane3D, StudyError> {
        let [x, y, z] = self.anchor_mm;
        Plane3D::new(Vec3::new(x, y, z), self.theta_deg, self.phi_deg)
            .map_err(|e| StudyError::invalid("plane", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, StudyError> {
        let rec: Self = read_json(path)?;
        if rec.version != RECORD_VERSION {
            return Err(StudyError::invalid(
                "version",
                format!("expected {RECORD_VERSION:?}, got {:?}", rec.version),
            ));
        }
        rec.plane()?;
        Ok(rec)
    }

    pub fn save(&self, path: &Path) -> Result<(), StudyError> {
        write_json(path, self)
    }
}
