//! Agreement between a prescribed plane and the acquired ground-truth view.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geometry::{Plane3D, SliceGeometry};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("target ids do not match: {0}")]
    KeyMismatch(String),
}

/// Acute angle in degrees between the normals of two unoriented planes.
pub fn normal_deviation(a: &Plane3D, b: &Plane3D) -> f64 {
    let (na, nb) = (a.normal(), b.normal());
    // atan2 keeps precision near 0 where acos does not.
    na.cross(&nb).norm().atan2(na.dot(&nb).abs()).to_degrees()
}

/// Distance in mm from the center of `truth_view` to `auto`.
pub fn point_to_plane_distance(truth_view: &SliceGeometry, auto: &Plane3D) -> f64 {
    auto.signed_distance(&truth_view.center()).abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanePairEval {
    pub normal_deviation: f64,
    pub point_to_plane: f64,
}

pub fn evaluate_pair(truth_view: &SliceGeometry, truth: &Plane3D, auto: &Plane3D) -> PlanePairEval {
    PlanePairEval {
        normal_deviation: normal_deviation(truth, auto),
        point_to_plane: point_to_plane_distance(truth_view, auto),
    }
}

/// Divisor for the reported standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StdDivisor {
    /// Divide by `n`.
    #[default]
    Population,
    /// Divide by `n - 1`; 0 for a single value.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64], divisor: StdDivisor) -> MeanStd {
    let n = values.len() as f64;
    if values.is_empty() {
        return MeanStd {
            mean: 0.0,
            std: 0.0,
        };
    }
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let denom = match divisor {
        StdDivisor::Population => n,
        StdDivisor::Sample => n - 1.0,
    };
    let std = if denom > 0.0 {
        (ss / denom).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyEval {
    pub per_target: BTreeMap<String, PlanePairEval>,
    /// Mean and spread across targets.
    pub normal_deviation: MeanStd,
    pub point_to_plane: MeanStd,
}

/// Scores every prediction against the view acquired for the same target.
/// Truth views without a prediction are ignored.
pub fn evaluate_study(
    predictions: &BTreeMap<String, Plane3D>,
    truths: &BTreeMap<String, SliceGeometry>,
    divisor: StdDivisor,
) -> Result<StudyEval, MetricsError> {
    if predictions.is_empty() {
        return Err(MetricsError::KeyMismatch("no predictions".into()));
    }
    let missing: Vec<&str> = predictions
        .keys()
        .filter(|k| !truths.contains_key(*k))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::KeyMismatch(format!(
            "no ground-truth view for {}",
            missing.join(", ")
        )));
    }
    let per_target: BTreeMap<String, PlanePairEval> = predictions
        .iter()
        .map(|(id, auto)| {
            let view = &truths[id];
            let truth = crate::geometry::slice_plane(view);
            (id.clone(), evaluate_pair(view, &truth, auto))
        })
        .collect();
    let nd: Vec<f64> = per_target.values().map(|e| e.normal_deviation).collect();
    let pp: Vec<f64> = per_target.values().map(|e| e.point_to_plane).collect();
    Ok(StudyEval {
        normal_deviation: mean_std(&nd, divisor),
        point_to_plane: mean_std(&pp, divisor),
        per_target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{slice_plane, Vec3};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn plane(n: Vec3) -> Plane3D {
        Plane3D::from_normal(Vec3::zeros(), n).unwrap()
    }

    fn view_at(center: Vec3) -> SliceGeometry {
        SliceGeometry::centered(center, Vec3::x(), Vec3::y(), 1.0, 11, 11, 5.0).unwrap()
    }

    #[test]
    fn deviation_examples() {
        let a = plane(Vec3::new(0.2, 0.3, 0.9));
        assert_eq!(normal_deviation(&a, &a), 0.0);
        assert_abs_diff_eq!(
            normal_deviation(&plane(Vec3::z()), &plane(Vec3::x())),
            90.0,
            epsilon = 1e-12
        );
        let up = Plane3D {
            p: Vec3::zeros(),
            theta: 0.0,
            phi: 0.0,
        };
        let down = Plane3D::from_normal(Vec3::zeros(), -Vec3::z()).unwrap();
        assert_eq!(normal_deviation(&up, &down), 0.0);
    }

    #[test]
    fn distance_examples() {
        let z3 = Plane3D::new(Vec3::new(0.0, 0.0, 3.0), 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(point_to_plane_distance(&view_at(Vec3::zeros()), &z3), 3.0);
        let through = Plane3D::new(Vec3::new(4.0, 5.0, 0.0), 90.0, 30.0).unwrap();
        let v = view_at(Vec3::new(4.0, 5.0, 0.0));
        assert_abs_diff_eq!(point_to_plane_distance(&v, &through), 0.0, epsilon = 1e-12);
        let z0 = Plane3D::new(Vec3::zeros(), 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(
            point_to_plane_distance(&view_at(Vec3::new(1.0, 2.0, 3.0)), &z0),
            3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn study_statistics() {
        let truth = view_at(Vec3::zeros());
        let exact = slice_plane(&truth);
        let preds = BTreeMap::from([("4C".to_string(), exact)]);
        let truths = BTreeMap::from([("4C".to_string(), truth.clone())]);
        let e = evaluate_study(&preds, &truths, StdDivisor::Population).unwrap();
        assert_eq!(e.per_target["4C"].normal_deviation, 0.0);
        assert_eq!(e.per_target["4C"].point_to_plane, 0.0);
        assert_eq!(e.normal_deviation.std, 0.0);

        let m = mean_std(&[4.0, 6.0], StdDivisor::Population);
        assert_eq!((m.mean, m.std), (5.0, 1.0));
        let s = mean_std(&[4.0, 6.0], StdDivisor::Sample);
        assert_abs_diff_eq!(s.std, 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn study_key_mismatch() {
        let truths = BTreeMap::from([("2C".to_string(), view_at(Vec3::zeros()))]);
        let preds = BTreeMap::from([("SAX".to_string(), plane(Vec3::z()))]);
        assert!(matches!(
            evaluate_study(&preds, &truths, StdDivisor::Population),
            Err(MetricsError::KeyMismatch(_))
        ));
        assert!(evaluate_study(&BTreeMap::new(), &truths, StdDivisor::Population).is_err());
    }

    fn unit() -> impl Strategy<Value = Vec3> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(x, y, z)| x * x + y * y + z * z > 0.01)
            .prop_map(|(x, y, z)| Vec3::new(x, y, z).normalize())
    }

    proptest! {
        #[test]
        fn deviation_is_a_metric(a in unit(), b in unit(), c in unit()) {
            let (pa, pb, pc) = (plane(a), plane(b), plane(c));
            let ab = normal_deviation(&pa, &pb);
            prop_assert!((0.0..=90.0 + 1e-12).contains(&ab));
            prop_assert!((ab - normal_deviation(&pb, &pa)).abs() < 1e-12);
            prop_assert!(ab <= normal_deviation(&pa, &pc) + normal_deviation(&pc, &pb) + 1e-9);
            prop_assert!(normal_deviation(&pa, &plane(-a)) < 1e-9);
        }

        #[test]
        fn distance_ignores_anchor_choice(n in unit(), s in -50.0..50.0f64, t in -50.0..50.0f64,
                                          c in (-30.0..30.0f64, -30.0..30.0f64, -30.0..30.0f64)) {
            let auto = Plane3D::from_normal(Vec3::new(1.0, -2.0, 0.5), n).unwrap();
            let (e1, e2) = crate::geometry::plane_basis(&auto.normal());
            let moved = Plane3D { p: auto.p + e1 * s + e2 * t, ..auto };
            let v = view_at(Vec3::new(c.0, c.1, c.2));
            prop_assert!((point_to_plane_distance(&v, &auto) - point_to_plane_distance(&v, &moved)).abs() < 1e-9);
        }
    }
}
