//! Anatomy-oriented imaging-plane prescription.
//!
//! Source views carry heatmaps of the line where a target plane cuts them.
//! [`prescribe`] searches for the plane whose intersections collect the most
//! heatmap response; [`geometry`] holds the slice and plane algebra;
//! [`heatmap`] renders training targets; [`phantom`] builds synthetic studies
//! with known answers.

pub mod geometry;
pub mod heatmap;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod prescribe;
pub mod pyramid;
