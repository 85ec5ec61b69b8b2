//! Sketch-and-extrude construction sequences: the token language, geometry
//! evaluation, a synthetic corpus and the evaluation metrics.

pub mod geom;
pub mod seq;
pub mod dataset;
pub mod metrics;
