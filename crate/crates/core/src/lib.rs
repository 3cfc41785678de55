//! Few-shot IMU activity detection against text-description anchors, a
//! white/black/gray privacy policy, and replacement of black-listed windows
//! with synthesized gray-listed ones.

pub mod corpus;
pub mod dataset;
pub mod model;
pub mod nn;
pub mod eval;
pub mod policy;
pub mod sanitizer;
pub mod wire;
