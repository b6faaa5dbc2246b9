//! Time-bound contextual bio-IDs for multi-device wearables.
//!
//! Windows of IMU/PPG data from devices worn on one body are embedded by a
//! contrastively trained 1D-CNN so that time-aligned windows of the same
//! wearer land close together. A small pairwise head then decides whether
//! two embeddings come from the same wearer at the same time.
//!
//! Runnable walkthroughs of each capability live in `examples/`.

pub mod signal;
pub mod dataset;
pub mod nn;
pub mod pairs;
pub mod encoder;
pub mod matcher;
pub mod analysis;
pub mod registry;
pub mod simulate;
pub mod cli;
