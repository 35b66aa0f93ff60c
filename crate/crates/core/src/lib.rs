//! Unsupervised object discovery from optical flow.
//!
//! Soft segmentations are scored by how well a small parametric flow model per
//! segment explains the observed motion; the model parameters are solved in
//! closed form inside the loss, and segmenters are trained by gradient descent
//! on that loss. Over-segmentations are merged into foreground and background
//! with spectral clustering on appearance features.

pub mod cli;
pub mod eval;
pub mod flowfield;
pub mod gwm_energy;
pub mod linalg;
pub mod merging;
pub mod motion_models;
pub mod pipeline;
pub mod rng;
pub mod scenes;
pub mod segmenter;
