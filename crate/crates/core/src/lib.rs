//! Structured-light stereo toolkit: a ray-cast stereo/projector simulator,
//! stripe pattern codecs, a cross-correlation disparity matcher, training
//! losses and multi-task weighting schedulers, evaluation metrics and an
//! on-disk dataset format.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod disparity;
pub mod error;
pub mod eval;
pub mod grid;
pub mod io;
pub mod losses;
pub mod matcher;
pub mod pipeline;
pub mod scene;
pub mod scheduler;

pub use codec::{BitStack, CodeMap, PatternKind, PatternSpec, PatternStack};
pub use disparity::{DisparityMap, ScoreVolume};
pub use error::{Error, Result};
pub use grid::{Grid, Mask};
pub use matcher::MatchConfig;
pub use scene::{CameraModel, CameraPose, ProjectorRig, Scene, SceneConfig, StereoFrame};
