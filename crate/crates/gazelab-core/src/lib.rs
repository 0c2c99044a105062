//! Desk-scale laboratory for gaze-centric face-swap training losses.
//!
//! The crate is organized around a small reverse-mode autodiff engine
//! ([`tensor`]) on which all loss math runs, a procedural face-patch
//! generator with exact gaze labels ([`synth`]), the loss equations
//! themselves ([`losses`]), a trainable gaze predictor ([`expert`]),
//! the LIAE dual-intermediate autoencoder and its experiment driver
//! ([`swap`]), gaze-error evaluation ([`eval`]) and the nonparametric
//! survey statistics toolkit ([`stats`]).

pub mod eval;
pub mod expert;
pub mod losses;
pub mod rng;
pub mod stats;
pub mod swap;
pub mod synth;
pub mod tensor;

pub use eval::{EvalReport, Oracle};
pub use expert::ExpertModel;
pub use losses::{Condition, GazeAngles, GazeVector, LossWeights, SsimConfig};
pub use rng::Rng64;
pub use swap::{ArchConfig, LiaeModel, TrainSchedule};
pub use synth::{IdentityParams, Sample};
pub use tensor::{Graph, NodeId, ParamSet, Tensor};
