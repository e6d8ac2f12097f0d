//! Desk-scale building blocks for interactive world-generation pipelines.
//!
//! Everything here runs without a pretrained video model: camera trajectories
//! are quantized into keyboard-style motions, samplers integrate an analytic
//! rectified-flow velocity field for Gaussian-mixture targets, and the
//! context-packing and residual-caching machinery operates on toy tensors.
//!
//! Modules:
//!
//! - [`se3`]: rigid-transform algebra and the pose distance metric.
//! - [`motion`]: trajectory quantization, speed statistics and condition text.
//! - [`flow`]: rectified-flow math, the Gaussian-mixture velocity oracle and
//!   distillation losses.
//! - [`sampler`]: Euler, SDE, time-travel SDE and two-stage anti-artifact samplers.
//! - [`freq`]: separable blur operator with SVD pseudo-inverse and projectors.
//! - [`context`]: frame-packing compression plans and history policies.
//! - [`mvdt`]: token masking, gated fusion, residual caching, block importance.
//! - [`par`]: data-parallel helpers with a sequential fallback.

pub mod context;
pub mod flow;
pub mod freq;
pub mod motion;
pub mod mvdt;
pub mod par;
pub mod sampler;
pub mod se3;

pub use flow::GaussianMixture;
pub use freq::SeparableOperator2D;
pub use motion::CanonicalMotionSet;
pub use mvdt::CachePlan;
pub use se3::Pose4;
