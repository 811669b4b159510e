//! Simulation and analysis of distributed aggregative optimization with
//! quantized (finite-bit) communication.
//!
//! The crate is organised by subsystem:
//!
//! * [`topology`]: doubly stochastic mixing matrices and their contraction factor.
//! * [`problems`]: aggregative problem definitions, built-in instances and a
//!   centralized reference solver.
//! * [`codec`]: the `(2L+1)`-level uniform quantizer and the dynamic
//!   encoder/decoder pair.
//! * [`engine`]: the synchronous-round quantized gradient tracking algorithm
//!   and its unquantized baseline.
//! * [`analysis`]: step-size and quantization-level tuning, spectral
//!   certificates and per-round diagnostics.

pub mod analysis;
pub mod codec;
pub mod engine;
pub mod error;
mod linalg;
pub mod problems;
pub mod topology;

pub use analysis::{DiagnosticsRecord, TuningReport};
pub use codec::{ChannelCodec, ScalingSchedule, UniformQuantizer};
pub use engine::{Engine, Mode, RunConfig, Trajectory};
pub use error::{Error, Result};
pub use problems::{AggregativeProblem, QuadraticProblem, ReferenceSolution, RegularityConstants};
pub use topology::MixingMatrix;
