//! An executable laboratory for the TrIM (triangular input movement) systolic
//! array dataflow.
//!
//! The crate bundles:
//!
//! * [`conv`]: ground-truth 2-D convolution and the Conv-to-GeMM lowering.
//! * [`model`]: closed-form cost model for the WS, RS and TrIM dataflows.
//! * [`trim`]: a cycle-accurate simulator of the `K x K` TrIM array.
//! * [`reference`]: schedule-level WS and RS simulators.
//! * [`dse`]: design-space sweeps, identity verification and report emission.
//!
//! All arithmetic is exact. Feature maps hold signed integers and the cost
//! model works in integers and rationals; floating point only appears when a
//! value is rendered for display.

pub mod conv;
pub mod dse;
pub mod model;
pub mod reference;
pub mod sim;
pub mod trim;

pub use conv::{
    conv_to_gemm, gemm_reference, golden_conv, ConvShape, FeatureMap, GemmOperands, Kernel,
    ShapeError,
};
pub use model::{AlphaModel, DataflowKind, MetricSet, ModelError};
pub use sim::{Counters, SimError, SimResult};
