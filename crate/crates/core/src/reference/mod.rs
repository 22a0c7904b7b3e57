//! Schedule-level simulators of the two baseline dataflows.
//!
//! * [`ws_simulate`]: weight-stationary array fed by the Conv-to-GeMM stream
//!   through triangular input FIFOs (one PE column, `N = 1`).
//! * [`rs_simulate`]: row-stationary `K x H_O` array performing 1-D
//!   convolutions with vertical psum accumulation.

mod rs;
mod ws;

pub use rs::{rs_simulate, rs_simulate_with, RsArrayConfig};
pub use ws::{ws_simulate, ws_simulate_with, WsArrayConfig};
