//! Optimal tracking for switched systems with a fixed mode sequence.
//!
//! Switching times are moved onto a fixed transformed-time grid, per-step
//! costate networks are trained backward with a single-network adaptive
//! critic, and the switching times are chosen by one of three methods:
//! scalar minimization of the propagated cost, analytic integration of the
//! costate field, or an exhaustive sweep.

pub mod basis;
pub mod document;
pub mod error;
pub mod model;
pub mod oracle;
pub mod problems;
pub mod rollout;
pub mod snac;
pub mod switchopt;
pub mod transform;

pub use error::{Error, Result};
pub use model::{ProblemSpec, SwitchedTrackingProblem};
pub use snac::{CostateNetwork, TrainConfig};
pub use transform::{SwitchVector, TransformedGrid};
