//! Black-start restoration for DER-led distribution feeders: feeder model,
//! inrush feasibility, restoration MILP construction, and the
//! receding-horizon control loop.

pub mod builder;
pub mod emt;
pub mod engine;
pub mod error;
pub mod feeder;
pub mod ids;
pub mod inrush;
pub mod plan;
pub mod report;
pub mod scenario;
pub mod state;
pub mod testkit;
pub mod util;

pub use error::CoreError;
