//! Adaptive input estimation for small marine vehicles.
//!
//! Joint estimation of an unknown deterministic input and the state of a
//! SISO linear discrete-time system, by coupling a retrospective-cost input
//! subsystem to a Kalman filter. Ships with identified surge and heading
//! models of a micro surface vehicle, step-response identification, GPS and
//! compass measurement geometry, trajectory reconstruction and a seeded
//! simulator that stands in for field logs.

pub mod batch;
pub mod error;
pub mod linsys;
pub mod pipeline;
pub mod rcie;
pub mod sim;
pub mod sysid;
pub mod vehicle;

pub use error::{Error, Result};
