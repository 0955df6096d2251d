//! Coordinated voltage and frequency control of wind power park modules.
//!
//! The crate covers the nonlinear two-PMSG plant with its grid equivalent,
//! linearization into a mixed-sensitivity extended system, H-infinity
//! state-feedback synthesis through an LMI solved by a small interior-point
//! SDP solver, the non-model-based grid services (droop, deloading, hidden
//! inertia), a vector-control baseline and a fixed-step simulation engine.

pub mod control_model;
pub mod error;
pub mod hinf;
pub mod network;
pub mod params;
pub mod plant;
pub mod reference;
pub mod sdp;
pub mod services;
pub mod sim;
pub mod vector_control;

pub use error::{Error, Result};
