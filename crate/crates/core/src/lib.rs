//! Thermal simulation of small office zones with personal comfort devices and
//! a model predictive controller for the central HVAC.

pub mod comfort;
pub mod error;
pub mod experiment;
pub mod mpc;
pub mod scenario;
pub mod sim;
pub mod spot;
pub mod thermal;
pub mod trace;

pub use error::{Error, Result};
