//! Monte Carlo link-level simulator for a monostatic ISAC base station
//! serving bursty Poisson traffic.
//!
//! The modules follow the signal path: [`traffic`] builds the slot schedule,
//! [`policy`] picks a precoder and energy per slot, [`channel`] produces the
//! echoes and the user's SNR, [`detector`] integrates a window and runs the
//! GLRT and CA-CFAR, and [`engine`] turns windows into Monte Carlo estimates
//! and sweeps. [`config`] and [`output`] handle the files around a run.

pub mod channel;
pub mod config;
pub mod detector;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod output;
pub mod policy;
pub mod traffic;
pub mod units;

pub use error::{Error, Result};
