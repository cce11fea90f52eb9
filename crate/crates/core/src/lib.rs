//! Simulation and analysis of a slow-light single-photon buffer built from a
//! coupled-resonator optical waveguide (CROW).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod buffer;
pub mod config;
pub mod crow_model;
pub mod detection;
pub mod entanglement;
pub mod error;
pub mod lsq;
pub mod pair_source;
pub mod runner;
pub mod seeding;
pub mod wavepacket;

pub use error::{Error, Result};
