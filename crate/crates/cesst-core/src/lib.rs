//! Desk-scale spectral reconstruction from RGB.
//!
//! Implements the CESST architecture — per-channel spectral embedding through
//! independent feature extraction blocks, dual spatio-spectral attention, and
//! combinatorial six-branch spectrum fusion — together with its training
//! objective, evaluation metrics, synthetic data tooling, and a complexity
//! benchmark harness. Everything runs on a small from-scratch tensor engine
//! with reverse-mode differentiation so the whole stack is checkable against
//! finite differences.

pub mod attention;
pub mod blocks;
pub mod data;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod error;
pub mod gradcheck;
pub mod params;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
