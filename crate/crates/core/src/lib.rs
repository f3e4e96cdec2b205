//! Kernel-regularized clutter cancellation for pulse trains with irregular
//! pulse intervals.
//!
//! The received signal is modelled as clutter on a range-Doppler grid plus
//! sparse targets and noise. [`solver::filter_clutter`] estimates the clutter
//! with a matrix-free, FFT-backed preconditioned conjugate gradient and
//! subtracts it; [`targets::estimate_targets`] then recovers targets from the
//! filtered signal. Physical quantities are `f64`; the operators, solver and
//! metrics are generic over [`scalar::Real`] (`f32` or `f64`).

pub mod config;
pub mod error;
pub mod grid;
pub mod harness;
pub mod io;
pub mod kernel;
pub mod metrics;
pub mod operators;
pub mod scalar;
pub mod scene;
pub mod solver;
pub mod targets;
pub mod waveform;

pub use error::{Error, Result};

pub type C32 = num_complex::Complex<f32>;
pub type C64 = num_complex::Complex<f64>;

pub type ClutterOperatorF32 = operators::ClutterOperator<f32>;
pub type ClutterOperatorF64 = operators::ClutterOperator<f64>;
pub type PulseTrainF32 = waveform::PulseTrain<f32>;
pub type PulseTrainF64 = waveform::PulseTrain<f64>;
pub type FilterOutputF32 = solver::FilterOutput<f32>;
pub type FilterOutputF64 = solver::FilterOutput<f64>;
