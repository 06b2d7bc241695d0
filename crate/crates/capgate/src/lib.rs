//! Quantifying the stochastic reliability of threshold-based process-capability
//! approval decisions.
//!
//! A part dimension is approved when an estimated capability index (the classical
//! `C_pk` or its percentile-based cousin `C_Npk`) clears a contractual threshold
//! `c0`. Because the index is estimated from a finite sample, the approval decision
//! is itself a random variable: near the threshold it degenerates into a coin flip
//! whose bias is governed by `√n (C_true − c0) / σ_C`. This crate provides
//!
//! * exact and sample-based capability index computation ([`capability`]),
//! * the normal-theory asymptotics of the approval probability — closed-form
//!   `σ_C`, instability bands, and risk-adjusted margins ([`asymptotics`]),
//! * alternative approval rules (deterministic, margin-adjusted, lower confidence
//!   bound, predictive probability) ([`decision`]),
//! * Monte Carlo estimation of misclassification risk over `(C_true, n)` grids,
//!   scaling collapse onto the asymptotic curve, and sampling-distribution
//!   histograms ([`simulation`]),
//! * bootstrap flip-rate analysis of real measurement datasets ([`resampling`]),
//! * dataset ingestion, normality screening, threshold-concentration tables, and
//!   synthetic dataset generation ([`dataset`]).
//!
//! All randomness flows through the deterministic, splittable generator in [`rng`];
//! every simulation result is bit-reproducible for a fixed seed, independent of
//! thread count.

// Reference constants are written with their full derivation precision; the
// digits beyond f64 resolution document the target value, not a typo.
#![allow(clippy::excessive_precision)]
// Validation deliberately uses negated comparisons (`!(x > 0.0)`) so that NaN
// fails closed instead of slipping through an inverted `<=`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod capability;
pub mod dataset;
pub mod decision;
pub mod dist;
pub mod error;
pub mod resampling;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
