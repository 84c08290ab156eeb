//! Representation models for partially ordered event sequences.
//!
//! A partially ordered sequence is a sequence of time steps where some
//! steps hold a set of events whose internal order is unknown. This crate
//! provides:
//!
//! - equal-time layers that pool each event set into one vector
//!   (averaging, deep set, attention-LSTM, set transformer, and a set
//!   transformer biased by event-type transition probabilities);
//! - LSTM and transformer sequence backbones over the pooled sequence,
//!   with multi-label and next-token heads;
//! - transition-matrix estimation from the ordered portion of a corpus;
//! - an event-stream binning and batching pipeline plus a synthetic
//!   data generator with a known ground-truth ordering;
//! - a deterministic training/evaluation engine (Adam, macro-F1,
//!   perplexity, Welch comparisons, probability ensembling).
//!
//! Everything is f64 and deterministic given a seed. Multi-run fan-out
//! uses rayon behind the `parallel` feature (on by default) with a
//! sequential fallback that produces bit-identical results.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod layers;
pub mod model;
mod nn;
pub mod parallel;
mod persist;
pub mod train;
pub mod transition;

pub use error::{Error, Result};
