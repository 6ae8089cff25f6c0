//! patchfunnel: noise reduction for agentic automated program repair.
//!
//! An agentic repair pipeline that attempts every incoming bug and forwards
//! every generated patch buries its human reviewers. This crate implements
//! the two policies that cut that noise and the measurement tooling to judge
//! them:
//!
//! * [`abstention`] — predict, from the bug report alone, whether an attempt
//!   is worthwhile (attempt iff P(success) ≥ τ);
//! * [`validation`] — run each produced patch through deterministic gates
//!   (empty patch, regression signal, final test heuristic) and an LLM judge,
//!   with binary or confidence-percentile acceptance;
//! * [`funnel`] — compose the two sequentially, count survivors per stage,
//!   and optionally majority-vote one patch per bug;
//! * [`metrics`] — filtered success@k estimators, precision/recall sweeps,
//!   distribution distances, and an expected-net-value model;
//! * [`corpus`] — the JSONL data model for bugs, trajectories, and every
//!   artifact the pipeline emits;
//! * [`gateway`] — the model-backend abstraction: a deterministic scripted
//!   backend for offline runs, an HTTP backend for live ones, and a
//!   transparent response cache.
//!
//! Everything is deterministic given a fixed backend: the same corpus, the
//! same configuration and the same scripted rules always produce the same
//! bytes.

pub mod abstention;
pub mod corpus;
pub mod diff;
mod error;
pub mod fsutil;
pub mod funnel;
pub mod gateway;
pub mod metrics;
pub mod parallel;
pub mod validation;

pub use error::{Error, Result};
