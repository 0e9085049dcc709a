//! Orchestration and evaluation toolkit for two-stage reflect-then-correct
//! response generation in goal-oriented dialogue.
//!
//! The crate is organized around the data flow of a staged pipeline:
//!
//! - [`corpus`] loads and validates dialogue corpora and slices them into
//!   per-turn generation contexts.
//! - [`promptkit`] renders contexts into stage inputs (experience,
//!   reflection, correction) and the annotation prompt.
//! - [`reflection`] defines the inconsistency taxonomy and the serialized
//!   reflection envelope exchanged between stages.
//! - [`backend`] drives text-generation services (HTTP or scripted mock)
//!   with retries, rate limiting, and a persistent generation cache.
//! - [`pipeline`] wires the stages together: experience generation,
//!   annotation, training-data export, and two-pass inference.
//! - [`metrics`] scores predictions with word F1, corpus BLEU, distinct-n,
//!   knowledge F1, goal success, and subgoal failure rate.

pub mod backend;
pub mod corpus;
pub mod metrics;
pub mod pipeline;
pub mod promptkit;
pub mod reflection;

mod hashutil;

pub use hashutil::short_hex_digest;
