//! Author style profiling, persona-driven story generation, and evaluation.
//!
//! The library models a two-stage pipeline:
//!
//! 1. **Profiling** — an author's earlier stories are distilled into an
//!    *Author Writing Sheet*: per-category claims about the author's style,
//!    each backed by story evidence. Sheets are built either iteratively
//!    (one story at a time, merged step by step) or in a single summary pass.
//! 2. **Generation & evaluation** — the sheet (or its summary counterpart)
//!    is turned into a persona description and concrete story rules, which
//!    steer story generation for held-out writing prompts. Outputs are
//!    compared against a non-personalized baseline by a pairwise judge and
//!    by traditional overlap/embedding metrics.
//!
//! All LLM traffic flows through [`gateway`], which supports a live
//! OpenAI-compatible endpoint and deterministic mock backends so the whole
//! pipeline can run offline and reproducibly.

pub mod corpus;
pub mod fixtures;
pub mod gateway;
pub mod generator;
pub mod judge;
pub mod metrics;
pub mod pipeline;
pub mod profiler;
pub mod prompts;
pub mod retrieval;
pub mod stylist;
pub mod tagparse;
