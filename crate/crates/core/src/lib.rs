//! Joint generation of a continuous vector and a token sequence from one
//! shared backbone, each modality on its own clock.
//!
//! The vector side is a rectified flow integrated with Euler steps; the
//! token side is an insertion process that reverses random deletion. A
//! toy transformer with LoRA adapters, a gated text-time pathway, and four
//! output heads is trained on synthetic attribute/caption pairs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod backbone;
pub mod cli;
pub mod contflow;
pub mod editflow;
pub mod inference;
pub mod ndcore;
pub mod rng;
pub mod schedules;
pub mod synthdata;
pub mod trainer;
