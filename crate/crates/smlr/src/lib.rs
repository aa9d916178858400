//! Sparse meta-learning at desk scale.
//!
//! `smlr` implements the Reptile first-order meta-learner together with
//! magnitude-based network pruning schedules (one-shot dense-sparse-dense and
//! multi-round iterative hard thresholding), episodic N-way K-shot task
//! generation, and closed-form generalization-gap calculators for dense and
//! sparse meta-initializations.
//!
//! The crate is organized as:
//!
//! - [`ndcore`] — dense tensors, fully-connected networks, losses, exact
//!   reverse-mode gradients, and SGD steps. Everything downstream builds on it.
//! - [`tasks`] — episodic task sources (Gaussian blobs, sinusoid regression,
//!   PGM image directories) with disjoint meta-train/meta-test class splits.
//! - [`reptile`] — the inner-loop adaptation and the Reptile outer update.
//! - [`pruning`] — layer-wise top-k magnitude masks, masked Reptile rounds,
//!   and the pretrain/prune/retrain schedule driver.
//! - [`bounds`] — explicit-constant generalization gap bounds.
//! - [`harness`] — experiment configs, seeded runs, episodic evaluation with
//!   confidence intervals, CSV metrics, checkpoints, and gap curves.
//!
//! All randomness flows through explicitly seeded [`stream`] RNGs, so every
//! artifact is a pure function of (configuration, master seed).

pub mod bounds;
pub mod error;
pub mod harness;
pub mod ndcore;
pub mod pruning;
pub mod reptile;
pub mod stream;
pub mod tasks;

pub use error::{Error, Result};
