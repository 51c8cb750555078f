//! One-shot imitation through gradient-based meta-learning.
//!
//! A policy is meta-trained across many reaching tasks so that a single
//! gradient step on one demonstration adapts it to a task it has never seen.

pub mod autodiff;
pub mod baselines;
pub mod cli;
pub mod data;
pub mod env;
pub mod expert;
pub mod gradcheck;
pub mod meta;
pub mod nn;
