//! Safe online learning with Gaussian-process control barrier functions.
//!
//! The crate models the barrier mismatch with an affine-structured GP, turns
//! the resulting chance constraint into a second-order cone program, decides
//! pointwise feasibility in closed form, and runs an event-triggered learning
//! loop that collects data whenever feasibility is about to be lost.

pub mod cone;
pub mod feasibility;
pub mod filter;
pub mod gp;
pub mod harness;
pub mod learner;
pub mod linalg;
pub mod plants;
