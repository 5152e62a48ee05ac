//! Unified trajectory prediction and planning for a simulated self-driving
//! vehicle (SDV).
//!
//! The crate covers the full desk-scale stack:
//!
//! - [`scene`] — vectorized driving-scene data model and SDV-centric framing
//! - [`geometry`] — oriented-box collision tests (SAT), time-to-collision,
//!   time headway
//! - [`kinematics`] — unicycle rollout turning jerk/curvature controls into
//!   SDV trajectories
//! - [`diff`] — minimal reverse-mode autodiff over dense `f64` arrays, with
//!   Adam and a cosine learning-rate schedule
//! - [`model`] — the prediction/planning network: PointNet-style element
//!   encoders, a transformer encoder/decoder with learnable query
//!   embeddings, and trajectory/probability heads
//! - [`train`] — winner-takes-all matching losses and the training loop
//! - [`policy`] — inference-time trajectory selection (`MinCost`,
//!   `MinCostCC`)
//! - [`sim`] — closed-loop log-replay simulation, safety/comfort metrics,
//!   and synthetic scenario generation
//!
//! The crate is `no_std`-compatible (requires `alloc`); the default `std`
//! feature only switches float intrinsics from `libm` to the standard
//! library. File formats and the command-line frontend live in the
//! `pathset-cli` companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub(crate) mod math;

pub mod diff;
pub mod geometry;
pub mod kinematics;
pub mod model;
pub mod policy;
pub mod scene;
pub mod sim;
pub mod train;

/// Tick rate shared by histories, futures, and simulation.
pub const TICK_HZ: u32 = 10;
/// Simulation / rollout timestep in seconds (`1 / TICK_HZ`).
pub const DT: f64 = 0.1;
