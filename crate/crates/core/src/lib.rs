//! Cooperative tracking of a leader robot by a fleet of unicycles that talk
//! over a directed graph.
//!
//! The crate is organised bottom-up:
//!
//! * [`network`]: graphs, the coupling matrix `H` and its diagonal scaling `D`;
//! * [`kinematics`]: unicycle poses, body-frame rotations, leader signals and
//!   the leader-relative error coordinates;
//! * [`controllers`]: the continuous and sampled-data distributed laws;
//! * [`certificates`]: Lyapunov functions and all derived constants;
//! * [`simulation`]: deterministic RK4 closed-loop integration and CSV logs;
//! * [`verification`]: monitors that check the certificates along trajectories;
//! * [`scenario`], [`report`], [`commands`]: configuration files and the
//!   operations behind the command-line tool.
//!
//! ```
//! use coop_track::network::{DirectedNetwork, Edge, build_coupling_matrix, find_diagonal_scaling};
//!
//! let net = DirectedNetwork::from_edges(2, &[Edge::new(0, 1, 1.0), Edge::new(1, 2, 1.0)]).unwrap();
//! let h = build_coupling_matrix(&net).unwrap();
//! let cert = find_diagonal_scaling(&h).unwrap();
//! assert!(cert.lambda_min_q > 0.0);
//! ```

// `!(x > 0.0)` style guards are deliberate: NaN must be rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificates;
pub mod commands;
pub mod controllers;
pub mod error;
pub mod integrator;
pub mod kinematics;
pub mod network;
pub mod quadrature;
pub mod report;
pub mod scenario;
pub mod simulation;
pub mod verification;

pub use error::{Error, Result};
