//! Swept-area-aware trajectory planning and MPC tracking for multi-axle
//! swerve-drive vehicles.

pub mod banded;
pub mod drivetrain;
pub mod export;
pub mod geometry;
pub mod minco;
pub mod mpc;
pub mod optim;
pub mod pipeline;
pub mod planner;
pub mod qp;
pub mod scenario;
pub mod sim;
pub mod sweptfield;
pub mod worldmodel;
