//! Fast and safe data-driven overtaking planner for autonomous racing.

pub mod bench;
pub mod cluster;
pub mod gp;
pub mod mpc;
pub mod planner;
pub mod predictor;
pub mod qp;
pub mod seed;
pub mod selection;
pub mod sim;
pub mod track;
