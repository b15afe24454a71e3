//! Filtered control barrier functions for a unicycle avoiding a circular
//! obstacle, with HOCBF and smoothness-penalized HOCBF baselines.

pub mod constraints;
pub mod model;
pub mod qp;
pub mod sim;
pub mod verify;
