//! Pallet tracking and fork control simulation library.
//!
//! The crate models a forklift unloading task end to end: rigid-frame
//! kinematics of the mast and fork ([`geom`]), a synthetic depth camera and
//! point-cloud operations ([`cloud`]), pairwise registration for pose
//! tracking ([`icp`]), the alignment controller that drives fork tilt and
//! height from registration deltas ([`tracker`]), the withdrawal profile
//! ([`withdraw`]), a quasi-static contact plant ([`simworld`]), and a
//! scenario harness that ties them together ([`harness`]).

pub mod cloud;
pub mod geom;
pub mod harness;
pub mod icp;
pub mod simworld;
pub mod tracker;
pub mod withdraw;
