//! Deterministic multi-AUV fleet simulator.
pub mod acoustics;
pub mod command;
pub mod control;
pub mod dynamics;
pub mod estimator;
pub mod events;
pub mod geometry;
pub mod mission;
pub mod rng;
pub mod scenario;
pub mod sensors;
pub mod sim;
