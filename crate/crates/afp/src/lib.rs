//! Antifragile planning agent: a propositional planning core with hazard-aware
//! plan/system classification (fragile / robust / resilient), a MAPE-K runtime
//! that uncovers hidden actions in response to hazards, and a deterministic
//! simulation harness with a grid-robot case study.

pub mod classifier;
pub mod domain;
pub mod generator;
pub mod gridbot;
pub mod mape;
pub mod oracle;
pub mod planner;
pub mod render;
pub mod scenario;
pub mod sim;
pub mod state;
pub mod trace;
