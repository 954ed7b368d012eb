//! Vector fields with a prescribed attracting level set, conservative
//! stabilizing perturbations, and numerical verification of their behavior.

pub mod exprlang;
pub mod exterior;
pub mod fieldforge;
pub mod flow;
pub mod verify;
pub mod specfile;
pub mod cli;
