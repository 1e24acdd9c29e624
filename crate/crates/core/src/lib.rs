//! Selective multi-agent debate: decide per question whether a single
//! self-critiquing model answer is trustworthy, and escalate to a debate only
//! when it is not.

pub mod protocol;
pub mod features;
pub mod loss;
pub mod classifier;
pub mod backend;
pub mod debate;
pub mod eval;
