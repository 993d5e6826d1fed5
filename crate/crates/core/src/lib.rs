//! Matrix-game laboratory for multi-agent policy-sharing architectures:
//! Specialisation/Synchronisation games, six policy variants including
//! agent-conditioned hypernetworks with gradient decoupling, REINFORCE
//! training, and diagnostics (gradient conflict, gradient variance,
//! behavioural diversity).

pub mod diag;
pub mod game;
pub mod nn;
pub mod policy;
pub mod train;
