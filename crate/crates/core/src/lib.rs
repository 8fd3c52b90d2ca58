//! Plug-and-play voltage control for DC microgrids: local LMI synthesis, global stability
//! certification, closed-loop simulation and the classical baselines it is compared against.

pub mod baselines;
pub mod certification;
pub mod error;
pub mod model;
pub mod scenario;
pub mod simulator;
pub mod sweep;
pub mod synthesis;
