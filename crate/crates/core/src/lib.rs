pub mod encoder;
pub mod cli;
pub mod env;
pub mod marl;
pub mod nn;
pub mod prompt;
pub mod rng;
pub mod sac;
