pub mod agent;
pub mod backend;
pub mod capability;
pub mod sample;
pub mod harness;
