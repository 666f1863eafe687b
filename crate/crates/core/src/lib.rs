pub mod baseline;
pub mod cli;
pub mod model;
pub mod poly;
pub mod solvers;
pub mod sos;
pub mod verify;
