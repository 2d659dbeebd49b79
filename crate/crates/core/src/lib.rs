pub mod cli;
pub mod cloud;
pub mod evalkit;
pub mod geometry;
pub mod network;
pub mod noising;
pub mod refine;
pub mod rng;
pub mod scenegen;
pub mod training;
