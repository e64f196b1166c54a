pub mod ablation;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod extract;
pub mod fusion;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod synthetic;
pub mod tensor;
pub mod text;
pub mod train;
