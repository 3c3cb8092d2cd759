pub mod arm_sim;
pub mod dataset;
pub mod experiments;
pub mod geometry;
pub mod metrics;
pub mod neural;
pub mod norm;
pub mod render;
pub mod seed;
pub mod servo;
