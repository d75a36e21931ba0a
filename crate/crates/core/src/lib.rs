pub mod baselines;
pub mod cli;
pub mod eval;
pub mod geometry;
pub mod inference;
pub mod potentials;
pub mod render;
pub mod simworld;
pub mod templates;
