pub mod cli;
pub mod config;
pub mod dynamics;
pub mod galerkin;
pub mod initial;
pub mod io;
pub mod potentials;
pub mod render;
pub mod semigroup;
pub mod solver;
pub mod spectral;
pub mod stationary;
