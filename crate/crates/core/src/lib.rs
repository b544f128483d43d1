pub mod closed_form;
pub mod engine;
pub mod error;
pub mod expr;
pub mod model;
pub mod piecewise;
pub mod quad;
pub mod special;
pub mod transform;
pub mod stats;
pub mod lattice;
pub mod cli;
