pub mod contour;
pub mod config;
pub mod diagnostics;
pub mod equilibrium;
pub mod error;
pub mod inference;
pub mod io;
pub mod logspace;
pub mod machine;
pub mod magnetostatics;
pub mod nested;
pub mod pipeline;
pub mod profiles;
pub mod report;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
