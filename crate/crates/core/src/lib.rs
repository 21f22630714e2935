pub mod config;
pub mod error;
pub mod fit;
pub mod maximal;
pub mod mesh;
pub mod norms;
pub mod parallel;
pub mod parametrix;
pub mod resolvent;
pub mod rng;
pub mod scenarios;
pub mod solver;
pub mod specfun;

pub use error::{Error, Result};
