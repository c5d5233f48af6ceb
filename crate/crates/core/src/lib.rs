pub mod data;
pub mod error;
pub mod eval;
pub mod geo;
pub mod knowledge;
pub mod models;
pub mod neural;
pub mod pipeline;
pub mod predict;
pub mod roadnet;

pub use error::{Error, Result};
