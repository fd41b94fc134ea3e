pub mod autograd;
pub mod error;
pub mod geo;
pub mod imagery;
pub mod model;
pub mod pipeline;
pub mod reliability;
pub mod roadcut;
pub mod sampling;
pub mod synthgen;

pub use error::{Error, Result};
