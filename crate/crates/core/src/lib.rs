pub mod error;
pub mod numeric;

pub use error::{Error, Result};
pub mod resources;
pub mod corpus;
pub mod model;
pub mod regularizers;
pub mod training;
pub mod analysis;
pub mod synthetic;
