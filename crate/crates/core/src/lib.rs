pub mod analysis;
pub mod bridge;
pub mod cli;
pub mod error;
pub mod features;
pub mod game;
pub mod record;
pub mod render;
pub mod shapley;

pub use error::{Error, ErrorClass, Result};
