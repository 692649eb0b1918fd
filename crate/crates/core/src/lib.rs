pub mod assignment;
pub mod config;
pub mod datagen;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod network;
pub mod numerics;
pub mod objectives;
pub mod trainer;

pub use error::{Error, Result};
