pub mod cohort;
pub mod encoders;
pub mod error;
pub mod feedback;
pub mod fusion;
pub mod gan;
pub mod imageio;
pub mod mbti;
pub mod pipeline;
pub mod service;
pub mod store;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
