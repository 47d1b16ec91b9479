pub mod datagen;
pub mod eval;
pub mod imaging;
pub mod inference;
pub mod models;
pub mod pipeline;
mod seeds;
pub mod tensor;
pub mod training;

pub use seeds::{derive_seed, sha256_hex};
