pub mod error;
pub mod estimation;
pub mod image;
pub mod io;
pub mod metrics;
pub mod operator;
pub mod prox;
pub mod simulation;
pub mod solvers;
pub mod stats;
pub mod wavelets;

pub use error::{Result, SpriteError};
pub use image::{ImageGrid, LRExposure, LRStack};
