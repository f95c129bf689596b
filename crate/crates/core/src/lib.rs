//! Differentiable 3D Gaussian splatting with a physics-based underwater
//! medium model: rendering, medium-parameter recovery, and water-free
//! restoration on synthetic scenes.

pub mod appearance;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod math;
pub mod medium;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod restoration;
pub mod rasterizer;
pub mod scene;
pub mod sim;
pub mod training;
pub mod sh;

pub use error::{Error, Result};
pub use rasterizer::{RenderOutput, RenderSettings};
pub use scene::{Camera, GaussianCloud, GaussianPrimitive, ImageBuffer};
