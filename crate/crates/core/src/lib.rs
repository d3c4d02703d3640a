//! CPU training and rendering stack for multi-view consistent 3D-aware
//! image synthesis: tensor autodiff, camera geometry, neural scene
//! representation, volume rendering, stereo warping, and the trainer.

pub mod camera;
pub mod elem;
pub mod error;
pub mod gradcheck;
pub mod imgio;
pub mod losses;
pub mod nets;
pub mod render;
pub mod warp;
pub mod scene;
pub mod tensor;
pub mod train;

pub use elem::Elem;
pub use error::{Error, Result};
pub use tensor::{GradStore, Tensor};
