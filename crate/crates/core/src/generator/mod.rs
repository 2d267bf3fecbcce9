//! Desk-scale style-based generator.
//!
//! A mapping MLP `G_m: R^d -> R^d` produces style vectors; the synthesis
//! network starts from a learned `4x4` constant and each of its `L` layers
//! doubles the resolution, so `L = 3` gives `32x32` grayscale images. Layer
//! `i` is modulated by row `i` of an [`ExtendedLatent`] and receives its own
//! additive noise image.

mod bundle;
mod decoder;
mod image;
mod latent;

pub use bundle::{
    mean_latent, noise_name, GeneratorBundle, GeneratorConfig, LRELU_SLOPE, MAPPING_SLOPE,
};
pub use decoder::{train_decoder, DecoderReport, DecoderTraining};
pub use image::Image;
pub use latent::ExtendedLatent;
