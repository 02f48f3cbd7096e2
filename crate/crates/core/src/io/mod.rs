//! File formats: slices, configs, manifests and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod image_io;
pub mod manifest;

pub use checkpoint::Checkpoint;
pub use config::Config;
pub use image_io::{read_image, write_image, ImageFormat};
pub use manifest::{Degradation, ImageType, Manifest, ManifestEntry, Split};
