//! Image files, synthetic rain and datasets.

mod dataset;
mod image_io;
mod rainsim;

pub use dataset::{
    gen_dataset, procedural_background, Dataset, DatasetManifest, GenSpec, ManifestEntry, Split, MANIFEST_FILE,
};
pub use image_io::{from_rgb8, load_image, save_image, to_rgb8};
pub use rainsim::{rasterize, synth_rain, AngleSpec, RainPair, Streak, StreakSpec};
