//! Scene storage, patch extraction, augmentation, splits and synthetic data.

pub mod augment;
pub mod cube;
pub mod dataset;
pub mod patch;
pub mod split;
pub mod synth;

pub use augment::{augment, AugmentOp};
pub use cube::{read_cube, write_cube, HsiCube, Normalization, SplitTag};
pub use dataset::PatchSet;
pub use patch::{extract_patch, extract_window, Patch};
pub use split::{build_split, SplitManifest};
pub use synth::gen_synthetic;
