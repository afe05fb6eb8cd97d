//! Cube I/O, synthetic scenes, PCA band reduction, patch extraction and
//! disjoint splitting.

mod cube;
mod patches;
mod pca;
mod split;
mod synth;

pub use cube::{HsiCube, CUBE_DTYPE, CUBE_MAGIC};
pub use patches::{center_offset, cut_patches, extract_patches, total_positions, valid_centers, window_origin, Center, PatchSet};
pub use pca::{fit_pca, PcaModel};
pub use split::{disjoint_split, part_sizes, SplitAssignment};
pub use synth::{generate_synthetic, Layout, SignatureParams, SynthScene, SynthSpec};
