//! Aligned training data: procedural anchors, the two artifact simulators,
//! mask compositing and the on-disk dataset format.

mod dataset;
mod mask;
mod procedural;
mod simulate;

pub use dataset::{
    build_dataset, generate_quad, generate_quads, load_anchor_dir, ArtifactDomain, DatasetConfig,
    DatasetManifest, ManifestEntry, ManifestHeader, Quad, GENERATOR_VERSION, HELD_OUT_FIRST_INDEX,
    MANIFEST_FILE,
};
pub use mask::{apply_mask_aug, gen_mask, BinaryMask, MaskKind, MaskSpec};
pub use procedural::gen_procedural_real;
pub use simulate::{
    simulate_gan_artifact, simulate_gan_artifact_with, simulate_vae_artifact,
    simulate_vae_artifact_with, SimulatorConfig,
};
