//! Arbitrary-size 3D world generation from a fixed-size tile denoiser.
//!
//! The world is covered by overlapping cubic tiles. Every sampling step
//! denoises each tile independently and fuses the results with cosine
//! weights, so a model that only ever sees `S^3` blocks can fill a lattice of
//! any extent. See [`sampler::run_diffusion`] for the main entry point.

pub mod blend;
pub mod container;
pub mod denoisers;
pub mod error;
pub mod grid;
pub mod inpaint;
pub mod manifest;
pub mod noise;
pub mod oracle;
pub mod pipeline;
pub mod prompts;
pub mod sampler;
pub mod tiling;

pub use blend::{BlendMask, DownsampleMode, MaskKind};
pub use denoisers::{
    build_denoiser, CountingDenoiser, Denoiser, DenoiserCapabilities, DenoiserRequest, DenoiserResponse, DenoiserSpec,
};
pub use error::{Error, Result};
pub use grid::{Coord, DenseWorld, SparseWorld};
pub use inpaint::KeepMask;
pub use manifest::RunManifest;
pub use prompts::{Conditioning, PromptGrid};
pub use sampler::{run_diffusion, GuidanceConfig, RunConfig, RunOutput, Schedule, StepRecord};
pub use tiling::TileLayout;
