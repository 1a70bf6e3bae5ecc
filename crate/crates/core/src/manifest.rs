//! Reproducibility record written next to every output.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::blend::{DownsampleMode, MaskKind};
use crate::denoisers::{Denoiser, DenoiserCapabilities};
use crate::error::{Error, Result};
use crate::grid::Coord;
use crate::prompts::{parse_prompt_grid, Conditioning};
use crate::sampler::{GuidanceConfig, RunConfig, Schedule, StepRecord};

pub const ENGINE: &str = concat!("tiledworld ", env!("CARGO_PKG_VERSION"));

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConditioningRecord {
    Uniform { prompt: String },
    Grid { cell_size: usize, grid: String },
}

/// Every field of a [`RunConfig`], defaults materialised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub dims: Coord,
    pub channels: usize,
    pub tile: usize,
    pub stride: usize,
    pub seed: u64,
    pub steps: usize,
    pub times: Vec<f64>,
    pub guidance: f64,
    pub blend: MaskKind,
    pub threads: usize,
    pub conditioning: ConditioningRecord,
}

impl RunSettings {
    pub fn from_config(c: &RunConfig) -> Self {
        Self {
            dims: c.dims,
            channels: c.channels,
            tile: c.tile_size,
            stride: c.stride,
            seed: c.seed,
            steps: c.schedule.steps(),
            times: c.schedule.times().to_vec(),
            guidance: c.guidance.scale,
            blend: c.blend,
            threads: c.threads,
            conditioning: match &c.conditioning {
                Conditioning::Uniform(p) => ConditioningRecord::Uniform { prompt: p.clone() },
                Conditioning::Grid(g) => ConditioningRecord::Grid {
                    cell_size: g.cell_size(),
                    grid: g.to_string(),
                },
            },
        }
    }

    pub fn to_config(&self) -> Result<RunConfig> {
        let schedule = Schedule::from_times(self.times.clone())?;
        if schedule.steps() != self.steps {
            return Err(Error::Config(format!(
                "manifest lists {} steps but {} times",
                self.steps,
                self.times.len()
            )));
        }
        let conditioning = match &self.conditioning {
            ConditioningRecord::Uniform { prompt } => Conditioning::Uniform(prompt.clone()),
            ConditioningRecord::Grid { cell_size, grid } => Conditioning::Grid(parse_prompt_grid(grid, *cell_size)?),
        };
        Ok(RunConfig {
            dims: self.dims,
            channels: self.channels,
            tile_size: self.tile,
            stride: self.stride,
            seed: self.seed,
            schedule,
            guidance: GuidanceConfig::new(self.guidance),
            conditioning,
            blend: self.blend,
            threads: self.threads,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserRecord {
    pub spec: String,
    pub name: String,
    pub capabilities: DenoiserCapabilities,
}

impl DenoiserRecord {
    pub fn new(spec: &str, d: &dyn Denoiser) -> Self {
        Self {
            spec: spec.to_string(),
            name: d.name(),
            capabilities: d.capabilities(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RunMode {
    Generate,
    TwoStage {
        upsample: usize,
        stage2_channels: usize,
        stage2_denoiser: DenoiserRecord,
        decoder: String,
        structure_weights: Vec<f32>,
        structure_bias: f32,
        mask_mode: DownsampleMode,
    },
    Expand {
        ground_truth: String,
        ground_truth_sha256: String,
        /// Explicit keep mask; absent when the input was placed at `place`.
        mask: Option<String>,
        mask_sha256: Option<String>,
        place: Option<Coord>,
        sigma: f64,
        resample: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub engine: String,
    pub settings: RunSettings,
    pub denoiser: DenoiserRecord,
    #[serde(flatten)]
    pub mode: RunMode,
    pub tiles: usize,
    pub denoiser_calls: u64,
    /// Point-cloud export threshold, when a point cloud was written.
    pub ply_threshold: Option<f32>,
    pub outputs: Vec<OutputRecord>,
    pub steps: Vec<StepRecord>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest is always serialisable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Manifest path conventionally stored beside `output`.
    pub fn path_for(output: &Path) -> std::path::PathBuf {
        let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        output.with_file_name(name)
    }
}
