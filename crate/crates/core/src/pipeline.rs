//! Two-stage generation: dense structure latent, occupancy, sparse latent,
//! tiled decode, point-cloud export.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::blend::{cached_cosine, BlendMask, DownsampleMode};
use crate::denoisers::{Denoiser, DenoiserSpec};
use crate::error::{Error, Result};
use crate::grid::{coord_of, Coord, DenseWorld, SparseWorld};
use crate::noise::{NoiseSource, STREAM_OCCUPIED};
use crate::prompts::Conditioning;
use crate::sampler::{init_noise, with_threads, Progress, RunConfig, StepRecord, TiledSampler};
use crate::tiling::TileLayout;

pub const DEFAULT_UPSAMPLE: usize = 4;

/// What a tile decoder accepts and produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderContract {
    /// Required input tile size; `None` accepts any.
    pub tile_size: Option<usize>,
    pub in_channels: Option<usize>,
    /// `None` keeps the input channel count.
    pub out_channels: Option<usize>,
    /// Output voxels per input voxel along each axis.
    pub upsample: usize,
    pub probabilistic: bool,
}

impl DecoderContract {
    pub fn output_channels(&self, input: usize) -> usize {
        self.out_channels.unwrap_or(input)
    }
}

/// Deterministic map from one latent tile to its decoded payload.
pub trait TileDecoder: Send + Sync {
    fn name(&self) -> String;
    fn contract(&self) -> DecoderContract;
    /// `block` holds `size^3 * channels` values; the result holds
    /// `(size * upsample)^3 * out_channels`.
    fn decode(&self, block: &[f32], origin: Coord, size: usize, channels: usize) -> Result<Vec<f32>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDecoder;

impl TileDecoder for IdentityDecoder {
    fn name(&self) -> String {
        "identity".into()
    }
    fn contract(&self) -> DecoderContract {
        DecoderContract {
            tile_size: None,
            in_channels: None,
            out_channels: None,
            upsample: 1,
            probabilistic: false,
        }
    }
    fn decode(&self, block: &[f32], _: Coord, _: usize, _: usize) -> Result<Vec<f32>> {
        Ok(block.to_vec())
    }
}

/// Per-voxel `y = M x + b` with `M` stored row-major (`out x in`).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDecoder {
    matrix: Vec<f32>,
    bias: Vec<f32>,
    in_channels: usize,
    out_channels: usize,
}

impl LinearDecoder {
    pub fn new(in_channels: usize, out_channels: usize, matrix: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if matrix.len() != in_channels * out_channels || bias.len() != out_channels {
            return Err(Error::ShapeMismatch(format!(
                "linear decoder {in_channels}->{out_channels} needs {} weights and {out_channels} biases, got {} and {}",
                in_channels * out_channels,
                matrix.len(),
                bias.len()
            )));
        }
        Ok(Self {
            matrix,
            bias,
            in_channels,
            out_channels,
        })
    }

    pub fn apply(&self, x: &[f32], out: &mut [f32]) {
        for (o, y) in out.iter_mut().enumerate() {
            let row = &self.matrix[o * self.in_channels..(o + 1) * self.in_channels];
            let acc: f64 = row.iter().zip(x).map(|(&m, &v)| m as f64 * v as f64).sum();
            *y = (acc + self.bias[o] as f64) as f32;
        }
    }

    /// The decoder applied to every voxel of a whole world at once.
    pub fn apply_world(&self, world: &DenseWorld) -> Result<DenseWorld> {
        if world.channels() != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "linear decoder expects {} channels, world has {}",
                self.in_channels,
                world.channels()
            )));
        }
        let mut out = DenseWorld::zeros(world.dims(), self.out_channels);
        for (x, y) in world
            .data()
            .chunks(self.in_channels)
            .zip(out.data_mut().chunks_mut(self.out_channels))
        {
            self.apply(x, y);
        }
        Ok(out)
    }
}

impl TileDecoder for LinearDecoder {
    fn name(&self) -> String {
        format!("linear({}->{})", self.in_channels, self.out_channels)
    }
    fn contract(&self) -> DecoderContract {
        DecoderContract {
            tile_size: None,
            in_channels: Some(self.in_channels),
            out_channels: Some(self.out_channels),
            upsample: 1,
            probabilistic: false,
        }
    }
    fn decode(&self, block: &[f32], _: Coord, _: usize, _: usize) -> Result<Vec<f32>> {
        let n = block.len() / self.in_channels;
        let mut out = vec![0.0; n * self.out_channels];
        for (x, y) in block.chunks(self.in_channels).zip(out.chunks_mut(self.out_channels)) {
            self.apply(x, y);
        }
        Ok(out)
    }
}

/// Adds `step * (i + j + k)` to every value of the tile with index `(i, j, k)`.
///
/// Each tile is decoded consistently on its own but disagrees with its
/// neighbours, so decoded output shows steps exactly at tile faces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileOffsetDecoder {
    pub step: f32,
}

impl TileDecoder for TileOffsetDecoder {
    fn name(&self) -> String {
        format!("tile-offset({})", self.step)
    }
    fn contract(&self) -> DecoderContract {
        DecoderContract {
            tile_size: None,
            in_channels: None,
            out_channels: None,
            upsample: 1,
            probabilistic: false,
        }
    }
    fn decode(&self, block: &[f32], origin: Coord, size: usize, _: usize) -> Result<Vec<f32>> {
        let index: usize = origin.iter().map(|o| o / size).sum();
        let shift = self.step as f64 * index as f64;
        Ok(block.iter().map(|&v| (v as f64 + shift) as f32).collect())
    }
}

/// Toy structure decoder: per-voxel affine map to one occupancy logit, then
/// nearest-neighbour upsampling by `factor`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineStructure {
    pub weights: Vec<f32>,
    pub bias: f32,
    pub factor: usize,
}

impl AffineStructure {
    /// Channel mean with no bias.
    pub fn mean(channels: usize, factor: usize) -> Self {
        Self {
            weights: vec![1.0 / channels as f32; channels],
            bias: 0.0,
            factor,
        }
    }

    fn logit(&self, x: &[f32]) -> f32 {
        let acc: f64 = self.weights.iter().zip(x).map(|(&w, &v)| w as f64 * v as f64).sum();
        (acc + self.bias as f64) as f32
    }
}

impl TileDecoder for AffineStructure {
    fn name(&self) -> String {
        format!("structure(x{})", self.factor)
    }
    fn contract(&self) -> DecoderContract {
        DecoderContract {
            tile_size: None,
            in_channels: Some(self.weights.len()),
            out_channels: Some(1),
            upsample: self.factor,
            probabilistic: false,
        }
    }
    fn decode(&self, block: &[f32], _: Coord, size: usize, channels: usize) -> Result<Vec<f32>> {
        let f = self.factor;
        let big = size * f;
        let mut out = vec![0.0; big * big * big];
        for (i, o) in out.iter_mut().enumerate() {
            let c = coord_of([big; 3], i);
            let src = ((c[0] / f * size + c[1] / f) * size + c[2] / f) * channels;
            *o = self.logit(&block[src..src + channels]);
        }
        Ok(out)
    }
}

/// Decoder description, e.g. `identity`, `linear:in=4,out=3,m=...,bias=...`,
/// `offset:step=1`, `structure:weights=0.25/0.25/0.25/0.25,bias=0,factor=4`.
pub fn build_decoder(spec: &DenoiserSpec) -> Result<Box<dyn TileDecoder>> {
    let list = |key: &str| -> Result<Option<Vec<f32>>> {
        spec.params
            .get(key)
            .map(|v| {
                v.split('/')
                    .map(|x| {
                        x.trim()
                            .parse::<f32>()
                            .map_err(|_| Error::Config(format!("bad number {x:?} in `{key}`")))
                    })
                    .collect()
            })
            .transpose()
    };
    let int = |key: &str| -> Result<Option<usize>> {
        spec.params
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Config(format!("bad value for `{key}`: {v:?}")))
            })
            .transpose()
    };
    match spec.kind.as_str() {
        "identity" => Ok(Box::new(IdentityDecoder)),
        "linear" => {
            let i = int("in")?.ok_or_else(|| Error::Config("linear decoder needs in=".into()))?;
            let o = int("out")?.unwrap_or(3);
            let m = list("m")?.ok_or_else(|| Error::Config("linear decoder needs m=".into()))?;
            let b = list("bias")?.unwrap_or_else(|| vec![0.0; o]);
            Ok(Box::new(LinearDecoder::new(i, o, m, b)?))
        }
        "offset" => Ok(Box::new(TileOffsetDecoder {
            step: list("step")?.and_then(|v| v.first().copied()).unwrap_or(1.0),
        })),
        "structure" => {
            let weights = list("weights")?.ok_or_else(|| Error::Config("structure decoder needs weights=".into()))?;
            Ok(Box::new(AffineStructure {
                weights,
                bias: list("bias")?.and_then(|v| v.first().copied()).unwrap_or(0.0),
                factor: int("factor")?.unwrap_or(DEFAULT_UPSAMPLE),
            }))
        }
        other => Err(Error::Config(format!(
            "unknown decoder {other:?} (expected identity, linear, offset or structure)"
        ))),
    }
}

/// Decodes every tile of the non-overlapping decode layout independently and
/// writes results back in layout order, so at clamped edges the later tile wins.
pub fn decode_tiled(world: &DenseWorld, decoder: &dyn TileDecoder, tile_size: usize) -> Result<DenseWorld> {
    let contract = decoder.contract();
    if contract.probabilistic {
        return Err(Error::Capability(format!(
            "decoder {} is probabilistic; tiled decode needs a deterministic one",
            decoder.name()
        )));
    }
    if let Some(s) = contract.tile_size {
        if s != tile_size {
            return Err(Error::Capability(format!(
                "decoder {} takes tiles of {s}, asked for {tile_size}",
                decoder.name()
            )));
        }
    }
    let c = world.channels();
    if let Some(ci) = contract.in_channels {
        if ci != c {
            return Err(Error::ShapeMismatch(format!(
                "decoder {} expects {ci} channels, world has {c}",
                decoder.name()
            )));
        }
    }
    let f = contract.upsample.max(1);
    let co = contract.output_channels(c);
    let layout = TileLayout::decode(world.dims(), tile_size)?;
    let big = tile_size * f;
    let expected = big * big * big * co;
    let decoded: Vec<Vec<f32>> = layout
        .origins()
        .par_iter()
        .map(|&o| {
            let tile = world.extract_tile(o, tile_size)?;
            let out = decoder.decode(&tile.values, o, tile_size, c)?;
            if out.len() != expected {
                return Err(Error::ShapeMismatch(format!(
                    "decoder {} returned {} values for tile {o:?}, expected {expected}",
                    decoder.name(),
                    out.len()
                )));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let d = world.dims();
    let mut out = DenseWorld::zeros([d[0] * f, d[1] * f, d[2] * f], co);
    for (o, vals) in layout.origins().iter().zip(&decoded) {
        out.write_tile([o[0] * f, o[1] * f, o[2] * f], big, vals)?;
    }
    Ok(out)
}

/// Coordinates whose single-channel value is strictly positive, as a
/// zero-channel sparse set.
pub fn threshold_occupancy(grid: &DenseWorld) -> Result<SparseWorld> {
    if grid.channels() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "occupancy grid must have 1 channel, got {}",
            grid.channels()
        )));
    }
    let dims = grid.dims();
    let coords = grid
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, _)| coord_of(dims, i).map(|v| v as u32))
        .collect();
    SparseWorld::from_sorted(dims, 0, coords, Vec::new())
}

/// Standard-normal values on the occupied coordinates, keyed by global
/// coordinate on the stage-two stream.
pub fn noise_occupied(occupied: &SparseWorld, channels: usize, seed: u64) -> Result<SparseWorld> {
    let noise = NoiseSource::new(seed, STREAM_OCCUPIED);
    let mut values = Vec::with_capacity(occupied.len() * channels);
    for i in 0..occupied.len() {
        let c = occupied.coord(i);
        values.extend((0..channels).map(|ch| noise.normal(c, ch)));
    }
    SparseWorld::from_sorted(occupied.dims(), channels, occupied.coords().to_vec(), values)
}

/// Dense stage, structure decode, sparse stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageConfig {
    /// Stage-one latent run; its tile size is the stage-two tile size
    /// divided by `upsample`.
    pub stage1: RunConfig,
    pub upsample: usize,
    pub stage2_channels: usize,
    /// How the stage-one mask is derived from the stage-two mask.
    pub mask_mode: DownsampleMode,
    pub structure: AffineStructure,
}

impl TwoStageConfig {
    pub fn new(stage1: RunConfig, stage2_channels: usize) -> Self {
        let structure = AffineStructure::mean(stage1.channels, DEFAULT_UPSAMPLE);
        Self {
            stage1,
            upsample: DEFAULT_UPSAMPLE,
            stage2_channels,
            mask_mode: DownsampleMode::Recompute,
            structure,
        }
    }

    pub fn stage2_dims(&self) -> Coord {
        self.stage1.dims.map(|d| d * self.upsample)
    }

    pub fn stage2_tile(&self) -> usize {
        self.stage1.tile_size * self.upsample
    }

    pub fn stage2_stride(&self) -> usize {
        self.stage1.stride * self.upsample
    }

    fn validate(&self) -> Result<()> {
        if self.upsample == 0 {
            return Err(Error::Config("upsample factor must be at least 1".into()));
        }
        if self.structure.factor != self.upsample {
            return Err(Error::Config(format!(
                "structure decoder upsamples by {}, stage factor is {}",
                self.structure.factor, self.upsample
            )));
        }
        if self.structure.weights.len() != self.stage1.channels {
            return Err(Error::Config(format!(
                "structure decoder reads {} channels, stage one has {}",
                self.structure.weights.len(),
                self.stage1.channels
            )));
        }
        if self.stage2_channels == 0 {
            return Err(Error::Config("stage-two channels must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TwoStageOutput {
    pub stage1: DenseWorld,
    pub occupancy: DenseWorld,
    pub latent: SparseWorld,
    pub decoded: DenseWorld,
    pub steps: Vec<StepRecord>,
    pub warnings: Vec<String>,
}

fn scale_conditioning(c: &Conditioning, factor: usize) -> Result<Conditioning> {
    Ok(match c {
        Conditioning::Uniform(p) => Conditioning::Uniform(p.clone()),
        Conditioning::Grid(g) => {
            let size = g.cell_size() * factor;
            Conditioning::Grid(g.clone().with_cell_size(size)?)
        }
    })
}

/// Runs both stages and decodes the stage-two latent with `decoder` at the
/// stage-two tile size.
pub fn run_two_stage(
    config: &TwoStageConfig,
    stage1_denoiser: &dyn Denoiser,
    stage2_denoiser: &dyn Denoiser,
    decoder: &dyn TileDecoder,
    progress: &mut (dyn Progress + Send),
) -> Result<TwoStageOutput> {
    config.validate()?;
    let c1 = &config.stage1;
    let s2 = config.stage2_tile();
    let big_mask = cached_cosine(s2);
    let mask1: std::sync::Arc<BlendMask> = if config.upsample == 1 {
        big_mask.clone()
    } else {
        std::sync::Arc::new(big_mask.downsample(config.upsample, config.mask_mode)?)
    };
    c1.conditioning.check_extent(c1.dims)?;
    let sampler1 = TiledSampler::new(c1.layout()?, mask1, stage1_denoiser, &c1.conditioning, c1.guidance)?;
    let cond2 = scale_conditioning(&c1.conditioning, config.upsample)?;
    let dims2 = config.stage2_dims();
    cond2.check_extent(dims2)?;
    let layout2 = TileLayout::plan(dims2, s2, config.stage2_stride())?;
    let sampler2 = TiledSampler::new(layout2, big_mask, stage2_denoiser, &cond2, c1.guidance)?;

    with_threads(c1.threads, || {
        let init = init_noise(c1.dims, c1.channels, c1.seed);
        let (stage1, mut steps) = sampler1.run(init, &c1.schedule, progress)?;
        let occupancy = decode_tiled(&stage1, &config.structure, c1.tile_size)?;
        let occupied = threshold_occupancy(&occupancy)?;
        let mut warnings = Vec::new();
        let latent = if occupied.is_empty() {
            warnings.push("occupancy is empty after thresholding; the scene has no content".to_string());
            SparseWorld::empty(dims2, config.stage2_channels)
        } else {
            let init2 = noise_occupied(&occupied, config.stage2_channels, c1.seed)?;
            let (latent, more) = sampler2.run_sparse(init2, &c1.schedule, progress)?;
            steps.extend(more);
            latent
        };
        let decoded = decode_tiled(&latent.densify(0.0), decoder, s2)?;
        Ok(TwoStageOutput {
            stage1,
            occupancy,
            latent,
            decoded,
            steps,
            warnings,
        })
    })?
}

/// Points with position and colour.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<[f32; 6]>,
}

const PLY_FIELDS: [&str; 6] = ["x", "y", "z", "r", "g", "b"];

impl PointCloud {
    /// One point per voxel whose first three channels average above
    /// `threshold`, placed at the voxel centre with one tile per unit.
    pub fn from_grid(grid: &DenseWorld, tile_size: usize, threshold: f32) -> Result<Self> {
        if grid.channels() < 3 {
            return Err(Error::ShapeMismatch(format!(
                "point-cloud export needs at least 3 channels, got {}",
                grid.channels()
            )));
        }
        let scale = tile_size as f64;
        let dims = grid.dims();
        let c = grid.channels();
        let mut points = Vec::new();
        for (i, v) in grid.data().chunks(c).enumerate() {
            let mean = (v[0] as f64 + v[1] as f64 + v[2] as f64) / 3.0;
            if mean > threshold as f64 {
                let p = coord_of(dims, i);
                let pos = p.map(|q| ((q as f64 + 0.5) / scale) as f32);
                points.push([pos[0], pos[1], pos[2], v[0], v[1], v[2]]);
            }
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_ply(&self) -> Vec<u8> {
        let mut out = format!(
            "ply\nformat binary_little_endian 1.0\ncomment tiledworld voxel export\nelement vertex {}\n",
            self.points.len()
        )
        .into_bytes();
        for f in PLY_FIELDS {
            out.extend_from_slice(format!("property float {f}\n").as_bytes());
        }
        out.extend_from_slice(b"end_header\n");
        for p in &self.points {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses the subset of PLY written by [`PointCloud::to_ply`].
    pub fn from_ply(bytes: &[u8]) -> Result<Self> {
        let marker = b"end_header\n";
        let end = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| Error::Format("PLY header has no end_header".into()))?;
        let header = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::Format("PLY header is not UTF-8".into()))?;
        let mut lines = header.lines();
        if lines.next() != Some("ply") {
            return Err(Error::Format("missing `ply` magic".into()));
        }
        let mut count = None;
        let mut fields = Vec::new();
        for line in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["format", "binary_little_endian", "1.0"] => {}
                ["format", other, ..] => return Err(Error::Format(format!("unsupported PLY format {other}"))),
                ["comment", ..] => {}
                ["element", "vertex", n] => {
                    count = Some(
                        n.parse::<usize>()
                            .map_err(|_| Error::Format(format!("bad vertex count {n}")))?,
                    )
                }
                ["property", "float", name] => fields.push(name.to_string()),
                _ => return Err(Error::Format(format!("unexpected PLY header line {line:?}"))),
            }
        }
        if fields != PLY_FIELDS {
            return Err(Error::Format(format!("expected fields {PLY_FIELDS:?}, got {fields:?}")));
        }
        let count = count.ok_or_else(|| Error::Format("PLY header has no vertex count".into()))?;
        let body = &bytes[end + marker.len()..];
        if body.len() != count * 24 {
            return Err(Error::Format(format!(
                "PLY body has {} bytes, expected {}",
                body.len(),
                count * 24
            )));
        }
        let points = body
            .chunks_exact(24)
            .map(|rec| {
                let mut p = [0.0f32; 6];
                for (k, b) in rec.chunks_exact(4).enumerate() {
                    p[k] = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                }
                p
            })
            .collect();
        Ok(Self { points })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ply())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_ply(&fs::read(path)?)
    }
}
