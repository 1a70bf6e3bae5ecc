//! Flow-matching Euler sampling over overlapping tiles.
//!
//! Time runs from `t = 1` (noise) to `t = 0` (data). One step takes every
//! tile of the layout, evaluates the (guided) velocity on a copy of it,
//! applies `x - dt * v`, and replaces each voxel with the mask-weighted mean
//! of the updated values of all tiles covering it.
//!
//! Tile evaluations run in parallel. The weighted sums are accumulated per
//! voxel in canonical tile order no matter how work is split, so output is
//! bitwise identical for any thread count.

use std::fmt;
use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blend::{cached_cosine, BlendMask, MaskKind};
use crate::denoisers::{Denoiser, DenoiserRequest, UNCONDITIONAL};
use crate::error::{Error, Result};
use crate::grid::{voxel_count, Coord, DenseWorld, SparseWorld};
use crate::noise::{NoiseSource, STREAM_INIT};
use crate::prompts::Conditioning;
use crate::tiling::TileLayout;

/// Per sparse tile: world member indices, their local coordinates, the updated dense block.
type SparseTile = (Vec<usize>, Vec<Coord>, Vec<f32>);

pub const DEFAULT_STEPS: usize = 25;
pub const DEFAULT_GUIDANCE: f64 = 7.5;

/// Strictly decreasing times from exactly 1 to exactly 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    times: Vec<f64>,
}

impl Schedule {
    pub fn uniform(steps: usize) -> Self {
        assert!(steps >= 1, "schedule needs at least one step");
        let times = (0..=steps)
            .rev()
            .map(|k| if k == steps { 1.0 } else { k as f64 / steps as f64 })
            .collect();
        Self { times }
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        let ok = times.len() >= 2
            && times[0] == 1.0
            && *times.last().unwrap() == 0.0
            && times.windows(2).all(|w| w[0] > w[1]);
        if !ok {
            return Err(Error::Config(format!(
                "schedule must decrease strictly from 1 to 0, got {times:?}"
            )));
        }
        Ok(Self { times })
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `(step index, t, dt)` for each step; the last one lands on `t = 0`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.times.windows(2).enumerate().map(|(i, w)| (i, w[0], w[0] - w[1]))
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Self::uniform(DEFAULT_STEPS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub scale: f64,
}

impl GuidanceConfig {
    pub fn new(scale: f64) -> Self {
        Self { scale }
    }

    /// With scale 1 the unconditional pass has no effect and is skipped.
    pub fn needs_unconditional(&self) -> bool {
        self.scale != 1.0
    }

    pub fn calls_per_tile(&self) -> u64 {
        if self.needs_unconditional() {
            2
        } else {
            1
        }
    }
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            scale: DEFAULT_GUIDANCE,
        }
    }
}

/// Classifier-free guidance `v_u + g (v_c - v_u)`.
///
/// Evaluated as `(1 - g) v_u + g v_c`, which is the same combination but
/// returns `v_c` exactly for `g = 1` and `v_u` exactly for `g = 0`.
pub fn cfg_velocity(v_cond: &[f32], v_uncond: &[f32], scale: f64) -> Result<Vec<f32>> {
    if v_cond.len() != v_uncond.len() {
        return Err(Error::ShapeMismatch(format!(
            "conditional velocity has {} values, unconditional {}",
            v_cond.len(),
            v_uncond.len()
        )));
    }
    Ok(v_cond
        .iter()
        .zip(v_uncond)
        .map(|(&c, &u)| ((1.0 - scale) * u as f64 + scale * c as f64) as f32)
        .collect())
}

/// First-order update `x - dt * v`.
pub fn euler_update(values: &[f32], velocity: &[f32], dt: f64) -> Result<Vec<f32>> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::Config(format!("step size must be positive, got {dt}")));
    }
    if values.len() != velocity.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} values but {} velocities",
            values.len(),
            velocity.len()
        )));
    }
    Ok(values
        .iter()
        .zip(velocity)
        .map(|(&x, &v)| (x as f64 - dt * v as f64) as f32)
        .collect())
}

/// I.i.d. standard normal world keyed on global coordinates.
pub fn init_noise(dims: Coord, channels: usize, seed: u64) -> DenseWorld {
    noise_world(dims, channels, NoiseSource::new(seed, STREAM_INIT), [0; 3])
}

/// Noise for a sub-world whose first voxel sits at global `offset`.
pub fn noise_world(dims: Coord, channels: usize, noise: NoiseSource, offset: Coord) -> DenseWorld {
    let mut w = DenseWorld::zeros(dims, channels);
    let plane = dims[1] * dims[2] * channels;
    w.data_mut().par_chunks_mut(plane).enumerate().for_each(|(x, chunk)| {
        for y in 0..dims[1] {
            for z in 0..dims[2] {
                let g = [offset[0] + x, offset[1] + y, offset[2] + z];
                for c in 0..channels {
                    chunk[(y * dims[2] + z) * channels + c] = noise.normal(g, c);
                }
            }
        }
    });
    w
}

/// Calls the denoiser and checks the response shape and finiteness.
fn checked_velocity(denoiser: &dyn Denoiser, req: &DenoiserRequest<'_>) -> Result<Vec<f32>> {
    let resp = denoiser.velocity(req)?;
    if resp.velocity.len() != req.values.len() {
        return Err(Error::ShapeMismatch(format!(
            "denoiser returned {} values for a block of {}",
            resp.velocity.len(),
            req.values.len()
        )));
    }
    if resp.velocity.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { origin: req.origin });
    }
    Ok(resp.velocity)
}

/// Guided velocity for one block: conditional pass, then unconditional if needed.
pub fn guided_velocity(
    denoiser: &dyn Denoiser,
    req: &DenoiserRequest<'_>,
    guidance: GuidanceConfig,
) -> Result<Vec<f32>> {
    let v_cond = checked_velocity(denoiser, req)?;
    if !guidance.needs_unconditional() {
        return Ok(v_cond);
    }
    let uncond = DenoiserRequest {
        condition: UNCONDITIONAL,
        ..*req
    };
    let v_uncond = checked_velocity(denoiser, &uncond)?;
    cfg_velocity(&v_cond, &v_uncond, guidance.scale)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub t: f64,
    pub dt: f64,
    pub tiles: usize,
    #[serde(with = "duration_secs")]
    pub wall: Duration,
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        f64::deserialize(d).map(Duration::from_secs_f64)
    }
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step {:3}  t={:.4}  tiles={}  wall={:.3}ms",
            self.index,
            self.t,
            self.tiles,
            self.wall.as_secs_f64() * 1e3
        )
    }
}

pub trait Progress {
    fn on_step(&mut self, record: &StepRecord);
}

impl<F: FnMut(&StepRecord)> Progress for F {
    fn on_step(&mut self, record: &StepRecord) {
        self(record)
    }
}

pub struct NoProgress;

impl Progress for NoProgress {
    fn on_step(&mut self, _: &StepRecord) {}
}

/// One line per step on standard error.
pub struct StderrProgress;

impl Progress for StderrProgress {
    fn on_step(&mut self, record: &StepRecord) {
        let _ = writeln!(std::io::stderr(), "{record}");
    }
}

/// Everything needed to take tiled steps over one layout.
#[derive(Clone)]
pub struct TiledSampler<'a> {
    layout: TileLayout,
    mask: Arc<BlendMask>,
    denoiser: &'a dyn Denoiser,
    conditioning: &'a Conditioning,
    guidance: GuidanceConfig,
    offset: Coord,
}

impl<'a> TiledSampler<'a> {
    pub fn new(
        layout: TileLayout,
        mask: Arc<BlendMask>,
        denoiser: &'a dyn Denoiser,
        conditioning: &'a Conditioning,
        guidance: GuidanceConfig,
    ) -> Result<Self> {
        if mask.size() != layout.tile_size() {
            return Err(Error::ShapeMismatch(format!(
                "mask size {} != tile size {}",
                mask.size(),
                layout.tile_size()
            )));
        }
        Ok(Self {
            layout,
            mask,
            denoiser,
            conditioning,
            guidance,
            offset: [0; 3],
        })
    }

    /// Treats the sampled world as a window whose first voxel is at global
    /// `offset`; requests and prompt lookups use global origins.
    pub fn with_offset(mut self, offset: Coord) -> Self {
        self.offset = offset;
        self
    }

    pub fn layout(&self) -> &TileLayout {
        &self.layout
    }

    pub fn offset(&self) -> Coord {
        self.offset
    }

    pub fn mask(&self) -> &BlendMask {
        &self.mask
    }

    pub fn guidance(&self) -> GuidanceConfig {
        self.guidance
    }

    fn global(&self, o: Coord) -> Coord {
        [o[0] + self.offset[0], o[1] + self.offset[1], o[2] + self.offset[2]]
    }

    /// Euler-updated values of one block.
    fn block_update(&self, values: &[f32], origin: Coord, t: f64, dt: f64, channels: usize) -> Result<Vec<f32>> {
        let size = self.layout.tile_size();
        let global = self.global(origin);
        let condition = self.conditioning.condition_for_tile(global, size)?;
        let req = DenoiserRequest::tile(values, t, condition, global, size, channels);
        let v = guided_velocity(self.denoiser, &req, self.guidance)?;
        euler_update(values, &v, dt)
    }

    /// One tiled update of `world` from `t` to `t - dt`.
    pub fn step(&self, world: &DenseWorld, t: f64, dt: f64) -> Result<DenseWorld> {
        if world.dims() != self.layout.dims() {
            return Err(Error::ShapeMismatch(format!(
                "world {:?} vs layout {:?}",
                world.dims(),
                self.layout.dims()
            )));
        }
        let size = self.layout.tile_size();
        let channels = world.channels();
        let updates: Vec<Vec<f32>> = self
            .layout
            .origins()
            .par_iter()
            .map(|&o| {
                let tile = world.extract_tile(o, size)?;
                self.block_update(&tile.values, o, t, dt, channels)
                    .map_err(|e| e.at_tile(self.global(o)))
            })
            .collect::<Result<_>>()?;
        aggregate(&self.layout, &self.mask, channels, &updates)
    }

    /// Tiled update restricted to occupied voxels.
    ///
    /// Each tile is handed to the denoiser as a dense block with unoccupied
    /// voxels zeroed; only occupied outputs are blended back. Tiles holding no
    /// occupied voxel are skipped.
    pub fn sparse_step(&self, world: &SparseWorld, t: f64, dt: f64) -> Result<SparseWorld> {
        if world.dims() != self.layout.dims() {
            return Err(Error::ShapeMismatch(format!(
                "sparse world {:?} vs layout {:?}",
                world.dims(),
                self.layout.dims()
            )));
        }
        let size = self.layout.tile_size();
        let c = world.channels();
        let tiles: Vec<Option<SparseTile>> = self
            .layout
            .origins()
            .par_iter()
            .map(|&o| {
                let st = world.extract_tile(o, size)?;
                if st.is_empty() {
                    return Ok(None);
                }
                let block = st.to_dense_block(0.0);
                let updated = self
                    .block_update(&block, o, t, dt, c)
                    .map_err(|e| e.at_tile(self.global(o)))?;
                Ok(Some((st.members, st.local, updated)))
            })
            .collect::<Result<_>>()?;

        let mut num = vec![0.0f64; world.len() * c];
        let mut den = vec![0.0f64; world.len()];
        for (members, local, updated) in tiles.into_iter().flatten() {
            for (&m, l) in members.iter().zip(&local) {
                let beta = self.mask.weight(*l);
                let li = ((l[0] * size + l[1]) * size + l[2]) * c;
                den[m] += beta;
                for ch in 0..c {
                    num[m * c + ch] += beta * updated[li + ch] as f64;
                }
            }
        }
        let mut out = world.clone();
        let values = out.values_mut();
        for (m, &d) in den.iter().enumerate() {
            if d <= 0.0 {
                let [x, y, z] = world.coord(m);
                return Err(Error::Uncovered { x, y, z });
            }
            for ch in 0..c {
                values[m * c + ch] = (num[m * c + ch] / d) as f32;
            }
        }
        Ok(out)
    }

    /// Integrates `world` over the whole schedule.
    pub fn run(
        &self,
        mut world: DenseWorld,
        schedule: &Schedule,
        progress: &mut dyn Progress,
    ) -> Result<(DenseWorld, Vec<StepRecord>)> {
        let mut records = Vec::with_capacity(schedule.steps());
        for (index, t, dt) in schedule.iter() {
            let start = Instant::now();
            world = self.step(&world, t, dt).map_err(|e| Error::Step {
                index,
                t,
                source: Box::new(e),
            })?;
            let rec = StepRecord {
                index,
                t,
                dt,
                tiles: self.layout.len(),
                wall: start.elapsed(),
            };
            progress.on_step(&rec);
            records.push(rec);
        }
        Ok((world, records))
    }

    pub fn run_sparse(
        &self,
        mut world: SparseWorld,
        schedule: &Schedule,
        progress: &mut dyn Progress,
    ) -> Result<(SparseWorld, Vec<StepRecord>)> {
        let mut records = Vec::with_capacity(schedule.steps());
        for (index, t, dt) in schedule.iter() {
            let start = Instant::now();
            world = self.sparse_step(&world, t, dt).map_err(|e| Error::Step {
                index,
                t,
                source: Box::new(e),
            })?;
            let rec = StepRecord {
                index,
                t,
                dt,
                tiles: self.layout.len(),
                wall: start.elapsed(),
            };
            progress.on_step(&rec);
            records.push(rec);
        }
        Ok((world, records))
    }
}

/// Weighted average of per-tile blocks, identical to scattering the tiles
/// one by one in layout order and dividing once per voxel.
///
/// Work is split by x plane; within a plane tiles are visited in layout
/// order, so every voxel sees the same summation order as the serial scatter.
pub fn aggregate(layout: &TileLayout, mask: &BlendMask, channels: usize, updates: &[Vec<f32>]) -> Result<DenseWorld> {
    let dims = layout.dims();
    let s = layout.tile_size();
    let c = channels;
    if mask.size() != s {
        return Err(Error::ShapeMismatch(format!(
            "mask size {} != tile size {s}",
            mask.size()
        )));
    }
    if updates.len() != layout.len() || updates.iter().any(|u| u.len() != s * s * s * c) {
        return Err(Error::ShapeMismatch("tile updates do not match the layout".into()));
    }
    let plane_len = dims[1] * dims[2];
    let mut data = vec![0.0f32; voxel_count(dims) * c];
    let uncovered: Vec<Option<Coord>> = data
        .par_chunks_mut(plane_len * c)
        .enumerate()
        .map(|(x, out)| {
            let mut num = vec![0.0f64; plane_len * c];
            let mut den = vec![0.0f64; plane_len];
            for (o, vals) in layout.origins().iter().zip(updates) {
                if x < o[0] || x >= o[0] + s {
                    continue;
                }
                let lx = x - o[0];
                for ly in 0..s {
                    for lz in 0..s {
                        let l = (lx * s + ly) * s + lz;
                        let beta = mask.weights()[l];
                        let p = (o[1] + ly) * dims[2] + o[2] + lz;
                        den[p] += beta;
                        for ch in 0..c {
                            num[p * c + ch] += beta * vals[l * c + ch] as f64;
                        }
                    }
                }
            }
            for (p, &d) in den.iter().enumerate() {
                if d <= 0.0 {
                    return Some([x, p / dims[2], p % dims[2]]);
                }
                for ch in 0..c {
                    out[p * c + ch] = (num[p * c + ch] / d) as f32;
                }
            }
            None
        })
        .collect();
    if let Some([x, y, z]) = uncovered.into_iter().flatten().next() {
        return Err(Error::Uncovered { x, y, z });
    }
    DenseWorld::from_data(dims, c, data)
}

/// Full configuration of a single-stage run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dims: Coord,
    pub channels: usize,
    pub tile_size: usize,
    pub stride: usize,
    pub seed: u64,
    pub schedule: Schedule,
    pub guidance: GuidanceConfig,
    pub conditioning: Conditioning,
    pub blend: MaskKind,
    /// Worker threads; 0 uses the ambient pool.
    pub threads: usize,
}

impl RunConfig {
    /// Defaults: 25 uniform steps, guidance 7.5, stride `S/2`, cosine blending.
    pub fn new(dims: Coord, channels: usize, tile_size: usize) -> Self {
        Self {
            dims,
            channels,
            tile_size,
            stride: (tile_size / 2).max(1),
            seed: 0,
            schedule: Schedule::default(),
            guidance: GuidanceConfig::default(),
            conditioning: Conditioning::Uniform(String::new()),
            blend: MaskKind::Cosine,
            threads: 0,
        }
    }

    pub fn layout(&self) -> Result<TileLayout> {
        if self.channels == 0 {
            return Err(Error::Config("channels must be positive".into()));
        }
        TileLayout::plan(self.dims, self.tile_size, self.stride)
    }

    pub fn mask(&self) -> Arc<BlendMask> {
        match self.blend {
            MaskKind::Box => Arc::new(BlendMask::boxed(self.tile_size)),
            _ => cached_cosine(self.tile_size),
        }
    }

    pub fn sampler<'a>(&'a self, denoiser: &'a dyn Denoiser) -> Result<TiledSampler<'a>> {
        if !self.guidance.scale.is_finite() {
            return Err(Error::Config("guidance scale must be finite".into()));
        }
        self.conditioning.check_extent(self.dims)?;
        TiledSampler::new(self.layout()?, self.mask(), denoiser, &self.conditioning, self.guidance)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub world: DenseWorld,
    pub steps: Vec<StepRecord>,
}

/// Runs `f` on a dedicated pool of `threads` workers (ambient pool for 0).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Noise at `t = 1` integrated to `t = 0` with tiled steps.
pub fn run_diffusion(
    config: &RunConfig,
    denoiser: &dyn Denoiser,
    progress: &mut (dyn Progress + Send),
) -> Result<RunOutput> {
    let sampler = config.sampler(denoiser)?;
    with_threads(config.threads, || {
        let init = init_noise(config.dims, config.channels, config.seed);
        sampler
            .run(init, &config.schedule, progress)
            .map(|(world, steps)| RunOutput { world, steps })
    })?
}

/// Serial scatter-then-resolve, used to cross-check `aggregate`.
#[doc(hidden)]
pub fn aggregate_reference(layout: &TileLayout, mask: &BlendMask, channels: usize, updates: &[Vec<f32>]) -> DenseWorld {
    let mut acc = crate::grid::Accumulator::new(layout.dims(), channels);
    for (o, u) in layout.origins().iter().zip(updates) {
        acc.scatter(u, mask, *o).expect("shapes checked by caller");
    }
    acc.resolve().expect("layout covers world")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoisers::{Pattern, PatternField, PointTarget};

    #[test]
    fn uniform_schedule_endpoints() {
        let s = Schedule::uniform(25);
        assert_eq!(s.steps(), 25);
        assert_eq!(s.times()[0], 1.0);
        assert_eq!(*s.times().last().unwrap(), 0.0);
        assert!(s.times().windows(2).all(|w| w[0] > w[1]));
        let total: f64 = s.iter().map(|(_, _, dt)| dt).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(Schedule::from_times(vec![1.0, 0.5, 0.5, 0.0]).is_err());
        assert!(Schedule::from_times(vec![0.9, 0.0]).is_err());
    }

    #[test]
    fn cfg_examples() {
        let c = [3.0f32, -1.5, 0.25];
        let u = [1.0f32, 2.0, -7.0];
        assert_eq!(cfg_velocity(&c, &u, 1.0).unwrap(), c);
        assert_eq!(cfg_velocity(&c, &u, 0.0).unwrap(), u);
        assert_eq!(cfg_velocity(&[3.0], &[1.0], 7.5).unwrap(), vec![16.0]);
        assert!(cfg_velocity(&[1.0], &[1.0, 2.0], 2.0).is_err());
    }

    #[test]
    fn euler_examples() {
        assert_eq!(euler_update(&[1.0, -2.0], &[0.0, 0.0], 0.3).unwrap(), vec![1.0, -2.0]);
        assert_eq!(euler_update(&[2.0], &[2.0], 0.5).unwrap(), vec![1.0]);
        assert!(euler_update(&[2.0], &[2.0], 0.0).is_err());
        // affine field (x - mu)/t: one step gives mu + (x - mu)(t - dt)/t
        let (x, mu, t, dt) = (3.0f64, 0.5f64, 0.8f64, 0.2f64);
        let v = ((x - mu) / t) as f32;
        let got = euler_update(&[x as f32], &[v], dt).unwrap()[0] as f64;
        assert!((got - (mu + (x - mu) * (t - dt) / t)).abs() < 1e-6);
    }

    #[test]
    fn init_noise_independent_of_dims() {
        let a = init_noise([8, 8, 8], 2, 42);
        let b = init_noise([20, 9, 11], 2, 42);
        for c in [[0, 0, 0], [3, 7, 5], [7, 1, 7]] {
            assert_eq!(a.voxel(c), b.voxel(c));
        }
        assert_ne!(a.get([0, 0, 0], 0), a.get([0, 0, 1], 0));
    }

    #[test]
    fn init_noise_moments() {
        let w = init_noise([50, 50, 40], 1, 2024);
        let n = w.data().len() as f64;
        let mean = w.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = w.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02 && (var - 1.0).abs() < 0.05, "{mean} {var}");
    }

    #[test]
    fn aggregate_matches_serial_scatter() {
        let layout = TileLayout::plan([13, 9, 8], 6, 3).unwrap();
        let mask = BlendMask::cosine(6);
        let noise = NoiseSource::new(5, 0);
        let updates: Vec<Vec<f32>> = (0..layout.len())
            .map(|i| (0..216 * 2).map(|j| noise.normal([i, j, 0], 0)).collect())
            .collect();
        let fast = aggregate(&layout, &mask, 2, &updates).unwrap();
        let slow = aggregate_reference(&layout, &mask, 2, &updates);
        assert!(fast.bitwise_eq(&slow));
    }

    #[test]
    fn two_tile_hand_evaluation() {
        // tiles of size 2 at x = 0 and x = 1 overlap at x = 1
        let layout = TileLayout::plan([3, 2, 2], 2, 1).unwrap();
        let mask = BlendMask::cosine(2);
        let world = DenseWorld::filled([3, 2, 2], 1, 1.0);
        let (v1, v2, dt) = (2.0f64, -4.0f64, 0.25f64);
        let updates: Vec<Vec<f32>> = [v1, v2].iter().map(|v| vec![(1.0 - dt * v) as f32; 8]).collect();
        let out = aggregate(&layout, &mask, 1, &updates).unwrap();
        let b = mask.weight([0, 0, 0]);
        let expected = 1.0 - dt * (b * v1 + b * v2) / (b + b);
        assert!((out.get([1, 0, 0], 0) as f64 - expected).abs() < 1e-7);
        assert_eq!(out.get([0, 1, 1], 0), (1.0 - dt * v1) as f32);
        let _ = world;
    }

    #[test]
    fn uncovered_voxel_is_an_error() {
        let layout = TileLayout::from_origins([8, 4, 4], 4, 4, vec![[0, 0, 0]]).unwrap();
        let d = PointTarget::uniform(0.0);
        let cond = Conditioning::Uniform("c".into());
        let s = TiledSampler::new(layout, cached_cosine(4), &d, &cond, GuidanceConfig::new(1.0)).unwrap();
        let err = s.step(&DenseWorld::zeros([8, 4, 4], 1), 1.0, 0.5).unwrap_err();
        assert!(matches!(err, Error::Uncovered { x: 4, y: 0, z: 0 }));
    }

    struct Poison;
    impl Denoiser for Poison {
        fn name(&self) -> String {
            "poison".into()
        }
        fn capabilities(&self) -> crate::denoisers::DenoiserCapabilities {
            PointTarget::uniform(0.0).capabilities()
        }
        fn velocity(&self, req: &DenoiserRequest<'_>) -> Result<crate::denoisers::DenoiserResponse> {
            let mut v = vec![0.0; req.values.len()];
            if req.origin[0] >= 4 {
                v[0] = f32::NAN;
            }
            Ok(crate::denoisers::DenoiserResponse::new(v))
        }
    }

    #[test]
    fn non_finite_output_names_tile() {
        let mut cfg = RunConfig::new([12, 8, 8], 1, 8);
        cfg.schedule = Schedule::uniform(3);
        let err = run_diffusion(&cfg, &Poison, &mut NoProgress).unwrap_err();
        match &err {
            Error::Step { index: 0, source, .. } => {
                assert!(matches!(**source, Error::NonFinite { origin: [4, 0, 0] }), "{source}")
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn single_tile_equals_plain_euler() {
        let d = PatternField::uniform(Pattern::Ramp {
            base: 0.1,
            slope: 0.3,
            axis: 1,
        });
        let cond = Conditioning::Uniform("x".into());
        let layout = TileLayout::plan([6, 6, 6], 6, 3).unwrap();
        let s = TiledSampler::new(layout, cached_cosine(6), &d, &cond, GuidanceConfig::new(1.0)).unwrap();
        let w = init_noise([6, 6, 6], 2, 3);
        let out = s.step(&w, 0.6, 0.2).unwrap();
        let v = d
            .velocity(&DenoiserRequest::tile(w.data(), 0.6, "x", [0; 3], 6, 2))
            .unwrap()
            .velocity;
        let expected = euler_update(w.data(), &v, 0.2).unwrap();
        assert!(out
            .data()
            .iter()
            .zip(&expected)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
