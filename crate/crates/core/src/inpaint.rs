//! Known-region re-imposition (RePaint) for scene expansion and editing.
//!
//! After every tiled step the known voxels are overwritten with the ground
//! truth pushed forward to the new time along the linear path
//! `x_t = (1 - t) x0 + t eps`, blended with the generated values through a
//! soft keep mask.

use std::time::Instant;

use crate::denoisers::Denoiser;
use crate::error::{Error, Result};
use crate::grid::{coord_of, coords, linear_index, voxel_count, Coord, DenseWorld};
use crate::noise::{substream, NoiseSource, STREAM_FORWARD};
use crate::sampler::{init_noise, with_threads, Progress, RunConfig, RunOutput, Schedule, StepRecord, TiledSampler};

pub const DEFAULT_SIGMA: f64 = 1.5;
pub const DEFAULT_RESAMPLE: usize = 1;

/// Per-voxel keep weights (1 = ground truth).
///
/// Holds the binary mask and its blur. Ground truth only exists inside the
/// binary mask, so blending weights are the blur there and zero elsewhere;
/// the last step re-imposes with the binary mask so known voxels end exact.
#[derive(Debug, Clone, PartialEq)]
pub struct KeepMask {
    dims: Coord,
    hard: Vec<bool>,
    blurred: Vec<f64>,
    sigma: f64,
}

impl KeepMask {
    pub fn dims(&self) -> Coord {
        self.dims
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn is_hard(&self, c: Coord) -> bool {
        self.hard[linear_index(self.dims, c)]
    }

    pub fn blurred(&self) -> &[f64] {
        &self.blurred
    }

    /// Blend weight at linear index `i`.
    pub fn weight_at(&self, i: usize) -> f64 {
        if self.hard[i] {
            self.blurred[i]
        } else {
            0.0
        }
    }

    /// The binary mask alone, used for the final re-imposition.
    pub fn hardened(&self) -> Self {
        Self {
            dims: self.dims,
            hard: self.hard.clone(),
            blurred: self.hard.iter().map(|&h| if h { 1.0 } else { 0.0 }).collect(),
            sigma: 0.0,
        }
    }

    pub fn weight(&self, c: Coord) -> f64 {
        self.weight_at(linear_index(self.dims, c))
    }

    pub fn all(dims: Coord, keep: bool) -> Self {
        let n = voxel_count(dims);
        Self {
            dims,
            hard: vec![keep; n],
            blurred: vec![if keep { 1.0 } else { 0.0 }; n],
            sigma: 0.0,
        }
    }
}

/// Normalised Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|w| w / total).collect()
}

/// Half-sample symmetric reflection of `i` into `0..n`.
pub fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn convolve_axis(dims: Coord, src: &[f64], kernel: &[f64], axis: usize) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut out = vec![0.0; src.len()];
    for c in coords(dims) {
        let mut acc = 0.0;
        for (k, w) in kernel.iter().enumerate() {
            let mut n = c;
            n[axis] = reflect(c[axis] as i64 + k as i64 - r, dims[axis]);
            acc += w * src[linear_index(dims, n)];
        }
        out[linear_index(dims, c)] = acc;
    }
    out
}

/// Separable Gaussian blur of a single-channel mask (`>= 0.5` counts as kept).
pub fn blur_mask(binary: &DenseWorld, sigma: f64) -> Result<KeepMask> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::Config(format!(
            "blur sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if binary.channels() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "keep mask must have 1 channel, got {}",
            binary.channels()
        )));
    }
    let dims = binary.dims();
    let hard: Vec<bool> = binary.data().iter().map(|&v| v >= 0.5).collect();
    let mut soft: Vec<f64> = hard.iter().map(|&h| if h { 1.0 } else { 0.0 }).collect();
    let kernel = gaussian_kernel(sigma);
    if kernel.len() > 1 {
        for axis in 0..3 {
            soft = convolve_axis(dims, &soft, &kernel, axis);
        }
    }
    for v in &mut soft {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(KeepMask {
        dims,
        hard,
        blurred: soft,
        sigma,
    })
}

fn perturb(x: &DenseWorld, a: f64, b: f64, noise: NoiseSource, offset: Coord) -> DenseWorld {
    let dims = x.dims();
    let c = x.channels();
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let p = coord_of(dims, i / c);
        let eps = noise.normal([p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]], i % c) as f64;
        *v = (a * *v as f64 + b * eps) as f32;
    }
    out
}

/// `(1 - t) x0 + t eps` with `eps` drawn from `noise`.
pub fn forward_noise(x0: &DenseWorld, t: f64, noise: NoiseSource) -> Result<DenseWorld> {
    forward_noise_at(x0, t, noise, [0; 3])
}

/// As [`forward_noise`] for a window whose first voxel is at global `offset`.
pub fn forward_noise_at(x0: &DenseWorld, t: f64, noise: NoiseSource, offset: Coord) -> Result<DenseWorld> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Config(format!("forward time must be in [0, 1], got {t}")));
    }
    if t == 0.0 {
        return Ok(x0.clone());
    }
    Ok(perturb(x0, 1.0 - t, t, noise, offset))
}

/// Moves `x` from time `from` back up to `to > from` along the linear path,
/// adding just enough fresh noise to restore the marginal at `to`.
pub fn renoise(x: &DenseWorld, from: f64, to: f64, noise: NoiseSource) -> Result<DenseWorld> {
    renoise_at(x, from, to, noise, [0; 3])
}

pub fn renoise_at(x: &DenseWorld, from: f64, to: f64, noise: NoiseSource, offset: Coord) -> Result<DenseWorld> {
    if !(0.0 <= from && from < to && to <= 1.0) {
        return Err(Error::Config(format!("cannot re-noise from t={from} to t={to}")));
    }
    let a = (1.0 - to) / (1.0 - from);
    let b = (to * to - a * a * from * from).max(0.0).sqrt();
    Ok(perturb(x, a, b, noise, offset))
}

/// `m * known + (1 - m) * generated` per voxel; weights of exactly 0 or 1
/// copy the respective source unchanged.
pub fn impose(generated: &DenseWorld, known: &DenseWorld, mask: &KeepMask) -> Result<DenseWorld> {
    if generated.dims() != mask.dims() || known.dims() != mask.dims() || generated.channels() != known.channels() {
        return Err(Error::ShapeMismatch(format!(
            "world {:?}x{}, ground truth {:?}x{}, mask {:?}",
            generated.dims(),
            generated.channels(),
            known.dims(),
            known.channels(),
            mask.dims()
        )));
    }
    let c = generated.channels();
    let mut out = generated.clone();
    for (i, (g, k)) in out.data_mut().iter_mut().zip(known.data()).enumerate() {
        let m = mask.weight_at(i / c);
        if m == 1.0 {
            *g = *k;
        } else if m > 0.0 {
            *g = (m * *k as f64 + (1.0 - m) * *g as f64) as f32;
        }
    }
    Ok(out)
}

/// Places `known` at `offset` inside a world of `dims`; returns the padded
/// ground truth and the binary mask covering it.
pub fn embed_known(known: &DenseWorld, dims: Coord, offset: Coord) -> Result<(DenseWorld, DenseWorld)> {
    let k = known.dims();
    for a in 0..3 {
        if offset[a] + k[a] > dims[a] {
            return Err(Error::OutOfBounds {
                axis: ['x', 'y', 'z'][a],
                origin: offset[a],
                size: k[a],
                dim: dims[a],
            });
        }
    }
    let mut gt = DenseWorld::zeros(dims, known.channels());
    let mut mask = DenseWorld::zeros(dims, 1);
    for c in coords(k) {
        let g = [c[0] + offset[0], c[1] + offset[1], c[2] + offset[2]];
        gt.voxel_mut(g).copy_from_slice(known.voxel(c));
        mask.set(g, 0, 1.0);
    }
    Ok((gt, mask))
}

/// Tiled generation with the known region re-imposed after each step, with
/// `resample` passes per step (re-noised by one step between passes).
pub fn repaint_run(
    config: &RunConfig,
    denoiser: &dyn Denoiser,
    ground_truth: &DenseWorld,
    mask: &KeepMask,
    resample: usize,
    progress: &mut (dyn Progress + Send),
) -> Result<RunOutput> {
    if ground_truth.dims() != config.dims || mask.dims() != config.dims {
        return Err(Error::ShapeMismatch(format!(
            "run dims {:?}, ground truth {:?}, mask {:?}",
            config.dims,
            ground_truth.dims(),
            mask.dims()
        )));
    }
    if ground_truth.channels() != config.channels {
        return Err(Error::ShapeMismatch(format!(
            "ground truth has {} channels, run expects {}",
            ground_truth.channels(),
            config.channels
        )));
    }
    let sampler = config.sampler(denoiser)?;
    with_threads(config.threads, || {
        let init = init_noise(config.dims, config.channels, config.seed);
        repaint_loop(
            &sampler,
            init,
            &config.schedule,
            config.seed,
            ground_truth,
            mask,
            resample,
            progress,
        )
        .map(|(world, steps)| RunOutput { world, steps })
    })?
}

/// The re-imposition loop on an already configured sampler. Noise is keyed
/// on global coordinates using the sampler's window offset.
#[allow(clippy::too_many_arguments)]
pub fn repaint_loop(
    sampler: &TiledSampler<'_>,
    mut world: DenseWorld,
    schedule: &Schedule,
    seed: u64,
    ground_truth: &DenseWorld,
    mask: &KeepMask,
    resample: usize,
    progress: &mut dyn Progress,
) -> Result<(DenseWorld, Vec<StepRecord>)> {
    if resample == 0 {
        return Err(Error::Config("resample count must be at least 1".into()));
    }
    let offset = sampler.offset();
    let last = mask.hardened();
    let mut records = Vec::with_capacity(schedule.steps());
    for (index, t, dt) in schedule.iter() {
        let start = Instant::now();
        let wrap = |e: Error| Error::Step {
            index,
            t,
            source: Box::new(e),
        };
        let next_t = t - dt;
        for pass in 0..resample {
            let generated = sampler.step(&world, t, dt).map_err(wrap)?;
            let fwd = NoiseSource::new(seed, substream(STREAM_FORWARD, index as u64, 2 * pass as u64));
            let known = forward_noise_at(ground_truth, next_t.max(0.0), fwd, offset).map_err(wrap)?;
            let m = if next_t <= 0.0 { &last } else { mask };
            world = impose(&generated, &known, m).map_err(wrap)?;
            if pass + 1 < resample {
                let back = NoiseSource::new(seed, substream(STREAM_FORWARD, index as u64, 2 * pass as u64 + 1));
                world = renoise_at(&world, next_t, t, back, offset).map_err(wrap)?;
            }
        }
        let rec = StepRecord {
            index,
            t,
            dt,
            tiles: sampler.layout().len(),
            wall: start.elapsed(),
        };
        progress.on_step(&rec);
        records.push(rec);
    }
    Ok((world, records))
}
