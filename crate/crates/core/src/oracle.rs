//! Brute-force references and seam metrics for checking the tiled sampler.

use std::fmt;

use serde::Serialize;

use crate::blend::{cached_cosine, MaskKind};
use crate::denoisers::{Denoiser, DenoiserRequest, Pattern, PatternField};
use crate::error::{Error, Result};
use crate::grid::{Coord, DenseWorld};
use crate::inpaint::{blur_mask, repaint_loop};
use crate::noise::{NoiseSource, STREAM_INIT};
use crate::prompts::Conditioning;
use crate::sampler::{
    euler_update, guided_velocity, noise_world, run_diffusion, with_threads, GuidanceConfig, NoProgress, Progress,
    RunConfig, RunOutput, Schedule, TiledSampler,
};
use crate::tiling::TileLayout;

/// One Euler step with the whole world as a single block.
pub fn reference_step(
    world: &DenseWorld,
    t: f64,
    dt: f64,
    denoiser: &dyn Denoiser,
    condition: &str,
    guidance: GuidanceConfig,
) -> Result<DenseWorld> {
    let req = DenoiserRequest {
        values: world.data(),
        t,
        condition,
        origin: [0; 3],
        extent: world.dims(),
        channels: world.channels(),
    };
    denoiser.capabilities().check(&req)?;
    let v = guided_velocity(denoiser, &req, guidance)?;
    DenseWorld::from_data(world.dims(), world.channels(), euler_update(world.data(), &v, dt)?)
}

/// [`reference_step`] over a whole schedule.
pub fn reference_run(
    mut world: DenseWorld,
    schedule: &Schedule,
    denoiser: &dyn Denoiser,
    condition: &str,
    guidance: GuidanceConfig,
) -> Result<DenseWorld> {
    for (index, t, dt) in schedule.iter() {
        world = reference_step(&world, t, dt, denoiser, condition, guidance).map_err(|e| Error::Step {
            index,
            t,
            source: Box::new(e),
        })?;
    }
    Ok(world)
}

/// An interior plane between voxel `position - 1` and `position` along `axis`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Face {
    pub axis: usize,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeamReport {
    pub faces: Vec<Face>,
    /// Largest absolute jump across each face, aligned with `faces`.
    pub face_max: Vec<f64>,
    pub max: f64,
    pub mean: f64,
}

impl fmt::Display for SeamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "faces={} max={:.6e} mean={:.6e}",
            self.faces.len(),
            self.max,
            self.mean
        )
    }
}

/// Interior planes on which some tile face lies.
pub fn tile_faces(layout: &TileLayout) -> Vec<Face> {
    let dims = layout.dims();
    let s = layout.tile_size();
    let mut faces: Vec<Face> = layout
        .origins()
        .iter()
        .flat_map(|o| (0..3).flat_map(move |a| [(a, o[a]), (a, o[a] + s)]))
        .filter(|&(a, p)| p > 0 && p < dims[a])
        .map(|(axis, position)| Face { axis, position })
        .collect();
    faces.sort();
    faces.dedup();
    faces
}

/// Absolute first differences across every interior tile face.
pub fn seam_discontinuity(world: &DenseWorld, layout: &TileLayout) -> Result<SeamReport> {
    if world.dims() != layout.dims() {
        return Err(Error::ShapeMismatch(format!(
            "world {:?} vs layout {:?}",
            world.dims(),
            layout.dims()
        )));
    }
    let dims = world.dims();
    let faces = tile_faces(layout);
    let mut face_max = Vec::with_capacity(faces.len());
    let (mut total, mut count) = (0.0f64, 0usize);
    for face in &faces {
        let (a, b) = match face.axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let mut m = 0.0f64;
        for i in 0..dims[a] {
            for j in 0..dims[b] {
                let mut lo: Coord = [0; 3];
                lo[face.axis] = face.position - 1;
                lo[a] = i;
                lo[b] = j;
                let mut hi = lo;
                hi[face.axis] = face.position;
                for (p, q) in world.voxel(lo).iter().zip(world.voxel(hi)) {
                    let d = (*p as f64 - *q as f64).abs();
                    m = m.max(d);
                    total += d;
                    count += 1;
                }
            }
        }
        face_max.push(m);
    }
    Ok(SeamReport {
        max: face_max.iter().copied().fold(0.0, f64::max),
        mean: if count == 0 { 0.0 } else { total / count as f64 },
        faces,
        face_max,
    })
}

/// Every tile pulls its outermost voxel layer toward 1 and its inside toward 0,
/// so neighbouring tiles disagree wherever one tile's border lies inside another.
pub fn border_pathology() -> PatternField {
    PatternField::uniform(Pattern::Border {
        interior: 0.0,
        border: 1.0,
    })
}

/// Runs `config` once per mask kind and reports the seams of each result.
pub fn blend_ablation(
    config: &RunConfig,
    denoiser: &dyn Denoiser,
    kinds: &[MaskKind],
) -> Result<Vec<(MaskKind, SeamReport)>> {
    let layout = config.layout()?;
    kinds
        .iter()
        .map(|&kind| {
            let cfg = RunConfig {
                blend: kind,
                ..config.clone()
            };
            let out = run_diffusion(&cfg, denoiser, &mut NoProgress)?;
            Ok((kind, seam_discontinuity(&out.world, &layout)?))
        })
        .collect()
}

/// Tiles generated one after another in layout order; each new tile keeps
/// the part it shares with already generated tiles through RePaint.
pub fn autoregressive_baseline(
    config: &RunConfig,
    denoiser: &dyn Denoiser,
    sigma: f64,
    progress: &mut (dyn Progress + Send),
) -> Result<RunOutput> {
    let layout = config.layout()?;
    config.conditioning.check_extent(config.dims)?;
    let s = config.tile_size;
    let c = config.channels;
    let single = TileLayout::plan([s; 3], s, s)?;
    let mask = cached_cosine(s);
    let cond: &Conditioning = &config.conditioning;
    with_threads(config.threads, || {
        let mut world = DenseWorld::zeros(config.dims, c);
        let mut done = DenseWorld::zeros(config.dims, 1);
        let mut steps = Vec::new();
        for &o in layout.origins() {
            let sampler =
                TiledSampler::new(single.clone(), mask.clone(), denoiser, cond, config.guidance)?.with_offset(o);
            let known = DenseWorld::from_data([s; 3], c, world.extract_tile(o, s)?.values)?;
            let bin = DenseWorld::from_data([s; 3], 1, done.extract_tile(o, s)?.values)?;
            let keep = blur_mask(&bin, sigma)?;
            let init = noise_world([s; 3], c, NoiseSource::new(config.seed, STREAM_INIT), o);
            let (tile, recs) = repaint_loop(
                &sampler,
                init,
                &config.schedule,
                config.seed,
                &known,
                &keep,
                1,
                progress,
            )
            .map_err(|e| e.at_tile(o))?;
            world.write_tile(o, s, tile.data())?;
            done.write_tile(o, s, &vec![1.0; s * s * s])?;
            steps.extend(recs);
        }
        Ok(RunOutput { world, steps })
    })?
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoisers::PointTarget;
    use crate::sampler::init_noise;

    #[test]
    fn reference_equals_single_tile_step() {
        let d = PatternField::uniform(Pattern::Ramp {
            base: 0.2,
            slope: -0.1,
            axis: 2,
        });
        let w = init_noise([8, 8, 8], 2, 6);
        let cond = Conditioning::Uniform("p".into());
        let g = GuidanceConfig::new(3.0);
        let s = TiledSampler::new(TileLayout::plan([8; 3], 8, 4).unwrap(), cached_cosine(8), &d, &cond, g).unwrap();
        let tiled = s.step(&w, 0.7, 0.1).unwrap();
        let reference = reference_step(&w, 0.7, 0.1, &d, "p", g).unwrap();
        assert!(tiled.bitwise_eq(&reference));
    }

    #[test]
    fn zero_field_is_identity() {
        struct Still;
        impl Denoiser for Still {
            fn name(&self) -> String {
                "still".into()
            }
            fn capabilities(&self) -> crate::denoisers::DenoiserCapabilities {
                PointTarget::uniform(0.0).capabilities()
            }
            fn velocity(&self, r: &DenoiserRequest<'_>) -> Result<crate::denoisers::DenoiserResponse> {
                Ok(crate::denoisers::DenoiserResponse::new(vec![0.0; r.values.len()]))
            }
        }
        let w = init_noise([3, 4, 5], 2, 1);
        assert!(reference_step(&w, 0.5, 0.25, &Still, "", GuidanceConfig::default())
            .unwrap()
            .bitwise_eq(&w));
    }

    #[test]
    fn reference_needs_flexible_sizes() {
        let d = crate::denoisers::MixtureField::constant_modes(4, 1, &[1.0]).unwrap();
        let w = DenseWorld::zeros([8, 4, 4], 1);
        assert!(matches!(
            reference_step(&w, 0.5, 0.1, &d, "", GuidanceConfig::new(1.0)),
            Err(Error::Capability(_))
        ));
    }

    #[test]
    fn seam_examples() {
        let layout = TileLayout::plan([16, 8, 8], 8, 4).unwrap();
        let flat = DenseWorld::filled([16, 8, 8], 2, 3.0);
        let r = seam_discontinuity(&flat, &layout).unwrap();
        assert_eq!(r.max, 0.0);
        assert_eq!(r.faces.iter().map(|f| f.position).collect::<Vec<_>>(), vec![4, 8, 12]);
        let step = DenseWorld::from_fn([16, 8, 8], 1, |c, _| if c[0] >= 8 { 1.0 } else { 0.0 });
        let r = seam_discontinuity(&step, &layout).unwrap();
        assert_eq!(r.max, 1.0);
        assert_eq!(r.face_max, vec![0.0, 1.0, 0.0]);
        assert_eq!(r, seam_discontinuity(&step, &layout).unwrap());
    }

    #[test]
    fn baseline_single_tile_is_plain_run() {
        let mut cfg = RunConfig::new([8, 8, 8], 2, 8);
        cfg.schedule = Schedule::uniform(5);
        cfg.seed = 3;
        let d = border_pathology();
        let a = autoregressive_baseline(&cfg, &d, 1.5, &mut NoProgress).unwrap();
        let b = run_diffusion(&cfg, &d, &mut NoProgress).unwrap();
        assert!(a.world.bitwise_eq(&b.world));
    }

    #[test]
    fn baseline_converges_for_point_target() {
        let mut cfg = RunConfig::new([12, 8, 4], 1, 4);
        cfg.schedule = Schedule::uniform(10);
        let d = PointTarget::uniform(0.75);
        let out = autoregressive_baseline(&cfg, &d, 1.5, &mut NoProgress).unwrap();
        assert!(out.world.data().iter().all(|&v| (v - 0.75).abs() < 1e-6));
    }

    #[test]
    fn baseline_seams_not_better_than_tiled() {
        let mut cfg = RunConfig::new([32, 16, 16], 1, 16);
        cfg.schedule = Schedule::uniform(10);
        cfg.seed = 1;
        let d = border_pathology();
        let layout = cfg.layout().unwrap();
        let tiled = run_diffusion(&cfg, &d, &mut NoProgress).unwrap();
        let base = autoregressive_baseline(&cfg, &d, 1.5, &mut NoProgress).unwrap();
        let a = seam_discontinuity(&tiled.world, &layout).unwrap();
        let b = seam_discontinuity(&base.world, &layout).unwrap();
        assert!(b.max >= a.max, "baseline {b} tiled {a}");
    }

    #[test]
    fn cosine_beats_box_on_pathology() {
        let mut cfg = RunConfig::new([32, 16, 16], 1, 16);
        cfg.schedule = Schedule::uniform(10);
        let r = blend_ablation(&cfg, &border_pathology(), &[MaskKind::Cosine, MaskKind::Box]).unwrap();
        assert!(r[0].1.max < r[1].1.max, "{} vs {}", r[0].1, r[1].1);
    }
}
