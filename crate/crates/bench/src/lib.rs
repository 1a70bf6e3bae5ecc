//! Fixtures shared by the benchmarks.

pub use tiledworld as core;

use tiledworld::denoisers::PointTarget;
use tiledworld::grid::SparseWorld;
use tiledworld::sampler::init_noise;
use tiledworld::{Coord, DenseWorld, RunConfig, Schedule};

/// A short run over `dims` with the default tile/stride and guidance.
pub fn config(dims: Coord, channels: usize, tile: usize, steps: usize) -> RunConfig {
    let mut c = RunConfig::new(dims, channels, tile);
    c.schedule = Schedule::uniform(steps);
    c.seed = 7;
    c
}

pub fn point() -> PointTarget {
    PointTarget::uniform(0.5)
}

pub fn noise(dims: Coord, channels: usize) -> DenseWorld {
    init_noise(dims, channels, 7)
}

/// Keeps voxels below a wavy height field, roughly half the grid.
pub fn terrain(dims: Coord, channels: usize) -> SparseWorld {
    let occ = DenseWorld::from_fn(dims, 1, |c, _| {
        let h = dims[2] as f32 * (0.5 + 0.25 * ((c[0] as f32 * 0.3).sin() * (c[1] as f32 * 0.2).cos()));
        if (c[2] as f32) < h {
            1.0
        } else {
            0.0
        }
    });
    let values = noise(dims, channels);
    SparseWorld::sparsify(&values, &occ, 0.5).expect("matching dims")
}
