//! Cosine tile weights and their normalization.
//!
//! The 1D profile `cos(pi * ((d + 1) / (S + 1) - 1/2))` peaks at the tile
//! center and stays strictly positive on `d in 0..S`, so any voxel covered by
//! at least one tile has a positive weight sum.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{coords, linear_index, voxel_count, Coord, LocalCoord};
use crate::tiling::TileLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    Cosine,
    /// Uniform weights; the plain-averaging ablation.
    Box,
    /// Anything else (pooled or hand-built weights).
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DownsampleMode {
    /// Evaluate the cosine profile again at the reduced size.
    #[default]
    Recompute,
    /// Average-pool `factor^3` blocks of the full-size weights.
    AveragePool,
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskKind::Cosine => "cosine",
            MaskKind::Box => "box",
            MaskKind::Custom => "custom",
        })
    }
}

impl FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cosine" => Ok(MaskKind::Cosine),
            "box" => Ok(MaskKind::Box),
            other => Err(Error::Config(format!(
                "unknown blend mask {other:?} (expected cosine or box)"
            ))),
        }
    }
}

impl FromStr for DownsampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "recompute" => Ok(DownsampleMode::Recompute),
            "average-pool" | "pool" => Ok(DownsampleMode::AveragePool),
            other => Err(Error::Config(format!(
                "unknown mask downsampling {other:?} (expected recompute or average-pool)"
            ))),
        }
    }
}

/// One axis of the cosine weight.
pub fn cosine_profile(d: usize, size: usize) -> f64 {
    // the curve is symmetric about the centre; folding keeps it bitwise so
    let d = d.min(size.saturating_sub(1).saturating_sub(d));
    (PI * ((d as f64 + 1.0) / (size as f64 + 1.0) - 0.5)).cos()
}

/// Weight of a tile-local coordinate; exactly zero outside the tile.
pub fn cosine_weight(local: LocalCoord, size: usize) -> f64 {
    match local.within(size) {
        Some(l) => l.iter().map(|&d| cosine_profile(d, size)).product(),
        None => 0.0,
    }
}

/// Precomputed `S^3` weights in canonical local order.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendMask {
    size: usize,
    kind: MaskKind,
    weights: Vec<f64>,
}

impl BlendMask {
    pub fn cosine(size: usize) -> Self {
        assert!(size >= 1, "mask size must be positive");
        let profile: Vec<f64> = (0..size).map(|d| cosine_profile(d, size)).collect();
        let mut weights = Vec::with_capacity(size * size * size);
        for x in &profile {
            for y in &profile {
                for z in &profile {
                    weights.push(x * y * z);
                }
            }
        }
        Self {
            size,
            kind: MaskKind::Cosine,
            weights,
        }
    }

    /// All-ones weights.
    pub fn boxed(size: usize) -> Self {
        Self {
            kind: MaskKind::Box,
            ..Self::uniform(size, 1.0)
        }
    }

    pub fn uniform(size: usize, value: f64) -> Self {
        assert!(size >= 1 && value > 0.0);
        Self {
            size,
            kind: MaskKind::Custom,
            weights: vec![value; size * size * size],
        }
    }

    pub fn from_weights(size: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != size * size * size {
            return Err(Error::ShapeMismatch(format!(
                "mask of size {size} needs {} weights, got {}",
                size * size * size,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Config("mask weights must be finite and positive".into()));
        }
        Ok(Self {
            size,
            kind: MaskKind::Custom,
            weights,
        })
    }

    pub fn of_kind(kind: MaskKind, size: usize) -> Self {
        match kind {
            MaskKind::Box => Self::boxed(size),
            _ => Self::cosine(size),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, l: Coord) -> f64 {
        self.weights[(l[0] * self.size + l[1]) * self.size + l[2]]
    }

    /// Mask for tiles `factor` times smaller per axis.
    pub fn downsample(&self, factor: usize, mode: DownsampleMode) -> Result<Self> {
        if factor == 0 || !self.size.is_multiple_of(factor) {
            return Err(Error::Config(format!(
                "downsample factor {factor} does not divide mask size {}",
                self.size
            )));
        }
        let small = self.size / factor;
        match (mode, self.kind) {
            (_, _) if factor == 1 => Ok(self.clone()),
            (DownsampleMode::Recompute, MaskKind::Cosine) => Ok(Self::cosine(small)),
            (DownsampleMode::Recompute, MaskKind::Box) => Ok(Self::boxed(small)),
            _ => {
                let mut weights = vec![0.0; small * small * small];
                let norm = (factor * factor * factor) as f64;
                for l in coords([self.size; 3]) {
                    let s = [l[0] / factor, l[1] / factor, l[2] / factor];
                    weights[(s[0] * small + s[1]) * small + s[2]] += self.weight(l) / norm;
                }
                Self::from_weights(small, weights)
            }
        }
    }
}

/// Shared cosine masks, built once per size.
pub fn cached_cosine(size: usize) -> Arc<BlendMask> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<BlendMask>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut guard = cache.lock().unwrap_or_else(|p| p.into_inner());
    guard
        .entry(size)
        .or_insert_with(|| Arc::new(BlendMask::cosine(size)))
        .clone()
}

/// Per-voxel sum of normalized tile weights `beta_i / sum_j beta_j`.
///
/// Equals one wherever the voxel is covered; zero where it is not.
pub fn normalized_weight_sums(layout: &TileLayout, mask: &BlendMask) -> Vec<f64> {
    let dims = layout.dims();
    let s = layout.tile_size();
    let mut den = vec![0.0f64; voxel_count(dims)];
    for o in layout.origins() {
        for l in coords([s; 3]) {
            den[linear_index(dims, [o[0] + l[0], o[1] + l[1], o[2] + l[2]])] += mask.weight(l);
        }
    }
    let mut sums = vec![0.0f64; den.len()];
    for o in layout.origins() {
        for l in coords([s; 3]) {
            let g = linear_index(dims, [o[0] + l[0], o[1] + l[1], o[2] + l[2]]);
            sums[g] += mask.weight(l) / den[g];
        }
    }
    sums
}
