//! Closed-form velocity fields under the linear path `x_t = (1 - t) x0 + t eps`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Denoiser, DenoiserCapabilities, DenoiserRequest, DenoiserResponse, SizeSupport};
use crate::error::{Error, Result};
use crate::grid::coords;

fn lookup<'a, T>(table: &'a BTreeMap<String, T>, fallback: Option<&'a T>, condition: &str) -> Result<&'a T> {
    table
        .get(condition)
        .or(fallback)
        .ok_or_else(|| Error::UnknownCondition {
            condition: condition.to_string(),
            known: table.keys().cloned().collect(),
        })
}

/// Velocity `(x - mu) / t` towards a fixed point per condition.
///
/// Euler integration of this field from `t = 1` lands exactly on `mu` at
/// `t = 0`, whatever the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct PointTarget {
    targets: BTreeMap<String, Vec<f32>>,
    fallback: Option<Vec<f32>>,
}

impl PointTarget {
    /// One target for every condition (including the unconditional one).
    pub fn uniform(mu: f32) -> Self {
        Self {
            targets: BTreeMap::new(),
            fallback: Some(vec![mu]),
        }
    }

    pub fn uniform_per_channel(mu: Vec<f32>) -> Self {
        Self {
            targets: BTreeMap::new(),
            fallback: Some(mu),
        }
    }

    /// Targets keyed by condition; unknown conditions are an error.
    pub fn from_table(targets: BTreeMap<String, Vec<f32>>) -> Self {
        Self {
            targets,
            fallback: None,
        }
    }

    pub fn with_target(mut self, condition: impl Into<String>, mu: Vec<f32>) -> Self {
        self.targets.insert(condition.into(), mu);
        self
    }

    pub fn target(&self, condition: &str) -> Result<&[f32]> {
        lookup(&self.targets, self.fallback.as_ref(), condition).map(Vec::as_slice)
    }
}

/// `(x - mu) / t` elementwise, with `mu` broadcast over voxels (and over
/// channels when it has length one).
pub fn point_target_velocity(values: &[f32], t: f64, mu: &[f32], channels: usize) -> Result<Vec<f32>> {
    if mu.len() != 1 && mu.len() != channels {
        return Err(Error::ShapeMismatch(format!(
            "target has {} channels, block has {channels}",
            mu.len()
        )));
    }
    Ok(values
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let m = if mu.len() == 1 { mu[0] } else { mu[i % channels] };
            ((x as f64 - m as f64) / t) as f32
        })
        .collect())
}

impl Denoiser for PointTarget {
    fn name(&self) -> String {
        match (&self.fallback, self.targets.len()) {
            (Some(mu), 0) => format!("point(mu={mu:?})"),
            _ => format!("point(table of {})", self.targets.len()),
        }
    }

    fn capabilities(&self) -> DenoiserCapabilities {
        DenoiserCapabilities {
            sizes: SizeSupport::Any,
            channels: None,
            pointwise: true,
            deterministic: true,
        }
    }

    fn velocity(&self, req: &DenoiserRequest<'_>) -> Result<DenoiserResponse> {
        req.validate()?;
        let mu = self.target(req.condition)?;
        point_target_velocity(req.values, req.t, mu, req.channels).map(DenoiserResponse::new)
    }
}

/// Mixture component: prior weight and a mean over the whole tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub weights: Vec<f64>,
    /// True when every log-density was non-finite and nearest-mean weights were used.
    pub fallback: bool,
}

/// Posterior responsibilities `w_k ∝ pi_k exp(-|x - (1-t) mu_k|^2 / (2 t^2))`,
/// evaluated in the log domain.
pub fn mixture_posterior(x: &[f32], t: f64, components: &[Component]) -> Posterior {
    let sq_dist = |c: &Component, scale: f64| -> f64 {
        x.iter()
            .zip(&c.mean)
            .map(|(&xi, &mi)| {
                let d = xi as f64 - scale * mi as f64;
                d * d
            })
            .sum()
    };
    let logs: Vec<f64> = components
        .iter()
        .map(|c| c.weight.ln() - sq_dist(c, 1.0 - t) / (2.0 * t * t))
        .collect();
    let max = logs
        .iter()
        .copied()
        .filter(|l| l.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if max.is_finite() {
        let unnorm: Vec<f64> = logs
            .iter()
            .map(|&l| if l.is_finite() { (l - max).exp() } else { 0.0 })
            .collect();
        let total: f64 = unnorm.iter().sum();
        Posterior {
            weights: unnorm.into_iter().map(|u| u / total).collect(),
            fallback: false,
        }
    } else {
        let nearest = components
            .iter()
            .map(|c| sq_dist(c, 1.0 - t))
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |best, (k, d)| if d < best.1 { (k, d) } else { best },
            )
            .0;
        let mut weights = vec![0.0; components.len()];
        if !weights.is_empty() {
            weights[nearest] = 1.0;
        }
        Posterior {
            weights,
            fallback: true,
        }
    }
}

/// Marginal velocity of a mixture of point targets; components live in tile space.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureField {
    size: usize,
    channels: usize,
    table: BTreeMap<String, Vec<Component>>,
    fallback: Option<Vec<Component>>,
}

impl MixtureField {
    fn checked(size: usize, channels: usize, comps: &[Component]) -> Result<()> {
        if comps.is_empty() {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        let n = size * size * size * channels;
        if comps.iter().any(|c| c.mean.len() != n) {
            return Err(Error::ShapeMismatch(format!(
                "mixture means must have {n} values for size {size} x {channels} channels"
            )));
        }
        let total: f64 = comps.iter().map(|c| c.weight).sum();
        if comps.iter().any(|c| c.weight.is_nan() || c.weight <= 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "mixture weights must be positive and sum to 1 (sum {total})"
            )));
        }
        Ok(())
    }

    pub fn uniform(size: usize, channels: usize, components: Vec<Component>) -> Result<Self> {
        Self::checked(size, channels, &components)?;
        Ok(Self {
            size,
            channels,
            table: BTreeMap::new(),
            fallback: Some(components),
        })
    }

    pub fn from_table(size: usize, channels: usize, table: BTreeMap<String, Vec<Component>>) -> Result<Self> {
        for comps in table.values() {
            Self::checked(size, channels, comps)?;
        }
        Ok(Self {
            size,
            channels,
            table,
            fallback: None,
        })
    }

    /// Equal-weight components, each a constant block.
    pub fn constant_modes(size: usize, channels: usize, modes: &[f32]) -> Result<Self> {
        let n = size * size * size * channels;
        let w = 1.0 / modes.len() as f64;
        Self::uniform(
            size,
            channels,
            modes
                .iter()
                .map(|&m| Component {
                    weight: w,
                    mean: vec![m; n],
                })
                .collect(),
        )
    }

    pub fn components(&self, condition: &str) -> Result<&[Component]> {
        lookup(&self.table, self.fallback.as_ref(), condition).map(Vec::as_slice)
    }
}

impl Denoiser for MixtureField {
    fn name(&self) -> String {
        format!("mixture(size={},channels={})", self.size, self.channels)
    }

    fn capabilities(&self) -> DenoiserCapabilities {
        DenoiserCapabilities {
            sizes: SizeSupport::Exactly { size: self.size },
            channels: Some(self.channels),
            pointwise: false,
            deterministic: true,
        }
    }

    fn velocity(&self, req: &DenoiserRequest<'_>) -> Result<DenoiserResponse> {
        req.validate()?;
        self.capabilities().check(req)?;
        let comps = self.components(req.condition)?;
        let post = mixture_posterior(req.values, req.t, comps);
        let velocity = req
            .values
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let target: f64 = comps.iter().zip(&post.weights).map(|(c, w)| w * c.mean[i] as f64).sum();
                ((x as f64 - target) / req.t) as f32
            })
            .collect();
        Ok(DenoiserResponse {
            velocity,
            posterior_fallback: post.fallback,
        })
    }
}

/// Spatial target over block-local coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pattern {
    Constant {
        value: f32,
    },
    /// `border` on the outermost voxel layer of the block, `interior` elsewhere.
    /// Mimics a tile model that builds walls along its own boundary.
    Border {
        interior: f32,
        border: f32,
    },
    /// `base + slope * local[axis]`.
    Ramp {
        base: f32,
        slope: f32,
        axis: usize,
    },
}

impl Pattern {
    pub fn value(&self, local: [usize; 3], extent: [usize; 3]) -> f32 {
        match *self {
            Pattern::Constant { value } => value,
            Pattern::Border { interior, border } => {
                let on_face = (0..3).any(|a| local[a] == 0 || local[a] + 1 == extent[a]);
                if on_face {
                    border
                } else {
                    interior
                }
            }
            Pattern::Ramp { base, slope, axis } => base + slope * local[axis.min(2)] as f32,
        }
    }
}

/// Velocity `(x - mu_p(local)) / t` for a per-condition spatial pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternField {
    table: BTreeMap<String, Pattern>,
    fallback: Option<Pattern>,
}

impl PatternField {
    pub fn uniform(pattern: Pattern) -> Self {
        Self {
            table: BTreeMap::new(),
            fallback: Some(pattern),
        }
    }

    pub fn from_table(table: BTreeMap<String, Pattern>) -> Self {
        Self { table, fallback: None }
    }

    pub fn with_pattern(mut self, condition: impl Into<String>, p: Pattern) -> Self {
        self.table.insert(condition.into(), p);
        self
    }

    pub fn pattern(&self, condition: &str) -> Result<&Pattern> {
        lookup(&self.table, self.fallback.as_ref(), condition)
    }
}

impl Denoiser for PatternField {
    fn name(&self) -> String {
        match (&self.fallback, self.table.len()) {
            (Some(p), 0) => format!("pattern({p:?})"),
            _ => format!("pattern(table of {})", self.table.len()),
        }
    }

    fn capabilities(&self) -> DenoiserCapabilities {
        DenoiserCapabilities {
            sizes: SizeSupport::Any,
            channels: None,
            pointwise: false,
            deterministic: true,
        }
    }

    fn velocity(&self, req: &DenoiserRequest<'_>) -> Result<DenoiserResponse> {
        req.validate()?;
        let p = self.pattern(req.condition)?;
        let c = req.channels;
        let mut out = Vec::with_capacity(req.values.len());
        for (v, l) in coords(req.extent).enumerate() {
            let mu = p.value(l, req.extent) as f64;
            for ch in 0..c {
                out.push(((req.values[v * c + ch] as f64 - mu) / req.t) as f32);
            }
        }
        Ok(DenoiserResponse::new(out))
    }
}
