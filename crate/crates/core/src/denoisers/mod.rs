//! The velocity-field contract and its implementations.
//!
//! A denoiser maps a block of voxel values at time `t` (1 = noise, 0 = data)
//! plus an opaque condition string to a velocity block of the same shape.
//! The empty condition is the unconditional one.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{voxel_count, Coord};

mod analytic;
mod recorded;
pub mod remote;
mod spec;

pub use analytic::{
    mixture_posterior, point_target_velocity, Component, MixtureField, Pattern, PatternField, PointTarget, Posterior,
};
pub use recorded::{request_digest, RecordingDenoiser, ReplayDenoiser};
pub use remote::RemoteDenoiser;
pub use spec::{build_denoiser, DenoiserSpec};

/// Condition string used for the unconditional pass.
pub const UNCONDITIONAL: &str = "";

/// Which block extents a denoiser accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SizeSupport {
    /// Any extent, including non-cubic whole-world blocks.
    Any,
    /// Cubic blocks up to `max` per side.
    Cubic { max: usize },
    /// Exactly one cubic size.
    Exactly { size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserCapabilities {
    pub sizes: SizeSupport,
    /// Required channel count, if fixed.
    pub channels: Option<usize>,
    /// Output at a voxel depends only on that voxel's value, `t` and the condition.
    pub pointwise: bool,
    pub deterministic: bool,
}

impl DenoiserCapabilities {
    pub fn supports_arbitrary_size(&self) -> bool {
        matches!(self.sizes, SizeSupport::Any)
    }

    /// Capability error if `req` is outside what this denoiser accepts.
    pub fn check(&self, req: &DenoiserRequest<'_>) -> Result<()> {
        let cubic = req.cubic_size();
        match (self.sizes, cubic) {
            (SizeSupport::Any, _) => {}
            (SizeSupport::Cubic { max }, Some(s)) if s <= max => {}
            (SizeSupport::Exactly { size }, Some(s)) if s == size => {}
            (sizes, _) => {
                return Err(Error::Capability(format!(
                    "block extent {:?} not supported ({sizes:?})",
                    req.extent
                )))
            }
        }
        if let Some(c) = self.channels {
            if c != req.channels {
                return Err(Error::Capability(format!(
                    "denoiser expects {c} channels, request has {}",
                    req.channels
                )));
            }
        }
        Ok(())
    }
}

/// One velocity evaluation.
#[derive(Debug, Clone, Copy)]
pub struct DenoiserRequest<'a> {
    /// `extent` voxels times `channels`, canonical order.
    pub values: &'a [f32],
    pub t: f64,
    pub condition: &'a str,
    /// Global origin of the block; informational.
    pub origin: Coord,
    pub extent: Coord,
    pub channels: usize,
}

impl<'a> DenoiserRequest<'a> {
    pub fn tile(values: &'a [f32], t: f64, condition: &'a str, origin: Coord, size: usize, channels: usize) -> Self {
        Self {
            values,
            t,
            condition,
            origin,
            extent: [size; 3],
            channels,
        }
    }

    pub fn cubic_size(&self) -> Option<usize> {
        (self.extent[0] == self.extent[1] && self.extent[1] == self.extent[2]).then_some(self.extent[0])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::Config(format!(
                "denoiser time must be in (0, 1], got {}",
                self.t
            )));
        }
        let expected = voxel_count(self.extent) * self.channels;
        if self.values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "request extent {:?} x {} channels needs {expected} values, got {}",
                self.extent,
                self.channels,
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("request contains non-finite values".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserResponse {
    pub velocity: Vec<f32>,
    /// Set when a mixture posterior degenerated and nearest-component weights were used.
    pub posterior_fallback: bool,
}

impl DenoiserResponse {
    pub fn new(velocity: Vec<f32>) -> Self {
        Self {
            velocity,
            posterior_fallback: false,
        }
    }
}

pub trait Denoiser: Send + Sync {
    /// Short identity string recorded in run manifests.
    fn name(&self) -> String;

    fn capabilities(&self) -> DenoiserCapabilities;

    fn velocity(&self, req: &DenoiserRequest<'_>) -> Result<DenoiserResponse>;
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn capabilities(&self) -> DenoiserCapabilities {
        (**self).capabilities()
    }
    fn velocity(&self, req: &DenoiserRequest<'_>) -> Result<DenoiserResponse> {
        (**self).velocity(req)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn name(&self) -> String {
        (**self).name()
    }
    fn capabilities(&self) -> DenoiserCapabilities {
        (**self).capabilities()
    }
    fn velocity(&self, req: &DenoiserRequest<'_>) -> Result<DenoiserResponse> {
        (**self).velocity(req)
    }
}

/// Counts every velocity call made through it.
pub struct CountingDenoiser<D> {
    inner: D,
    calls: AtomicU64,
}

impl<D: Denoiser> CountingDenoiser<D> {
    pub fn new(inner: D) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &D {
        &self.inner
    }
}

impl<D: Denoiser> Denoiser for CountingDenoiser<D> {
    fn name(&self) -> String {
        self.inner.name()
    }
    fn capabilities(&self) -> DenoiserCapabilities {
        self.inner.capabilities()
    }
    fn velocity(&self, req: &DenoiserRequest<'_>) -> Result<DenoiserResponse> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.velocity(req)
    }
}

/// Adds a fixed wall-clock delay to each call, standing in for a model
/// that runs on another device.
pub struct LatencyDenoiser<D> {
    inner: D,
    delay: Duration,
}

impl<D: Denoiser> LatencyDenoiser<D> {
    pub fn new(inner: D, delay: Duration) -> Self {
        Self { inner, delay }
    }
}

impl<D: Denoiser> Denoiser for LatencyDenoiser<D> {
    fn name(&self) -> String {
        format!("latency({}ms,{})", self.delay.as_millis(), self.inner.name())
    }
    fn capabilities(&self) -> DenoiserCapabilities {
        self.inner.capabilities()
    }
    fn velocity(&self, req: &DenoiserRequest<'_>) -> Result<DenoiserResponse> {
        std::thread::sleep(self.delay);
        self.inner.velocity(req)
    }
}
