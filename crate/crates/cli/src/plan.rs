//! A fully resolved run: what `generate` and `expand` execute and what a
//! manifest records.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use tiledworld::container;
use tiledworld::denoisers::CountingDenoiser;
use tiledworld::inpaint::{blur_mask, embed_known, repaint_run};
use tiledworld::manifest::{sha256_hex, DenoiserRecord, OutputRecord, RunManifest, RunMode, RunSettings, ENGINE};
use tiledworld::pipeline::{build_decoder, run_two_stage, AffineStructure, PointCloud, TwoStageConfig};
use tiledworld::sampler::{NoProgress, Progress, StderrProgress};
use tiledworld::{build_denoiser, Coord, DenoiserSpec, DownsampleMode, RunConfig, StepRecord};

#[derive(Debug, Clone)]
pub enum Mode {
    Generate,
    TwoStage {
        upsample: usize,
        stage2_channels: usize,
        stage2_denoiser: String,
        decoder: String,
        structure: AffineStructure,
        mask_mode: DownsampleMode,
    },
    Expand {
        input: PathBuf,
        mask: Option<PathBuf>,
        place: Option<Coord>,
        sigma: f64,
        resample: usize,
    },
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub config: RunConfig,
    pub denoiser: String,
    pub mode: Mode,
    pub out: PathBuf,
    /// Decoded stage-two grid (two-stage only).
    pub decoded: Option<PathBuf>,
    pub ply: Option<(PathBuf, f32)>,
    pub quiet: bool,
}

pub struct Executed {
    pub files: Vec<(PathBuf, Vec<u8>)>,
    pub tiles: usize,
    pub calls: u64,
    pub steps: Vec<StepRecord>,
    pub denoiser: DenoiserRecord,
    pub stage2: Option<DenoiserRecord>,
    pub warnings: Vec<String>,
}

fn denoiser_from(spec: &str) -> Result<Box<dyn tiledworld::Denoiser>> {
    let parsed: DenoiserSpec = spec.parse()?;
    build_denoiser(&parsed).with_context(|| format!("building denoiser {spec:?}"))
}

fn read_world(path: &Path) -> Result<(tiledworld::DenseWorld, Vec<u8>)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let world = container::decode(&bytes)
        .with_context(|| format!("parsing {}", path.display()))?
        .into_dense();
    Ok((world, bytes))
}

impl Plan {
    pub fn execute(&self) -> Result<Executed> {
        let mut stderr = StderrProgress;
        let mut silent = NoProgress;
        let progress: &mut (dyn Progress + Send) = if self.quiet { &mut silent } else { &mut stderr };
        let cfg = &self.config;
        let d = CountingDenoiser::new(denoiser_from(&self.denoiser)?);
        let record = DenoiserRecord::new(&self.denoiser, &d);
        let tiles = cfg.layout()?.len();
        let mut files = Vec::new();
        let mut warnings = Vec::new();
        let mut stage2 = None;
        let (steps, calls);
        match &self.mode {
            Mode::Generate => {
                let out = tiledworld::run_diffusion(cfg, &d, progress)?;
                files.push((self.out.clone(), container::encode_dense(&out.world)));
                if let Some((path, thr)) = &self.ply {
                    let pc = PointCloud::from_grid(&out.world, cfg.tile_size, *thr)?;
                    files.push((path.clone(), pc.to_ply()));
                }
                steps = out.steps;
                calls = d.calls();
            }
            Mode::TwoStage {
                upsample,
                stage2_channels,
                stage2_denoiser,
                decoder,
                structure,
                mask_mode,
            } => {
                let d2 = CountingDenoiser::new(denoiser_from(stage2_denoiser)?);
                stage2 = Some(DenoiserRecord::new(stage2_denoiser, &d2));
                let dec = build_decoder(&decoder.parse()?)?;
                let ts = TwoStageConfig {
                    stage1: cfg.clone(),
                    upsample: *upsample,
                    stage2_channels: *stage2_channels,
                    mask_mode: *mask_mode,
                    structure: structure.clone(),
                };
                let out = run_two_stage(&ts, &d, &d2, dec.as_ref(), progress)?;
                files.push((self.out.clone(), container::encode_sparse(&out.latent)));
                if let Some(path) = &self.decoded {
                    files.push((path.clone(), container::encode_dense(&out.decoded)));
                }
                if let Some((path, thr)) = &self.ply {
                    let pc = PointCloud::from_grid(&out.decoded, ts.stage2_tile(), *thr)?;
                    files.push((path.clone(), pc.to_ply()));
                }
                warnings = out.warnings;
                steps = out.steps;
                calls = d.calls() + d2.calls();
            }
            Mode::Expand {
                input,
                mask,
                place,
                sigma,
                resample,
            } => {
                let (known, _) = read_world(input)?;
                let (gt, binary) = match (place, mask) {
                    (Some(offset), None) => embed_known(&known, cfg.dims, *offset)?,
                    (None, Some(m)) => {
                        let (mask, _) = read_world(m)?;
                        if mask.dims() != known.dims() || mask.channels() != 1 {
                            bail!(
                                "mask {} is {:?}x{}, input {} is {:?}; the mask must be single-channel with the same dims",
                                m.display(),
                                mask.dims(),
                                mask.channels(),
                                input.display(),
                                known.dims()
                            );
                        }
                        (known, mask)
                    }
                    _ => bail!(crate::Usage("expand needs exactly one of --mask and --place".into())),
                };
                if gt.dims() != cfg.dims {
                    bail!("input dims {:?} do not match --dims {:?}", gt.dims(), cfg.dims);
                }
                let keep = blur_mask(&binary, *sigma)?;
                let out = repaint_run(cfg, &d, &gt, &keep, *resample, progress)?;
                files.push((self.out.clone(), container::encode_dense(&out.world)));
                if let Some((path, thr)) = &self.ply {
                    let pc = PointCloud::from_grid(&out.world, cfg.tile_size, *thr)?;
                    files.push((path.clone(), pc.to_ply()));
                }
                steps = out.steps;
                calls = d.calls();
            }
        }
        Ok(Executed {
            files,
            tiles,
            calls,
            steps,
            denoiser: record,
            stage2,
            warnings,
        })
    }

    pub fn manifest(&self, ex: &Executed) -> Result<RunManifest> {
        let mode = match &self.mode {
            Mode::Generate => RunMode::Generate,
            Mode::TwoStage {
                upsample,
                stage2_channels,
                decoder,
                structure,
                mask_mode,
                ..
            } => RunMode::TwoStage {
                upsample: *upsample,
                stage2_channels: *stage2_channels,
                stage2_denoiser: ex.stage2.clone().ok_or_else(|| anyhow!("stage-two denoiser missing"))?,
                decoder: decoder.clone(),
                structure_weights: structure.weights.clone(),
                structure_bias: structure.bias,
                mask_mode: *mask_mode,
            },
            Mode::Expand {
                input,
                mask,
                place,
                sigma,
                resample,
            } => RunMode::Expand {
                ground_truth: input.display().to_string(),
                ground_truth_sha256: sha256_hex(&fs::read(input)?),
                mask: mask.as_ref().map(|m| m.display().to_string()),
                mask_sha256: mask.as_ref().map(|m| fs::read(m).map(|b| sha256_hex(&b))).transpose()?,
                place: *place,
                sigma: *sigma,
                resample: *resample,
            },
        };
        Ok(RunManifest {
            engine: ENGINE.to_string(),
            settings: RunSettings::from_config(&self.config),
            denoiser: ex.denoiser.clone(),
            mode,
            tiles: ex.tiles,
            denoiser_calls: ex.calls,
            ply_threshold: self.ply.as_ref().map(|p| p.1),
            outputs: ex
                .files
                .iter()
                .map(|(p, b)| OutputRecord {
                    path: p.display().to_string(),
                    sha256: sha256_hex(b),
                })
                .collect(),
            steps: ex.steps.clone(),
        })
    }

    /// Rebuilds the plan a manifest was written from.
    pub fn from_manifest(m: &RunManifest) -> Result<Self> {
        let config = m.settings.to_config()?;
        let out = PathBuf::from(
            &m.outputs
                .first()
                .ok_or_else(|| anyhow!("manifest lists no outputs"))?
                .path,
        );
        let rest: Vec<PathBuf> = m.outputs[1..].iter().map(|o| PathBuf::from(&o.path)).collect();
        let is_ply = |p: &PathBuf| p.extension().is_some_and(|e| e == "ply");
        let ply = match (rest.iter().find(|p| is_ply(p)), m.ply_threshold) {
            (Some(p), Some(t)) => Some((p.clone(), t)),
            (None, _) => None,
            (Some(_), None) => bail!("manifest lists a point cloud but no threshold"),
        };
        let decoded = rest.iter().find(|p| !is_ply(p)).cloned();
        let mode = match &m.mode {
            RunMode::Generate => Mode::Generate,
            RunMode::TwoStage {
                upsample,
                stage2_channels,
                stage2_denoiser,
                decoder,
                structure_weights,
                structure_bias,
                mask_mode,
            } => Mode::TwoStage {
                upsample: *upsample,
                stage2_channels: *stage2_channels,
                stage2_denoiser: stage2_denoiser.spec.clone(),
                decoder: decoder.clone(),
                structure: AffineStructure {
                    weights: structure_weights.clone(),
                    bias: *structure_bias,
                    factor: *upsample,
                },
                mask_mode: *mask_mode,
            },
            RunMode::Expand {
                ground_truth,
                ground_truth_sha256,
                mask,
                mask_sha256,
                place,
                sigma,
                resample,
            } => {
                let check = |path: &str, want: &str| -> Result<()> {
                    let got = sha256_hex(&fs::read(path).with_context(|| format!("reading {path}"))?);
                    if got != want {
                        bail!("{path} changed since the manifest was written (sha256 {got}, recorded {want})");
                    }
                    Ok(())
                };
                check(ground_truth, ground_truth_sha256)?;
                if let (Some(p), Some(h)) = (mask, mask_sha256) {
                    check(p, h)?;
                }
                Mode::Expand {
                    input: PathBuf::from(ground_truth),
                    mask: mask.as_ref().map(PathBuf::from),
                    place: *place,
                    sigma: *sigma,
                    resample: *resample,
                }
            }
        };
        Ok(Self {
            config,
            denoiser: m.denoiser.spec.clone(),
            mode,
            out,
            decoded,
            ply,
            quiet: true,
        })
    }
}

/// Writes every output plus the manifest beside the primary one.
pub fn write_outputs(plan: &Plan, ex: &Executed) -> Result<PathBuf> {
    for (path, bytes) in &ex.files {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    }
    let manifest = plan.manifest(ex)?;
    let mpath = RunManifest::path_for(&plan.out);
    manifest.save(&mpath)?;
    Ok(mpath)
}
