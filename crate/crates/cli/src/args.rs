use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use tiledworld::Coord;

use crate::Usage;

#[derive(Parser, Debug)]
#[command(
    name = "tiledworld",
    version,
    about = "Arbitrary-size 3D worlds from a fixed-size tile denoiser"
)]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a world from noise (optionally both stages).
    Generate(GenerateArgs),
    /// Grow or edit a world around a known region.
    Expand(ExpandArgs),
    /// Decode a world tile by tile without blending.
    Decode(DecodeArgs),
    /// Print a tile layout and its coverage histogram.
    #[command(name = "validate-layout", alias = "validate")]
    ValidateLayout(LayoutArgs),
    /// Compare seam discontinuities across blend masks.
    Ablate(AblateArgs),
    /// Count denoiser calls and time runs across thread counts.
    Bench(BenchArgs),
    /// Re-run a manifest and check every output bit for bit.
    Replay(ReplayArgs),
}

pub fn parse_dims(s: &str) -> Result<Coord, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected X,Y,Z, got {s:?}"));
    }
    let mut out = [0usize; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| format!("bad dimension {p:?}"))?;
        if *o == 0 {
            return Err("dimensions must be positive".into());
        }
    }
    Ok(out)
}

fn parse_offset(s: &str) -> Result<Coord, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected X,Y,Z, got {s:?}"));
    }
    let mut out = [0usize; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| format!("bad offset {p:?}"))?;
    }
    Ok(out)
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// World size in voxels.
    #[arg(long, value_parser = parse_dims, value_name = "X,Y,Z")]
    pub dims: Option<Coord>,
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    /// Tile edge S.
    #[arg(long, default_value_t = 16)]
    pub tile: usize,
    /// Tile stride s [default: S/2].
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, default_value_t = 25)]
    pub steps: usize,
    /// Classifier-free guidance scale.
    #[arg(long, default_value_t = 7.5)]
    pub cfg: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Prompt grid file, one cell per non-overlapping tile.
    #[arg(long, value_name = "FILE", conflicts_with = "prompt")]
    pub prompts: Option<PathBuf>,
    /// One prompt for the whole world.
    #[arg(long)]
    pub prompt: Option<String>,
    /// Denoiser spec, e.g. point:mu=0.5 or remote:tcp=127.0.0.1:9000.
    #[arg(long, value_name = "SPEC")]
    pub denoiser: Option<String>,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "TILEDWORLD_THREADS", default_value_t = 0)]
    pub threads: usize,
    /// Flat key=value file of flag values; flags on the command line win.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// No per-step progress on stderr.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Blend mask: cosine or box.
    #[arg(long, default_value = "cosine")]
    pub blend: String,
    #[arg(long, short, default_value = "world.twld")]
    pub out: PathBuf,
    /// Also write a point cloud of the (decoded) result.
    #[arg(long, value_name = "FILE")]
    pub ply: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub ply_threshold: f32,
    /// Dense structure stage, occupancy, then sparse latent stage.
    #[arg(long)]
    pub two_stage: bool,
    #[arg(long, default_value_t = 4)]
    pub upsample: usize,
    #[arg(long, default_value_t = 8)]
    pub stage2_channels: usize,
    /// Stage-two denoiser [default: same as --denoiser].
    #[arg(long, value_name = "SPEC")]
    pub stage2_denoiser: Option<String>,
    /// Stage-two decoder spec.
    #[arg(long, default_value = "identity")]
    pub decoder: String,
    /// Where to write the decoded stage-two grid.
    #[arg(long, value_name = "FILE")]
    pub decoded: Option<PathBuf>,
    /// Stage-one mask derivation: recompute or average-pool.
    #[arg(long, default_value = "recompute")]
    pub mask_downsample: String,
}

#[derive(Args, Debug)]
pub struct ExpandArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Ground-truth world.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Single-channel keep mask with the same dims as the input.
    #[arg(long, value_name = "FILE")]
    pub mask: Option<PathBuf>,
    /// Place the input at this voxel offset inside --dims and keep all of it.
    #[arg(long, value_parser = parse_offset, value_name = "X,Y,Z")]
    pub place: Option<Coord>,
    #[arg(long, default_value_t = tiledworld::inpaint::DEFAULT_SIGMA)]
    pub sigma: f64,
    #[arg(long, default_value_t = tiledworld::inpaint::DEFAULT_RESAMPLE)]
    pub resample: usize,
    #[arg(long, default_value = "cosine")]
    pub blend: String,
    #[arg(long, short, default_value = "expanded.twld")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, default_value = "identity")]
    pub decoder: String,
    #[arg(long, default_value_t = 16)]
    pub tile: usize,
    #[arg(long, short, default_value = "decoded.twld")]
    pub out: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub ply: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    pub ply_threshold: f32,
    #[arg(long, env = "TILEDWORLD_THREADS", default_value_t = 0)]
    pub threads: usize,
}

#[derive(Args, Debug)]
pub struct LayoutArgs {
    #[arg(long, value_parser = parse_dims, value_name = "X,Y,Z")]
    pub dims: Coord,
    #[arg(long, default_value_t = 16)]
    pub tile: usize,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Use the non-overlapping decode layout (stride = S).
    #[arg(long)]
    pub decode: bool,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated masks to compare.
    #[arg(long, default_value = "cosine,box")]
    pub blend: String,
    /// Also run the tile-by-tile inpainting baseline.
    #[arg(long)]
    pub baseline: bool,
    /// Mask blur for the baseline.
    #[arg(long, default_value_t = tiledworld::inpaint::DEFAULT_SIGMA)]
    pub sigma: f64,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Thread counts to time.
    #[arg(long, default_value = "1,8")]
    pub threads_list: String,
    /// Fixed delay added to every denoiser call.
    #[arg(long, default_value_t = 0)]
    pub latency_ms: u64,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Write the reproduced outputs here.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Override the recorded worker count.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Splices `--config FILE` entries in front of the explicit flags so that
/// later (explicit) occurrences override them.
pub fn splice_config(argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = Some(
                argv.get(i + 1)
                    .map(PathBuf::from)
                    .ok_or_else(|| anyhow!(Usage("--config needs a file".into())))?,
            );
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading config file {}", path.display()))
        .map_err(|e| anyhow!(Usage(format!("{e:#}"))))?;
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!(Usage(format!("{}:{}: expected key = value", path.display(), n + 1))))?;
        let (k, v) = (k.trim().trim_start_matches("--"), v.trim());
        match v {
            "true" => extra.push(OsString::from(format!("--{k}"))),
            "false" => {}
            _ => extra.push(OsString::from(format!("--{k}={v}"))),
        }
    }
    let split = argv.len().min(2);
    let mut out: Vec<OsString> = argv[..split].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[split..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_parsing() {
        assert_eq!(parse_dims("32, 32,16").unwrap(), [32, 32, 16]);
        assert!(parse_dims("32,32").is_err());
        assert!(parse_dims("0,1,1").is_err());
        assert_eq!(parse_offset("0,16,0").unwrap(), [0, 16, 0]);
    }

    #[test]
    fn flags_override_config() {
        let dir = std::env::temp_dir().join(format!("tw-cfg-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let cfg = dir.join("run.conf");
        fs::write(&cfg, "# run\nseed = 9\nsteps=3\nquiet = true\n").unwrap();
        let argv: Vec<OsString> = [
            "tiledworld",
            "generate",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "4",
        ]
        .iter()
        .map(OsString::from)
        .collect();
        let spliced = splice_config(argv).unwrap();
        let cli = Cli::try_parse_from(spliced).unwrap();
        let Command::Generate(g) = cli.command else { panic!() };
        assert_eq!(g.run.seed, 4);
        assert_eq!(g.run.steps, 3);
        assert!(g.run.quiet);
        fs::remove_dir_all(dir).unwrap();
    }
}
