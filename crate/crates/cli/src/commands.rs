use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use tiledworld::container;
use tiledworld::denoisers::{CountingDenoiser, LatencyDenoiser};
use tiledworld::manifest::{sha256_hex, RunManifest};
use tiledworld::oracle::{autoregressive_baseline, blend_ablation, seam_discontinuity};
use tiledworld::pipeline::{build_decoder, decode_tiled, AffineStructure, PointCloud};
use tiledworld::prompts::parse_prompt_grid;
use tiledworld::sampler::{with_threads, NoProgress};
use tiledworld::{
    build_denoiser, Conditioning, DenoiserSpec, DownsampleMode, GuidanceConfig, MaskKind, RunConfig, Schedule,
    TileLayout,
};

use crate::args::{
    AblateArgs, BenchArgs, Command, DecodeArgs, ExpandArgs, GenerateArgs, LayoutArgs, ReplayArgs, RunArgs,
};
use crate::plan::{write_outputs, Mode, Plan};
use crate::Usage;

const ABLATE_DENOISER: &str = "pattern:border=1,interior=0";
const BENCH_DENOISER: &str = "point:mu=0.5";

pub fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Generate(a) => generate(a),
        Command::Expand(a) => expand(a),
        Command::Decode(a) => decode(a),
        Command::ValidateLayout(a) => validate_layout(a),
        Command::Ablate(a) => ablate(a),
        Command::Bench(a) => bench(a),
        Command::Replay(a) => replay(a),
    }
    .map(|()| ExitCode::SUCCESS)
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(Usage(msg.into()))
}

/// Everything in `RunArgs` checked before any denoiser is built.
fn resolve_config(run: &RunArgs, dims: Option<tiledworld::Coord>, blend: &str) -> Result<RunConfig> {
    let dims = dims.ok_or_else(|| usage("--dims is required"))?;
    let blend: MaskKind = blend.parse().map_err(|e| usage(format!("--blend: {e}")))?;
    if run.steps == 0 {
        return Err(usage("--steps must be at least 1"));
    }
    if !run.cfg.is_finite() {
        return Err(usage("--cfg must be finite"));
    }
    let mut cfg = RunConfig::new(dims, run.channels, run.tile);
    if let Some(s) = run.stride {
        cfg.stride = s;
    }
    cfg.seed = run.seed;
    cfg.schedule = Schedule::uniform(run.steps);
    cfg.guidance = GuidanceConfig::new(run.cfg);
    cfg.blend = blend;
    cfg.threads = run.threads;
    if let Some(path) = &run.prompts {
        let text =
            fs::read_to_string(path).map_err(|e| usage(format!("cannot read prompt grid {}: {e}", path.display())))?;
        let grid = parse_prompt_grid(&text, run.tile).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        cfg.conditioning = Conditioning::Grid(grid);
    } else if let Some(p) = &run.prompt {
        cfg.conditioning = Conditioning::Uniform(p.clone());
    }
    if run.channels == 0 {
        return Err(usage("--channels must be at least 1"));
    }
    cfg.layout().map_err(|e| usage(e.to_string()))?;
    cfg.conditioning.check_extent(dims).map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn check_spec(spec: &str) -> Result<String> {
    spec.parse::<DenoiserSpec>()
        .map_err(|e| usage(format!("--denoiser {spec:?}: {e}")))?;
    Ok(spec.to_string())
}

fn require_denoiser(run: &RunArgs) -> Result<String> {
    check_spec(run.denoiser.as_deref().ok_or_else(|| usage("--denoiser is required"))?)
}

fn report(plan: &Plan) -> Result<()> {
    let ex = plan.execute()?;
    for w in &ex.warnings {
        eprintln!("warning: {w}");
    }
    let manifest = write_outputs(plan, &ex)?;
    for (path, _) in &ex.files {
        println!("wrote {}", path.display());
    }
    println!("manifest {}", manifest.display());
    println!(
        "tiles={} steps={} denoiser_calls={}",
        ex.tiles,
        ex.steps.len(),
        ex.calls
    );
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let config = resolve_config(&a.run, a.run.dims, &a.blend)?;
    let denoiser = require_denoiser(&a.run)?;
    let mode = if a.two_stage {
        let mask_mode: DownsampleMode = a
            .mask_downsample
            .parse()
            .map_err(|e| usage(format!("--mask-downsample: {e}")))?;
        if a.upsample == 0 {
            return Err(usage("--upsample must be at least 1"));
        }
        let stage2 = match &a.stage2_denoiser {
            Some(s) => check_spec(s)?,
            None => denoiser.clone(),
        };
        a.decoder
            .parse::<DenoiserSpec>()
            .map_err(|e| usage(format!("--decoder: {e}")))?;
        Mode::TwoStage {
            upsample: a.upsample,
            stage2_channels: a.stage2_channels,
            stage2_denoiser: stage2,
            decoder: a.decoder.clone(),
            structure: AffineStructure::mean(config.channels, a.upsample),
            mask_mode,
        }
    } else {
        if a.decoded.is_some() {
            return Err(usage("--decoded only applies with --two-stage"));
        }
        Mode::Generate
    };
    if a.ply.is_some() {
        let channels = match &mode {
            Mode::TwoStage {
                decoder,
                stage2_channels,
                ..
            } => build_decoder(&decoder.parse()?)
                .map_err(|e| usage(format!("--decoder: {e}")))?
                .contract()
                .output_channels(*stage2_channels),
            _ => config.channels,
        };
        if channels < 3 {
            return Err(usage(format!(
                "--ply needs at least 3 output channels, the run produces {channels}"
            )));
        }
    }
    let plan = Plan {
        config,
        denoiser,
        mode,
        out: a.out,
        decoded: a.decoded,
        ply: a.ply.map(|p| (p, a.ply_threshold)),
        quiet: a.run.quiet,
    };
    report(&plan)
}

fn expand(a: ExpandArgs) -> Result<()> {
    if a.mask.is_some() == a.place.is_some() {
        return Err(usage("expand needs exactly one of --mask and --place"));
    }
    if a.resample == 0 {
        return Err(usage("--resample must be at least 1"));
    }
    if !(a.sigma >= 0.0 && a.sigma.is_finite()) {
        return Err(usage("--sigma must be a non-negative number"));
    }
    for p in std::iter::once(&a.input).chain(&a.mask) {
        if !p.exists() {
            return Err(usage(format!("{} does not exist", p.display())));
        }
    }
    // Without --place the world is the input's own extent.
    let dims = match (a.run.dims, a.place) {
        (Some(d), _) => Some(d),
        (None, None) => Some(container::load(&a.input)?.dims()),
        (None, Some(_)) => None,
    };
    let config = resolve_config(&a.run, dims, &a.blend)?;
    let denoiser = require_denoiser(&a.run)?;
    let plan = Plan {
        config,
        denoiser,
        mode: Mode::Expand {
            input: a.input,
            mask: a.mask,
            place: a.place,
            sigma: a.sigma,
            resample: a.resample,
        },
        out: a.out,
        decoded: None,
        ply: None,
        quiet: a.run.quiet,
    };
    report(&plan)
}

fn decode(a: DecodeArgs) -> Result<()> {
    let spec: DenoiserSpec = a.decoder.parse().map_err(|e| usage(format!("--decoder: {e}")))?;
    let decoder = build_decoder(&spec).map_err(|e| usage(format!("--decoder: {e}")))?;
    let world = container::load(&a.input)?.into_dense();
    let out = with_threads(a.threads, || decode_tiled(&world, decoder.as_ref(), a.tile))??;
    container::save_dense(&a.out, &out)?;
    println!(
        "wrote {}  dims {:?}  channels {}",
        a.out.display(),
        out.dims(),
        out.channels()
    );
    if let Some(ply) = &a.ply {
        let f = decoder.contract().upsample.max(1);
        let pc = PointCloud::from_grid(&out, a.tile * f, a.ply_threshold)?;
        pc.save(ply)?;
        println!("wrote {}  points {}", ply.display(), pc.len());
    }
    Ok(())
}

fn validate_layout(a: LayoutArgs) -> Result<()> {
    let layout = if a.decode {
        if a.stride.is_some_and(|s| s != a.tile) {
            return Err(usage("--decode fixes the stride to the tile size"));
        }
        TileLayout::decode(a.dims, a.tile)?
    } else {
        TileLayout::plan(a.dims, a.tile, a.stride.unwrap_or((a.tile / 2).max(1)))?
    };
    print!("{layout}");
    let cov = layout.coverage();
    println!("coverage histogram (covers: voxels)");
    for (covers, voxels) in cov.histogram() {
        println!("  {covers}: {voxels}");
    }
    println!("min_cover={} max_cover={}", cov.min, cov.max);
    cov.require_complete()?;
    println!("layout ok");
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let dims = a.run.dims.or(Some([2 * a.run.tile, a.run.tile, a.run.tile]));
    let config = resolve_config(&a.run, dims, "cosine")?;
    let kinds: Vec<MaskKind> = a
        .blend
        .split(',')
        .map(|k| k.trim().parse().map_err(|e| usage(format!("--blend: {e}"))))
        .collect::<Result<_>>()?;
    let spec = check_spec(a.run.denoiser.as_deref().unwrap_or(ABLATE_DENOISER))?;
    let d = build_denoiser(&spec.parse()?)?;
    println!(
        "denoiser={spec} dims={:?} tile={} stride={}",
        config.dims, config.tile_size, config.stride
    );
    let reports = blend_ablation(&config, d.as_ref(), &kinds)?;
    for (kind, r) in &reports {
        println!(
            "blend={kind} seam_max={:.6e} seam_mean={:.6e} faces={}",
            r.max,
            r.mean,
            r.faces.len()
        );
    }
    let find = |k: MaskKind| reports.iter().find(|(kind, _)| *kind == k).map(|(_, r)| r.max);
    if let (Some(c), Some(b)) = (find(MaskKind::Cosine), find(MaskKind::Box)) {
        let ratio = if b > 0.0 { c / b } else { f64::NAN };
        println!("ratio_cosine_box={ratio:.6e}");
    }
    if a.baseline {
        let out = autoregressive_baseline(&config, d.as_ref(), a.sigma, &mut NoProgress)?;
        let r = seam_discontinuity(&out.world, &config.layout()?)?;
        println!(
            "blend=autoregressive seam_max={:.6e} seam_mean={:.6e} faces={}",
            r.max,
            r.mean,
            r.faces.len()
        );
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let base = resolve_config(&a.run, a.run.dims, "cosine")?;
    let threads: Vec<usize> = a
        .threads_list
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| usage(format!("--threads-list: bad count {t:?}")))
        })
        .collect::<Result<_>>()?;
    let spec = check_spec(a.run.denoiser.as_deref().unwrap_or(BENCH_DENOISER))?;
    let tiles = base.layout()?.len() as u64;
    let expected = base.schedule.steps() as u64 * tiles * base.guidance.calls_per_tile();
    let mut first: Option<(usize, tiledworld::DenseWorld)> = None;
    let mut failures = Vec::new();
    for &n in &threads {
        let cfg = RunConfig {
            threads: n,
            ..base.clone()
        };
        let d = CountingDenoiser::new(LatencyDenoiser::new(
            build_denoiser(&spec.parse()?)?,
            Duration::from_millis(a.latency_ms),
        ));
        let start = Instant::now();
        let out = tiledworld::run_diffusion(&cfg, &d, &mut NoProgress)?;
        let wall = start.elapsed().as_secs_f64();
        let identical = match &first {
            None => true,
            Some((_, w)) => w.bitwise_eq(&out.world),
        };
        println!(
            "threads={n} tiles={tiles} steps={} calls={} expected={expected} wall_s={wall:.3} identical={identical}",
            cfg.schedule.steps(),
            d.calls()
        );
        if d.calls() != expected {
            failures.push(format!("{n} threads made {} calls, expected {expected}", d.calls()));
        }
        match &first {
            None => first = Some((n, out.world)),
            Some((m, _)) if !identical => failures.push(format!("{n} threads differ from {m} threads")),
            _ => {}
        }
    }
    if !failures.is_empty() {
        bail!("{}", failures.join("; "));
    }
    Ok(())
}

fn replay(a: ReplayArgs) -> Result<()> {
    let manifest = RunManifest::load(&a.manifest)?;
    let mut plan = Plan::from_manifest(&manifest)?;
    if let Some(n) = a.threads {
        plan.config.threads = n;
    }
    let ex = plan.execute()?;
    let mut mismatched = 0;
    for ((path, bytes), rec) in ex.files.iter().zip(&manifest.outputs) {
        let got = sha256_hex(bytes);
        let ok = got == rec.sha256;
        println!("{} {} sha256={got}", if ok { "ok" } else { "MISMATCH" }, path.display());
        mismatched += usize::from(!ok);
        if let Some(dir) = &a.out_dir {
            let name = path
                .file_name()
                .ok_or_else(|| anyhow!("output {} has no file name", path.display()))?;
            let dest: PathBuf = dir.join(name);
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            fs::write(&dest, bytes).with_context(|| format!("writing {}", dest.display()))?;
        }
    }
    if ex.files.len() != manifest.outputs.len() {
        bail!(
            "replay produced {} outputs, manifest lists {}",
            ex.files.len(),
            manifest.outputs.len()
        );
    }
    if ex.calls != manifest.denoiser_calls {
        bail!(
            "replay made {} denoiser calls, manifest records {}",
            ex.calls,
            manifest.denoiser_calls
        );
    }
    if mismatched > 0 {
        bail!("{mismatched} output(s) differ from {}", a.manifest.display());
    }
    println!("replay ok");
    Ok(())
}
