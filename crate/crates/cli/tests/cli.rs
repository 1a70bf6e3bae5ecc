use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tiledworld::container;
use tiledworld::denoisers::PointTarget;
use tiledworld::manifest::{sha256_hex, RunManifest};
use tiledworld::oracle::reference_run;
use tiledworld::sampler::init_noise;
use tiledworld::{DenseWorld, GuidanceConfig, Schedule};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tiledworld"))
        .current_dir(dir)
        .env_remove("TILEDWORLD_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const GOLDEN: &[&str] = &[
    "generate",
    "--dims",
    "32,32,16",
    "--tile",
    "16",
    "--stride",
    "8",
    "--denoiser",
    "point:mu=0.5",
    "--seed",
    "1",
    "-q",
];

/// Frozen after checking it against the whole-world reference below.
const GOLDEN_SHA256: &str = "0dc93f500e6d566064fd64186aac08d9e9c49ca18177b97f7c5d8a5ef4a8abeb";

#[test]
fn golden_generate() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), GOLDEN);
    let bytes = fs::read(dir.path().join("world.twld")).unwrap();

    let expected = reference_run(
        init_noise([32, 32, 16], 8, 1),
        &Schedule::uniform(25),
        &PointTarget::uniform(0.5),
        "",
        GuidanceConfig::new(7.5),
    )
    .unwrap();
    assert_eq!(bytes, container::encode_dense(&expected));
    assert_eq!(sha256_hex(&bytes), GOLDEN_SHA256);

    let m = RunManifest::load(&dir.path().join("world.twld.manifest.json")).unwrap();
    assert_eq!(m.settings.steps, 25);
    assert_eq!(m.settings.guidance, 7.5);
    assert_eq!(m.settings.stride, 8);
    assert_eq!(m.tiles, 9);
    assert_eq!(m.denoiser_calls, 25 * 9 * 2);
    assert_eq!(m.outputs[0].sha256, GOLDEN_SHA256);
}

#[test]
fn same_output_for_any_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut hashes = Vec::new();
    for n in ["1", "3"] {
        let mut args = GOLDEN.to_vec();
        args.extend(["--threads", n]);
        ok(dir.path(), &args);
        hashes.push(sha256_hex(&fs::read(dir.path().join("world.twld")).unwrap()));
    }
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn defaults_materialised() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["generate", "--dims", "16,16,16", "--denoiser", "point:mu=0", "-q"],
    );
    let m = RunManifest::load(&dir.path().join("world.twld.manifest.json")).unwrap();
    assert_eq!(m.settings.steps, 25);
    assert_eq!(m.settings.guidance, 7.5);
    assert_eq!(m.settings.tile, 16);
    assert_eq!(m.settings.stride, 8);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &[
            "generate",
            "--dims",
            "32,32,16",
            "--prompts",
            "missing.txt",
            "--denoiser",
            "point:mu=0.5",
        ],
        &["generate", "--denoiser", "point:mu=0.5"],
        &[
            "generate",
            "--dims",
            "8,8,8",
            "--tile",
            "16",
            "--denoiser",
            "point:mu=0.5",
        ],
        &[
            "generate",
            "--dims",
            "32,32,16",
            "--stride",
            "20",
            "--denoiser",
            "point:mu=0.5",
        ],
        &["generate", "--dims", "32,32,16", "--prompt", "a", "--prompts", "p.txt"],
        &["generate", "--dims", "1,2"],
        &["frobnicate"],
    ];
    for args in cases {
        let out = run(dir.path(), args);
        assert_eq!(
            out.status.code(),
            Some(1),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    assert!(!dir.path().join("world.twld").exists());
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.twld"), b"not a world").unwrap();
    let out = run(dir.path(), &["decode", "--input", "bad.twld"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.twld"));
}

#[test]
fn help_exits_zero() {
    let out = run(Path::new("."), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn prompt_grid_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("scene.prompts"), r#"[[["a"], ["b"]], [["c"], ["d"]]]"#).unwrap();
    fs::write(dir.path().join("targets.json"), r#"{"a": 1, "b": 2, "c": 3, "d": 4}"#).unwrap();
    ok(
        dir.path(),
        &[
            "generate",
            "--dims",
            "32,32,16",
            "--prompts",
            "scene.prompts",
            "--denoiser",
            "point:targets=targets.json",
            "--cfg",
            "1",
            "--channels",
            "1",
            "-q",
        ],
    );
    // Corner voxels see only the tile whose center lies in their own cell.
    let w = container::load_dense(&dir.path().join("world.twld")).unwrap();
    for (c, mu) in [
        ([0, 0, 0], 1.0),
        ([0, 31, 15], 2.0),
        ([31, 0, 0], 3.0),
        ([31, 31, 0], 4.0),
    ] {
        assert!((w.get(c, 0) - mu).abs() < 1e-5, "{c:?}: {}", w.get(c, 0));
    }
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.conf"),
        "dims = 32,32,16\ntile = 16\nstride = 8\ndenoiser = point:mu=0.5\nseed = 7\nquiet = true\n",
    )
    .unwrap();
    ok(dir.path(), &["generate", "--config", "run.conf", "--seed", "1"]);
    let bytes = fs::read(dir.path().join("world.twld")).unwrap();
    assert_eq!(sha256_hex(&bytes), GOLDEN_SHA256);
}

#[test]
fn validate_layout_prints_histogram() {
    let out = ok(
        Path::new("."),
        &["validate-layout", "--dims", "40,16,16", "--tile", "16"],
    );
    assert!(out.contains("tiles 4"), "{out}");
    assert!(out.contains("  1: 4096"));
    assert!(out.contains("  2: 6144"));
    assert!(out.contains("layout ok"));
    let bad = run(Path::new("."), &["validate", "--dims", "8,16,16", "--tile", "16"]);
    assert_ne!(bad.status.code(), Some(0));
}

fn kv(out: &str, line_prefix: &str, key: &str) -> f64 {
    let line = out.lines().find(|l| l.starts_with(line_prefix)).unwrap();
    line.split_whitespace()
        .find_map(|f| f.strip_prefix(&format!("{key}=")))
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn ablate_cosine_beats_box() {
    let out = ok(
        Path::new("."),
        &["ablate", "--blend", "cosine,box", "--channels", "1", "--baseline"],
    );
    let cosine = kv(&out, "blend=cosine", "seam_max");
    let boxed = kv(&out, "blend=box", "seam_max");
    assert!(cosine < boxed, "{out}");
    assert!(kv(&out, "ratio_cosine_box", "ratio_cosine_box") < 1.0);
    assert!(out.contains("blend=autoregressive"));
}

#[test]
fn decode_identity_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), GOLDEN);
    ok(
        dir.path(),
        &[
            "decode",
            "--input",
            "world.twld",
            "--out",
            "dec.twld",
            "--ply",
            "dec.ply",
        ],
    );
    assert_eq!(
        fs::read(dir.path().join("world.twld")).unwrap(),
        fs::read(dir.path().join("dec.twld")).unwrap()
    );
    assert!(fs::read(dir.path().join("dec.ply")).unwrap().starts_with(b"ply\n"));
}

#[test]
fn expand_keeps_input_and_fills_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let tile = DenseWorld::from_fn([16, 16, 16], 4, |c, ch| (c[0] + 2 * c[1] + ch) as f32 * 0.01);
    container::save_dense(&p.join("tile.twld"), &tile).unwrap();
    let base = [
        "expand",
        "--input",
        "tile.twld",
        "--place",
        "16,16,0",
        "--dims",
        "48,48,16",
        "--channels",
        "4",
        "--denoiser",
        "mixture:modes=1/-1,size=16,channels=4",
        "-q",
    ];
    for seed in ["1", "2"] {
        let mut args = base.to_vec();
        args.extend(["--seed", seed, "--out"]);
        let name = format!("e{seed}.twld");
        args.push(&name);
        ok(p, &args);
    }
    let a = container::load_dense(&p.join("e1.twld")).unwrap();
    let b = container::load_dense(&p.join("e2.twld")).unwrap();
    assert_eq!(a.dims(), [48, 48, 16]);
    let mut differs = false;
    for c in tiledworld::grid::coords([48, 48, 16]) {
        let inside = (16..32).contains(&c[0]) && (16..32).contains(&c[1]);
        if inside {
            let l = [c[0] - 16, c[1] - 16, c[2]];
            assert_eq!(a.voxel(c), tile.voxel(l));
            assert_eq!(b.voxel(c), tile.voxel(l));
        } else {
            differs |= a.voxel(c) != b.voxel(c);
        }
    }
    assert!(differs);

    // Whole-world mask returns the input unchanged.
    container::save_dense(&p.join("all.twld"), &DenseWorld::filled([16, 16, 16], 1, 1.0)).unwrap();
    ok(
        p,
        &[
            "expand",
            "--input",
            "tile.twld",
            "--mask",
            "all.twld",
            "--channels",
            "4",
            "--denoiser",
            "point:mu=0.5",
            "-q",
            "--out",
            "same.twld",
        ],
    );
    assert_eq!(container::load_dense(&p.join("same.twld")).unwrap(), tile);
}

#[test]
fn expand_shape_mismatch_names_dims() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    container::save_dense(&p.join("w.twld"), &DenseWorld::zeros([16, 16, 16], 4)).unwrap();
    container::save_dense(&p.join("m.twld"), &DenseWorld::zeros([16, 16, 32], 1)).unwrap();
    let out = run(
        p,
        &[
            "expand",
            "--input",
            "w.twld",
            "--mask",
            "m.twld",
            "--channels",
            "4",
            "--denoiser",
            "point:mu=0",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("[16, 16, 32]") && err.contains("[16, 16, 16]"), "{err}");
}

#[test]
fn replay_reproduces_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(
        p,
        &[
            "generate",
            "--dims",
            "32,16,16",
            "--denoiser",
            "point:mu=0.5",
            "--two-stage",
            "--upsample",
            "2",
            "--stage2-channels",
            "3",
            "--decoded",
            "dec.twld",
            "--ply",
            "w.ply",
            "--steps",
            "4",
            "-q",
        ],
    );
    let out = ok(
        p,
        &[
            "replay",
            "--manifest",
            "world.twld.manifest.json",
            "--out-dir",
            "again",
            "--threads",
            "2",
        ],
    );
    assert!(out.contains("replay ok"), "{out}");
    for f in ["world.twld", "dec.twld", "w.ply"] {
        assert_eq!(fs::read(p.join(f)).unwrap(), fs::read(p.join("again").join(f)).unwrap());
    }

    // A tampered output is reported and fails the run.
    let mpath = p.join("world.twld.manifest.json");
    let mut m = RunManifest::load(&mpath).unwrap();
    m.outputs[0].sha256 = "0".repeat(64);
    m.save(&mpath).unwrap();
    let bad = run(p, &["replay", "--manifest", "world.twld.manifest.json"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("MISMATCH"));
}

#[test]
fn bench_reports_call_counts() {
    let out = ok(
        Path::new("."),
        &[
            "bench",
            "--dims",
            "24,24,16",
            "--tile",
            "16",
            "--steps",
            "2",
            "--threads-list",
            "1,2",
        ],
    );
    let calls = kv(&out, "threads=1", "calls");
    assert_eq!(calls, kv(&out, "threads=1", "expected"));
    assert_eq!(calls, 2.0 * 4.0 * 2.0);
    assert!(out.lines().all(|l| l.ends_with("identical=true")));
}
