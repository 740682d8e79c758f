//! Command-line front end: synthesize scenes, solve snippets, evaluate and
//! upsample depth maps, and run the gradient check.

pub mod config;
pub mod error;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use photoba::differentiation::{check_gradient, Objective};
use photoba::evaluation::{boundary_error, compute_metrics, median_scale_factor};
use photoba::io::{format_intrinsics, format_poses, load_depth, load_image, load_intrinsics, save_depth, save_image};
use photoba::optimizer::solve_snippet;
use photoba::snippet::ScaleSet;
use photoba::synthetic::{apply_corruption, gradient_problem, render_snippet, MotionSpec};
use photoba::upsampling::{bilinear_upsample_depth, guided_upsample_depth};
use photoba::{DepthMap, ImageGrid, Snippet};
use serde_json::json;

pub use config::RunConfig;
pub use error::CliError;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "PHOTOBA_THREADS";

#[derive(Parser, Debug)]
#[command(name = "photoba", version, about = "Direct photometric bundle adjustment on short monocular snippets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic snippet with ground truth, optionally corrupted.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Jointly estimate per-frame depth and consecutive poses.
    Optimize {
        /// Intrinsics file: `fx fy cx cy`.
        #[arg(long)]
        intrinsics: PathBuf,
        /// Frames in temporal order (binary PGM or PPM).
        #[arg(required = true, num_args = 2..)]
        frames: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Depth metrics of a prediction against ground truth (PFM files).
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compare the analytic gradient with finite differences on seeded problems.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Enlarge a depth map, guided by an image when one is given.
    Upsample {
        /// Low-resolution depth (PFM).
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        factor: usize,
        /// High-resolution guide image; bilinear upsampling without it.
        #[arg(long)]
        guide: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// `key = value` file layered over the bundled configuration.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for scene textures, solver and gradient-check problems.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of pyramid levels in the objective.
    #[arg(long)]
    scales: Option<usize>,
    /// Clip percentile q in (0, 100].
    #[arg(long = "clip-q", value_name = "Q")]
    clip_q: Option<f64>,
    /// Weight of SSIM against L1 in the photometric cost.
    #[arg(long = "ssim-mix", value_name = "ALPHA")]
    ssim_mix: Option<f64>,
    /// Weight of the depth-consistency term.
    #[arg(long = "dc-weight", value_name = "W")]
    dc_weight: Option<f64>,
    /// Weight of the edge-aware smoothness term.
    #[arg(long = "smooth-weight", value_name = "W")]
    smooth_weight: Option<f64>,
    /// Ground-truth depth cap for evaluation.
    #[arg(long)]
    cap: Option<f64>,
    /// Output directory (synth, optimize) or file (eval, gradcheck, upsample).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::bundled(),
        };
        if let Some(s) = self.seed {
            cfg.optimize.seed = s;
        }
        if let Some(s) = self.scales {
            cfg.optimize.levels = s;
        }
        let w = &mut cfg.weights;
        w.clip_percentile = self.clip_q.unwrap_or(w.clip_percentile);
        w.ssim_mix = self.ssim_mix.unwrap_or(w.ssim_mix);
        w.dc_weight = self.dc_weight.unwrap_or(w.dc_weight);
        w.smooth_weight = self.smooth_weight.unwrap_or(w.smooth_weight);
        cfg.cap = self.cap.unwrap_or(cfg.cap);
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("--out is required for this command".into()))
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Output goes to stdout, diagnostics to stderr.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_cli_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

/// [`run_cli`] with explicit output streams.
pub fn run_cli_with<I, T>(argv: I, out: &mut (dyn Write + Send), err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                1
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    let result = thread_pool().and_then(|pool| pool.install(|| dispatch(cli.command, out)));
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(raw) = std::env::var_os(THREADS_ENV) {
        let n = raw
            .to_str()
            .and_then(|s| s.trim().parse::<usize>().ok())
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker threads: {e}")))
}

fn dispatch(command: Command, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    match command {
        Command::Synth { common } => synth(&common, out),
        Command::Optimize {
            intrinsics,
            frames,
            common,
        } => optimize(&common, &intrinsics, &frames, out),
        Command::Eval { pred, gt, common } => eval(&common, &pred, &gt, out),
        Command::Gradcheck { common } => gradcheck(&common, out),
        Command::Upsample {
            depth,
            factor,
            guide,
            common,
        } => upsample(&common, &depth, factor, guide.as_deref(), out),
    }
}

fn say(out: &mut (dyn Write + Send), line: std::fmt::Arguments<'_>) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(|e| CliError::Io(format!("stdout: {e}")))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn read_image(path: &Path) -> Result<ImageGrid, CliError> {
    load_image(path).map_err(|e| CliError::io(path, e))
}

fn read_depth(path: &Path) -> Result<DepthMap, CliError> {
    load_depth(path).map_err(|e| CliError::io(path, e))
}

fn write_image(path: &Path, img: &ImageGrid) -> Result<(), CliError> {
    save_image(path, img, 16).map_err(|e| CliError::io(path, e))
}

fn write_depth(path: &Path, d: &DepthMap) -> Result<(), CliError> {
    save_depth(path, d).map_err(|e| CliError::io(path, e))
}

fn image_name(stem: &str, t: usize, channels: usize) -> String {
    format!("{stem}_{t}.{}", if channels == 1 { "pgm" } else { "ppm" })
}

fn synth(common: &Common, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let cfg = common.resolve()?;
    let dir = common.out_dir()?;
    let scene = cfg.synth.scene(cfg.optimize.seed)?;
    let motion = MotionSpec::constant(cfg.synth.step, cfg.synth.frames)?;
    let rendered = render_snippet(&scene, &motion)?;
    let (snippet, masks) = match cfg.synth.corruption() {
        Some(c) => {
            let corrupted = apply_corruption(&rendered.snippet, &c)?;
            let masks = c.patch.is_some().then(|| corrupted.static_masks());
            (corrupted.snippet, masks)
        }
        None => (rendered.snippet, None),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for (t, (frame, depth)) in snippet.frames().iter().zip(&rendered.depths).enumerate() {
        write_image(&dir.join(image_name("frame", t, frame.channels())), frame)?;
        write_depth(&dir.join(format!("depth_{t}.pfm")), depth)?;
    }
    for (t, m) in masks.iter().flatten().enumerate() {
        let flags = m.flags().iter().map(|f| if *f { 1.0 } else { 0.0 }).collect();
        let img = ImageGrid::new(m.width(), m.height(), 1, flags)?;
        save_image(dir.join(image_name("static", t, 1)), &img, 8).map_err(|e| CliError::io(dir, e))?;
    }
    write_file(&dir.join("intrinsics.txt"), format_intrinsics(snippet.intrinsics()))?;
    write_file(&dir.join("poses.txt"), format_poses(&rendered.poses)?)?;
    say(
        out,
        format_args!(
            "wrote {} frames of {}x{} to {}",
            snippet.len(),
            snippet.width(),
            snippet.height(),
            dir.display()
        ),
    )
}

fn optimize(common: &Common, intrinsics: &Path, frames: &[PathBuf], out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let cfg = common.resolve()?;
    let dir = common.out_dir()?;
    let k = load_intrinsics(intrinsics).map_err(|e| CliError::io(intrinsics, e))?;
    let images = frames.iter().map(|p| read_image(p)).collect::<Result<Vec<_>, _>>()?;
    let snippet = Snippet::new(images, k)?;
    let result = solve_snippet(&snippet, &cfg.optimize, &cfg.weights)?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for (t, d) in result.depths.iter().enumerate() {
        write_depth(&dir.join(format!("depth_{t}.pfm")), d)?;
    }
    write_file(&dir.join("poses.txt"), format_poses(&result.poses)?)?;
    let report = json!({
        "objective": result.report.total,
        "initial_objective": result.initial_objective,
        "iterations": result.iterations,
        "converged": result.converged,
        "report": result.report,
    });
    write_file(
        &dir.join("report.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    say(
        out,
        format_args!(
            "objective {:.6} (initial {:.6}) after {} iterations{}",
            result.report.total,
            result.initial_objective,
            result.iterations,
            if result.converged { ", converged" } else { "" }
        ),
    )
}

fn eval(common: &Common, pred: &Path, gt: &Path, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let cfg = common.resolve()?;
    let p = read_depth(pred)?;
    let g = read_depth(gt)?;
    let scale = if cfg.median_scaling {
        median_scale_factor(&p, &g)?
    } else {
        1.0
    };
    let p = p.scaled(scale);
    let m = compute_metrics(&p, &g, cfg.cap)?;
    let boundary = boundary_error(&p, &g, cfg.boundary_threshold).ok();
    let rows = [
        ("abs_rel", m.abs_rel),
        ("sq_rel", m.sq_rel),
        ("rmse", m.rmse),
        ("rmse_log", m.rmse_log),
        ("delta1", m.delta1),
        ("delta2", m.delta2),
        ("delta3", m.delta3),
        ("scale", scale),
    ];
    for (name, v) in rows {
        say(out, format_args!("{name:<14} {v:.6}"))?;
    }
    match boundary {
        Some(b) => say(out, format_args!("{:<14} {b:.6}", "boundary_error"))?,
        None => say(out, format_args!("{:<14} n/a", "boundary_error"))?,
    }
    say(out, format_args!("{:<14} {}", "count", m.count))?;
    if let Some(path) = &common.out {
        let doc = json!({ "metrics": m, "scale": scale, "boundary_error": boundary });
        write_file(path, serde_json::to_string_pretty(&doc).expect("metrics serialize"))?;
    }
    Ok(())
}

fn gradcheck(common: &Common, out: &mut (dyn Write + Send)) -> Result<(), CliError> {
    let cfg = common.resolve()?;
    let g = &cfg.gradcheck;
    let base = cfg.optimize.seed;
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for seed in base..base + g.problems as u64 {
        let (snippet, params) = gradient_problem(g.width, g.height, g.frames, seed)?;
        let objective = Objective::new(&snippet, cfg.weights, ScaleSet::all(cfg.optimize.levels))?;
        let check = check_gradient(&objective, &params, g.coords, g.step, g.tolerance, seed)?;
        let err = check.max_relative_error();
        say(
            out,
            format_args!(
                "seed {seed}: max relative error {err:.3e} over {} coordinates ({} one-sided)",
                check.samples.len(),
                check.one_sided_count()
            ),
        )?;
        worst = worst.max(err);
        rows.push(json!({
            "seed": seed,
            "max_relative_error": err,
            "coordinates": check.samples.len(),
            "one_sided": check.one_sided_count(),
            "floor": check.floor,
        }));
    }
    say(out, format_args!("max relative error {worst:.3e} (tolerance {:.0e})", g.tolerance))?;
    if let Some(path) = &common.out {
        let doc = json!({ "max_relative_error": worst, "tolerance": g.tolerance, "problems": rows });
        write_file(path, serde_json::to_string_pretty(&doc).expect("check serializes"))?;
    }
    if worst < g.tolerance {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "gradient check failed: {worst:.3e} >= {:.0e}",
            g.tolerance
        )))
    }
}

fn upsample(
    common: &Common,
    depth: &Path,
    factor: usize,
    guide: Option<&Path>,
    out: &mut (dyn Write + Send),
) -> Result<(), CliError> {
    let cfg = common.resolve()?;
    let path = common.out_dir()?;
    let low = read_depth(depth)?;
    let high = match guide {
        Some(g) => {
            let img = read_image(g)?;
            let up = guided_upsample_depth(&low, &img, factor, cfg.range_sigma, cfg.spatial_sigma)?;
            say(out, format_args!("{} pixels fell back to bilinear", up.fallback_count()))?;
            up.depth
        }
        None => bilinear_upsample_depth(&low, factor)?,
    };
    write_depth(path, &high)?;
    let (w, h) = high.dims();
    say(out, format_args!("wrote {w}x{h} depth to {}", path.display()))
}
