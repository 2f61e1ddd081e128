//! `radar-fields`: simulate SAR acquisitions of a surface model, reconstruct
//! the surface from them, and inspect the results.
//!
//! Parallelism follows `RAYON_NUM_THREADS`; diagnostics follow `RUST_LOG`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use radar_fields::io::scenes::SIMULATION_BETA;
use radar_fields::io::{
    read_checkpoint, read_config, read_raster, resolve_scene, write_checkpoint, write_config, write_raster,
    ExperimentConfig, Raster, RasterKind,
};
use radar_fields::optimize::{TrainState, Trainer};
use radar_fields::{altitude_report, render_image, simulate_acquisitions, Error, Scene, SharpnessParam, SpecularityMap};

#[derive(Parser, Debug)]
#[command(version, about = "Differentiable SAR rendering and surface reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render noiseless and speckled views of a scene
    Simulate {
        /// Scene name (pyramid, round_pile, fuji, fournaise, two_region) or RDF1 DSM path
        #[arg(long)]
        scene: String,
        /// Run configuration holding the view geometry
        #[arg(long)]
        views: PathBuf,
        /// Seed for speckle (overrides the configuration's seed)
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Grid size for generated scenes
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Laplace sharpness of the simulated surface, scene units
        #[arg(long, default_value_t = SIMULATION_BETA)]
        beta: f64,
    },
    /// Recover a surface from simulated or observed images
    Reconstruct {
        /// Directory with view_<k>_noisy.rdf (or view_<k>_clean.rdf with --clean)
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train on the noiseless images instead of the speckled ones
        #[arg(long)]
        clean: bool,
        /// Ground-truth DSM for the report (defaults to <data>/dsm.rdf when present)
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Resume from a checkpoint file
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Write <out>/checkpoint.ckpt every N steps (overrides the configuration)
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// Stop after this many completed steps, leaving a checkpoint
        #[arg(long)]
        stop_after: Option<usize>,
        /// Progress line period in steps
        #[arg(long, default_value_t = 100)]
        log_every: usize,
    },
    /// Noiseless renders of a DSM
    Render {
        #[arg(long)]
        dsm: PathBuf,
        #[arg(long)]
        views: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional θ map (Lambertian when absent)
        #[arg(long)]
        theta: Option<PathBuf>,
        #[arg(long, default_value_t = SIMULATION_BETA)]
        beta: f64,
    },
    /// Altitude error metrics of a recovered DSM
    Eval {
        #[arg(long)]
        recovered: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// 8-bit grayscale PNG of any raster
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Logarithmic intensity scaling
        #[arg(long)]
        log: bool,
    },
}

/// Failures caused by the operator's inputs exit with 2, others with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    let input_error = err.chain().any(|cause| {
        if let Some(e) = cause.downcast_ref::<Error>() {
            !matches!(
                e,
                Error::NonFiniteLoss { .. } | Error::NonFiniteGradient { .. } | Error::TapeMismatch(_)
            )
        } else {
            cause.downcast_ref::<InputError>().is_some()
        }
    });
    if input_error {
        2
    } else {
        1
    }
}

#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            scene,
            views,
            seed,
            out,
            size,
            beta,
        } => simulate(&scene, &views, seed, &out, size, beta),
        Command::Reconstruct {
            data,
            config,
            out,
            clean,
            truth,
            resume,
            checkpoint_every,
            stop_after,
            log_every,
        } => reconstruct(ReconstructArgs {
            data,
            config,
            out,
            clean,
            truth,
            resume,
            checkpoint_every,
            stop_after,
            log_every,
        }),
        Command::Render {
            dsm,
            views,
            out,
            theta,
            beta,
        } => render(&dsm, &views, &out, theta.as_deref(), beta),
        Command::Eval { recovered, truth } => eval(&recovered, &truth),
        Command::Plot { input, out, log } => plot(&input, &out, log),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(raster: &Raster, path: &Path) -> Result<()> {
    write_raster(raster, path).with_context(|| format!("writing {}", path.display()))
}

fn clean_name(k: usize) -> String {
    format!("view_{k}_clean.rdf")
}

fn noisy_name(k: usize) -> String {
    format!("view_{k}_noisy.rdf")
}

fn simulate(scene: &str, views: &Path, seed: u64, out: &Path, size: usize, beta: f64) -> Result<()> {
    let mut cfg = read_config(views)?;
    cfg.run.seed = seed;
    cfg.noise.seed = seed;
    let spec = resolve_scene::<f64>(scene, size)?;
    let model = spec.to_scene(beta)?;
    // render what gets stored, so `render` on the written files reproduces the clean views
    let dsm = Raster::from_surface(&model.surface)?;
    let theta = Raster::from_specularity(&model.specularity)?;
    let model = Scene::new(dsm.to_surface()?, theta.to_specularity()?, model.beta)?;
    let (clean, noisy) = simulate_acquisitions(&model, &cfg.views, &cfg.noise)?;
    create_dir(out)?;
    write(&dsm, &out.join("dsm.rdf"))?;
    if spec.theta.is_some() {
        write(&theta, &out.join("theta.rdf"))?;
    }
    for (k, (c, n)) in clean.iter().zip(&noisy).enumerate() {
        write(&Raster::from_image(c)?, &out.join(clean_name(k)))?;
        write(&Raster::from_image(n)?, &out.join(noisy_name(k)))?;
    }
    write_config(&cfg, out.join("config.txt"))?;
    println!("wrote {} views of {scene} to {}", clean.len(), out.display());
    Ok(())
}

struct ReconstructArgs {
    data: PathBuf,
    config: PathBuf,
    out: PathBuf,
    clean: bool,
    truth: Option<PathBuf>,
    resume: Option<PathBuf>,
    checkpoint_every: Option<usize>,
    stop_after: Option<usize>,
    log_every: usize,
}

fn load_images(data: &Path, cfg: &ExperimentConfig, clean: bool) -> Result<Vec<radar_fields::Image>> {
    if !data.is_dir() {
        return Err(InputError(format!("data directory {} does not exist", data.display())).into());
    }
    let mut images = Vec::new();
    for k in 0..cfg.views.len() {
        let path = data.join(if clean { clean_name(k) } else { noisy_name(k) });
        if !path.is_file() {
            break;
        }
        images.push(read_raster(&path)?.to_image(k, !clean)?);
    }
    if images.is_empty() {
        return Err(InputError(format!("no view images found in {}", data.display())).into());
    }
    if images.len() != cfg.views.len() {
        return Err(InputError(format!(
            "configuration has {} views but {} images were found",
            cfg.views.len(),
            images.len()
        ))
        .into());
    }
    Ok(images)
}

fn reconstruct(args: ReconstructArgs) -> Result<()> {
    let mut cfg = read_config(&args.config)?;
    let images = load_images(&args.data, &cfg, args.clean)?;
    let truth_path = args.truth.clone().or_else(|| {
        let p = args.data.join("dsm.rdf");
        p.is_file().then_some(p)
    });
    let truth = truth_path
        .map(|p| read_raster(&p).and_then(|r| r.to_surface::<f64>()))
        .transpose()?;
    let state = match &args.resume {
        Some(path) => {
            let mut ckpt = read_checkpoint::<f64>(path)?;
            ckpt.config.run.checkpoint_every = cfg.run.checkpoint_every;
            if ckpt.config != cfg {
                return Err(InputError(format!("checkpoint {} was written with a different configuration", path.display())).into());
            }
            ckpt.state
        }
        None => TrainState::initial(cfg.grid_width, cfg.grid_height, &cfg.run)?,
    };
    if let Some(n) = args.checkpoint_every {
        cfg.run.checkpoint_every = n;
    }
    create_dir(&args.out)?;
    let ckpt_path = args.out.join("checkpoint.ckpt");
    let mut trainer = Trainer::resume(&images, &cfg.views, cfg.run.clone(), state)?;
    let until = args.stop_after.unwrap_or(cfg.run.steps).min(cfg.run.steps);
    let start = Instant::now();
    let every = cfg.run.checkpoint_every;
    let log_every = args.log_every.max(1);
    while trainer.state.step < until {
        let r = trainer.step()?;
        let done = trainer.state.step;
        if done % log_every == 0 || done == until {
            println!(
                "step {done} lr {} loss {:.6e} beta {:.5} t {:.1}s",
                r.lr,
                r.loss,
                r.beta,
                start.elapsed().as_secs_f64()
            );
        }
        if every > 0 && done % every == 0 {
            write_checkpoint(&cfg, &trainer.state, &ckpt_path)?;
        }
    }
    if trainer.state.step < cfg.run.steps {
        write_checkpoint(&cfg, &trainer.state, &ckpt_path)?;
        println!("stopped at step {}; checkpoint {}", trainer.state.step, ckpt_path.display());
        return Ok(());
    }

    let report = trainer.report(truth.as_ref(), start.elapsed().as_secs_f64())?;
    let scene = &trainer.state.scene;
    write(&Raster::from_surface(&scene.surface)?, &args.out.join("dsm.rdf"))?;
    write(&Raster::from_specularity(&scene.specularity)?, &args.out.join("theta.rdf"))?;
    let mut text = String::new();
    for (k, v) in report.to_key_values() {
        text.push_str(&format!("{k}={v}\n"));
    }
    fs::write(args.out.join("report.txt"), &text)?;
    let curve: String = report.loss_history.iter().map(|l| format!("{l}\n")).collect();
    fs::write(args.out.join("loss.txt"), curve)?;
    print!("{text}");
    Ok(())
}

fn render(dsm: &Path, views: &Path, out: &Path, theta: Option<&Path>, beta: f64) -> Result<()> {
    let cfg = read_config(views)?;
    let surface = read_raster(dsm)?.to_surface::<f64>()?;
    let specularity = match theta {
        Some(p) => read_raster(p)?.to_specularity()?,
        None => SpecularityMap::lambertian(surface.width(), surface.height_cells()),
    };
    let scene = Scene::new(surface, specularity, SharpnessParam::new(beta)?)?;
    create_dir(out)?;
    for (k, view) in cfg.views.iter().enumerate() {
        let img = render_image(&scene, view, k, false, 0)?;
        write(&Raster::from_image(&img)?, &out.join(clean_name(k)))?;
    }
    println!("rendered {} views to {}", cfg.views.len(), out.display());
    Ok(())
}

fn eval(recovered: &Path, truth: &Path) -> Result<()> {
    let r = read_raster(recovered)?.to_surface::<f64>()?;
    let t = read_raster(truth)?.to_surface::<f64>()?;
    let a = altitude_report(&r, &t)?;
    println!("rmse={}\nmae={}\nmedian={}", a.rmse, a.mae, a.median);
    Ok(())
}

/// Maps raster values to 0..=255, linearly or on a log scale.
fn to_gray(raster: &Raster, log: bool) -> Vec<u8> {
    let values: Vec<f64> = raster.data.iter().map(|&v| f64::from(v)).collect();
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return vec![128; values.len()];
    }
    let floor = (max - min) * 1e-4;
    let map = |v: f64| if log { (v - min + floor).ln() } else { v };
    let (lo, hi) = (map(min), map(max));
    values
        .iter()
        .map(|&v| (255.0 * (map(v) - lo) / (hi - lo)).round().clamp(0.0, 255.0) as u8)
        .collect()
}

fn plot(input: &Path, out: &Path, log: bool) -> Result<()> {
    let raster = read_raster(input)?;
    if raster.width == 0 || raster.height == 0 {
        bail!(InputError("raster is empty".into()));
    }
    let img = image::GrayImage::from_raw(raster.width as u32, raster.height as u32, to_gray(&raster, log))
        .context("raster dimensions")?;
    img.save(out).with_context(|| format!("writing {}", out.display()))?;
    let kind = match raster.kind {
        RasterKind::Dsm => "DSM",
        RasterKind::Theta => "theta map",
        RasterKind::Sar => "SAR image",
    };
    println!("plotted {kind} {}x{} to {}", raster.width, raster.height, out.display());
    Ok(())
}
