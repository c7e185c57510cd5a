//! Command-line entry point: data generation, pre-training, evaluation,
//! ablations, gradient checks, encoder export.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use omae_core::ablate::{run_ablation, AblationAxis, AblationSpec, AxisValue};
use omae_core::checkpoint::{export_encoder, Checkpoint};
use omae_core::config::RunConfig;
use omae_core::error::{Error, Result};
use omae_core::gradcheck;
use omae_core::mask::MaskMode;
use omae_core::points::write_points;
use omae_core::rng::{derive_seed, Stream};
use omae_core::scene::{band_counts, generate_scene, SceneSpec};
use omae_core::train::{train, TrainSetup, METRICS_HEADER};

#[derive(Parser)]
#[command(name = "omae", about = "Masked occupancy autoencoding for LiDAR point clouds")]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; every random stream is split from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Grid dimensions, WxHxD.
    #[arg(long, global = true)]
    grid: Option<String>,
    /// Voxel size, one value or X,Y,Z.
    #[arg(long, global = true)]
    voxel_size: Option<String>,
    /// Masking ratios r1,r2,r3.
    #[arg(long, global = true)]
    ratios: Option<String>,
    /// range_aware or uniform.
    #[arg(long, global = true)]
    mask_mode: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// standard or paper_literal.
    #[arg(long, global = true)]
    loss_mode: Option<String>,
    #[arg(long, global = true)]
    deterministic: Option<bool>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic scene files (scene_00000.bin, ...).
    Gen {
        #[arg(long, default_value_t = 20)]
        count: usize,
    },
    /// Pre-train the autoencoder on a directory of scene files.
    Pretrain {
        data_dir: PathBuf,
        /// Validate the configuration and print the shape ladder, then stop.
        #[arg(long)]
        dry_run: bool,
        /// Resume from an epoch checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint's reconstructions on a scene directory.
    Eval { ckpt: PathBuf, data_dir: PathBuf },
    /// Run an ablation grid described by a spec file.
    Ablate { spec: PathBuf },
    /// Finite-difference gradient checks for every layer and end to end.
    Gradcheck,
    /// Write the encoder-only weight file for downstream warm-up.
    ExportEncoder { ckpt: PathBuf, out_file: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    check_threads_env()?;
    let cfg = resolve_config(cli)?;
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    match &cli.cmd {
        Cmd::Gen { count } => cmd_gen(&cfg, &out_dir, *count),
        Cmd::Pretrain { data_dir, dry_run, resume } => {
            cmd_pretrain(&cfg, data_dir, &out_dir, *dry_run, resume.as_deref())
        }
        Cmd::Eval { ckpt, data_dir } => cmd_eval(&cfg, ckpt, data_dir),
        Cmd::Ablate { spec } => cmd_ablate(&cfg, spec, &out_dir),
        Cmd::Gradcheck => cmd_gradcheck(cfg.seed),
        Cmd::ExportEncoder { ckpt, out_file } => {
            let ck = Checkpoint::load(ckpt)?;
            export_encoder(&ck, out_file)?;
            println!("encoder written to {}", out_file.display());
            Ok(())
        }
    }
}

/// `OMAE_THREADS` caps worker parallelism. All kernels currently run
/// single-threaded, so any positive value is accepted as a no-op cap.
fn check_threads_env() -> Result<()> {
    if let Ok(v) = std::env::var("OMAE_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::config(format!("OMAE_THREADS must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(Error::config("OMAE_THREADS must be >= 1".to_string()));
        }
    }
    Ok(())
}

/// Precedence: flags > config file > defaults.
fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let mut boxes_reset = true; // flag overrides never touch the box list
    let mut set = |cfg: &mut RunConfig, key: &str, value: &str| {
        cfg.apply(key, value, &mut boxes_reset)
    };
    if let Some(s) = &cli.grid {
        let dims = s.to_lowercase().replace('x', ",");
        set(&mut cfg, "grid_dims", &dims)?;
    }
    if let Some(s) = &cli.voxel_size {
        set(&mut cfg, "voxel_size", s)?;
    }
    if let Some(s) = &cli.ratios {
        set(&mut cfg, "ratios", s)?;
    }
    if let Some(s) = &cli.mask_mode {
        set(&mut cfg, "mask_mode", s)?;
    }
    if let Some(e) = cli.epochs {
        set(&mut cfg, "epochs", &e.to_string())?;
    }
    if let Some(s) = &cli.loss_mode {
        set(&mut cfg, "loss_mode", s)?;
    }
    if let Some(seed) = cli.seed {
        set(&mut cfg, "seed", &seed.to_string())?;
    }
    if let Some(d) = cli.deterministic {
        set(&mut cfg, "deterministic", &d.to_string())?;
    }
    if let Some(warning) = cfg.validate()? {
        eprintln!("warning: {warning}");
    }
    if !cfg.deterministic {
        eprintln!("warning: no nondeterministic fast path exists; run stays deterministic");
    }
    print!("{}", cfg.resolved());
    Ok(cfg)
}

fn setup_from(cfg: &RunConfig) -> Result<TrainSetup> {
    Ok(TrainSetup {
        grid: cfg.grid.clone(),
        schedule: cfg.schedule()?,
        mask: cfg.mask.clone(),
        loss: cfg.loss,
        cfg: cfg.train.clone(),
        sensor_origin: cfg.scene.sensor_origin,
        seed: cfg.seed,
    })
}

fn cmd_gen(cfg: &RunConfig, out_dir: &Path, count: usize) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut totals = [0usize; 3];
    let mut n_points = 0usize;
    for i in 0..count {
        let spec = SceneSpec {
            seed: derive_seed(cfg.seed, Stream::Scene, i as u64),
            ..cfg.scene.clone()
        };
        let cloud = generate_scene(&spec)?;
        let c = band_counts(&cloud, spec.sensor_origin, spec.band_edges);
        for b in 0..3 {
            totals[b] += c[b];
        }
        n_points += cloud.points.len();
        write_points(&cloud, out_dir.join(format!("scene_{i:05}.bin")))?;
    }
    println!("wrote {count} scenes ({n_points} points) to {}", out_dir.display());
    println!(
        "band density: 0-{}m: {}, {}-{}m: {}, >{}m: {}",
        cfg.scene.band_edges[0],
        totals[0],
        cfg.scene.band_edges[0],
        cfg.scene.band_edges[1],
        totals[1],
        cfg.scene.band_edges[1],
        totals[2]
    );
    Ok(())
}

fn cmd_pretrain(
    cfg: &RunConfig,
    data_dir: &Path,
    out_dir: &Path,
    dry_run: bool,
    resume: Option<&Path>,
) -> Result<()> {
    let setup = setup_from(cfg)?;
    if dry_run {
        println!("shape ladder:");
        for dims in setup.schedule.shape_ladder()? {
            println!("  {}x{}x{}", dims[0], dims[1], dims[2]);
        }
        println!("dry run: configuration valid, no training performed");
        return Ok(());
    }
    std::fs::create_dir_all(out_dir)?;
    let resume_ck = resume.map(Checkpoint::load).transpose()?;

    let out = train(&setup, data_dir, resume_ck, |ck| {
        let path = out_dir.join(format!("ckpt_epoch_{:03}.omae", ck.epoch));
        ck.save(&path)?;
        println!("epoch {}: checkpoint {}", ck.epoch, path.display());
        Ok(())
    })?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }

    let mut csv = String::from(METRICS_HEADER);
    csv.push('\n');
    for row in &out.metrics {
        csv.push_str(&row.to_csv());
        csv.push('\n');
    }
    let metrics_path = out_dir.join("metrics.csv");
    std::fs::write(&metrics_path, csv)?;

    let final_path = out_dir.join("checkpoint.omae");
    out.checkpoint.save(&final_path)?;
    println!(
        "trained {} steps; final checkpoint {}, metrics {}",
        out.checkpoint.step,
        final_path.display(),
        metrics_path.display()
    );
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, ckpt: &Path, data_dir: &Path) -> Result<()> {
    let ck = Checkpoint::load(ckpt)?;
    let mut setup = setup_from(cfg)?;
    if ck.schedule != setup.schedule {
        // evaluate with the checkpoint's own schedule when it differs
        setup.schedule = ck.schedule.clone();
        if setup.grid.dims != setup.schedule.grid_dims {
            return Err(Error::config(format!(
                "checkpoint grid {:?} does not match configured grid {:?}",
                setup.schedule.grid_dims, setup.grid.dims
            )));
        }
    }
    let (masked_iou, overall_iou, n) =
        omae_core::train::eval_masked_iou(&setup, &ck.params, data_dir)?;
    println!("checkpoint,masked_iou,overall_iou,scenes");
    println!("{},{masked_iou:.6},{overall_iou:.6},{n}", ckpt.display());
    Ok(())
}

/// Ablation spec file, flat format: `axis = mask_ratio|epochs|data_amount|mask_mode`,
/// `seeds = 1,2,3`, `train_dir = PATH`, `eval_dir = PATH`, optional
/// `values = ...` (`;`-separated grid points) to override the preset grid.
fn cmd_ablate(cfg: &RunConfig, spec_path: &Path, out_dir: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec_path)?;
    let mut axis = None;
    let mut seeds = Vec::new();
    let mut train_dir = None;
    let mut eval_dir = None;
    let mut values_text: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(format!("{}:{}: expected `key = value`", spec_path.display(), lineno + 1))
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "axis" => {
                axis = Some(match value {
                    "mask_ratio" => AblationAxis::MaskRatio,
                    "epochs" => AblationAxis::Epochs,
                    "data_amount" => AblationAxis::DataAmount,
                    "mask_mode" => AblationAxis::MaskMode,
                    _ => return Err(Error::config(format!("unknown ablation axis `{value}`"))),
                })
            }
            "seeds" => {
                seeds = value
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<u64>()
                            .map_err(|_| Error::config(format!("bad seed `{s}`")))
                    })
                    .collect::<Result<_>>()?
            }
            "train_dir" => train_dir = Some(PathBuf::from(value)),
            "eval_dir" => eval_dir = Some(PathBuf::from(value)),
            "values" => values_text = Some(value.to_string()),
            _ => return Err(Error::config(format!("unknown ablation spec key `{key}`"))),
        }
    }
    let axis = axis.ok_or_else(|| Error::config("ablation spec missing `axis`".to_string()))?;
    let train_dir =
        train_dir.ok_or_else(|| Error::config("ablation spec missing `train_dir`".to_string()))?;
    let eval_dir =
        eval_dir.ok_or_else(|| Error::config("ablation spec missing `eval_dir`".to_string()))?;

    let mut spec = AblationSpec::preset(axis, seeds);
    if let Some(vt) = values_text {
        spec.values = parse_axis_values(axis, &vt)?;
    }

    let base = setup_from(cfg)?;
    let csv = run_ablation(&spec, &base, &train_dir, &eval_dir)?;
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(format!("ablation_{}.csv", axis.name()));
    std::fs::write(&path, &csv)?;
    print!("{csv}");
    println!("# written to {}", path.display());
    Ok(())
}

fn parse_axis_values(axis: AblationAxis, text: &str) -> Result<Vec<AxisValue>> {
    text.split(';')
        .map(|item| {
            let item = item.trim();
            Ok(match axis {
                AblationAxis::MaskRatio => {
                    let parts: Vec<f64> = item
                        .split(',')
                        .map(|p| {
                            p.trim()
                                .parse::<f64>()
                                .map_err(|_| Error::config(format!("bad ratio `{p}`")))
                        })
                        .collect::<Result<_>>()?;
                    let arr: [f64; 3] = parts.try_into().map_err(|_| {
                        Error::config(format!("ratio grid point `{item}` needs 3 values"))
                    })?;
                    AxisValue::Ratios(arr)
                }
                AblationAxis::Epochs => AxisValue::Epochs(
                    item.parse()
                        .map_err(|_| Error::config(format!("bad epoch count `{item}`")))?,
                ),
                AblationAxis::DataAmount => AxisValue::DataFraction(
                    item.parse()
                        .map_err(|_| Error::config(format!("bad data fraction `{item}`")))?,
                ),
                AblationAxis::MaskMode => AxisValue::Mode(match item {
                    "range_aware" => MaskMode::RangeAware,
                    "uniform" => MaskMode::Uniform,
                    _ => return Err(Error::config(format!("bad mask mode `{item}`"))),
                }),
            })
        })
        .collect()
}

fn cmd_gradcheck(seed: u64) -> Result<()> {
    let report = gradcheck::check_all(seed)?;
    let mut failed = false;
    for e in &report.entries {
        let status = if e.passed() { "pass" } else { "FAIL" };
        println!("{status}  {}  max_rel_err {:.3e} (tol {:.0e})", e.name, e.max_rel_err, e.tolerance);
        failed |= !e.passed();
    }
    if failed {
        return Err(Error::numeric("gradient check failed".to_string()));
    }
    println!("all gradient checks passed");
    Ok(())
}
