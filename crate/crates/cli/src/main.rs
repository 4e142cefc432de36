//! Command-line interface: train, project, eval, analyze-resolution,
//! gradcheck.
//!
//! Exit codes: 0 success, 2 usage/configuration error, 3 numeric failure.
//! SG2M_THREADS caps the worker thread count.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sg2m_core::checkpoint::{Checkpoint, WeightSet};
use sg2m_core::config::RunConfig;
use sg2m_core::csvio::{write_atomic, write_csv};
use sg2m_core::imageio::{read_ppm, write_ppm};
use sg2m_core::metrics::{jacobian_conditioning, ppl, resolution_usage, DistanceMetric};
use sg2m_core::networks::{Generator, NoiseMaps, Variant};
use sg2m_core::projection::{estimate_latent_stats, project, ProjectionSchedule};
use sg2m_core::training::{StepLog, Trainer};
use sg2m_core::{no_grad, Rng};

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "sg2m", about = "Toy style-based GAN laboratory", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a generator/discriminator pair on a synthetic dataset.
    Train(TrainArgs),
    /// Project a target image into a trained generator's latent space.
    Project(ProjectArgs),
    /// Evaluate a checkpoint: path-length metric and Jacobian conditioning.
    Eval(EvalArgs),
    /// Per-resolution RGB contribution shares of a skip generator.
    AnalyzeResolution(AnalyzeArgs),
    /// Finite-difference verification of every differentiable operation.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Configuration file (flat key = value); defaults apply if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override single keys, e.g. --set total_steps=500 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Target image (binary PPM at the generator resolution).
    #[arg(long, conflicts_with = "generate_seed")]
    target: Option<PathBuf>,
    /// Generate the target from the checkpoint itself with this seed.
    #[arg(long)]
    generate_seed: Option<u64>,
    /// Weight set to project against.
    #[arg(long, default_value = "ema")]
    weights: String,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// pixel-l2 or rand-proj.
    #[arg(long, default_value = "pixel-l2")]
    metric: String,
    #[arg(long, default_value = "projection-out")]
    out: PathBuf,
    /// Also write the per-step loss trace.
    #[arg(long)]
    loss_csv: bool,
    /// Project N self-generated images and write their distances.
    #[arg(long, value_name = "N")]
    self_test: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "ema")]
    weights: String,
    #[arg(long, default_value_t = 256)]
    ppl_samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    ppl_epsilon: f64,
    #[arg(long, default_value = "pixel-l2")]
    metric: String,
    /// Latent points for the Jacobian conditioning summary (0 disables).
    #[arg(long, default_value_t = 4)]
    conditioning_points: usize,
    #[arg(long, default_value_t = 1e-2)]
    fd_step: f32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "eval-out")]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "ema")]
    weights: String,
    #[arg(long, default_value_t = 1024)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "eval-out")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

enum CliError {
    Usage(String),
    Numeric(String),
}

impl CliError {
    fn usage(e: impl std::fmt::Display) -> CliError {
        CliError::Usage(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("SG2M_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: SG2M_THREADS must be a positive integer");
                return ExitCode::from(EXIT_USAGE);
            }
        }
    }
    let cli = Cli::parse();
    let outcome = std::panic::catch_unwind(move || match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Project(args) => cmd_project(args),
        Command::Eval(args) => cmd_eval(args),
        Command::AnalyzeResolution(args) => cmd_analyze(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    });
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(CliError::Usage(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Ok(Err(CliError::Numeric(msg))) => {
            eprintln!("numeric failure: {msg}");
            ExitCode::from(EXIT_NUMERIC)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .map(|s| s.as_str())
                .or_else(|| panic.downcast_ref::<&str>().copied())
                .unwrap_or("unknown panic");
            eprintln!("numeric failure: {msg}");
            ExitCode::from(EXIT_NUMERIC)
        }
    }
}

fn load_config(args: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::from_text(&text).map_err(CliError::usage)?
        }
        None => RunConfig::default(),
    };
    for kv in &args.overrides {
        cfg.set_override(kv).map_err(CliError::usage)?;
    }
    cfg.validate().map_err(CliError::usage)?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let cfg = load_config(&args)?;
    let out = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out).map_err(CliError::usage)?;
    write_atomic(&out.join("config.txt"), cfg.to_text().as_bytes()).map_err(CliError::usage)?;

    let mut trainer = Trainer::new(&cfg);
    let mut rows: Vec<String> = Vec::with_capacity(cfg.total_steps as usize);
    let mut resusage_rows: Vec<String> = Vec::new();
    let is_skip_g = cfg.network.g_variant == Variant::Skip;
    let res_header = {
        let mut h = String::from("images_seen");
        for r in cfg.network.resolutions() {
            h.push_str(&format!(",share_{r}"));
        }
        h
    };
    let mut rng_snap = Rng::derive(cfg.seed, 0x57a7);

    let mut snapshot = |trainer: &Trainer, rows: &mut Vec<String>, rng: &mut Rng| {
        if !is_skip_g {
            return;
        }
        let g = trainer.ema_generator();
        if let Ok(shares) = resolution_usage(&g, 256, rng) {
            let mut row = trainer.images_seen().to_string();
            for s in shares {
                row.push_str(&format!(",{s}"));
            }
            rows.push(row);
        }
    };

    let save_ckpt = |trainer: &Trainer, path: &Path| -> CliResult {
        Checkpoint::from_trainer(trainer)
            .save(path)
            .map_err(CliError::usage)
    };

    if cfg.total_steps == 0 {
        save_ckpt(&trainer, &out.join("ckpt_final.sg2m"))?;
        write_csv(&out.join("metrics.csv"), StepLog::CSV_HEADER, &rows).map_err(CliError::usage)?;
        println!("steps=0: wrote initial checkpoint only");
        return Ok(());
    }

    for step in 0..cfg.total_steps {
        match trainer.train_step() {
            Ok(log) => {
                rows.push(log.csv_row());
                if step % 100 == 0 {
                    println!(
                        "step {step}: loss_d {:.4} loss_g {:.4} r1 {:.4} pl {:.6} pl_ema {:.4}",
                        log.loss_d, log.loss_g, log.r1, log.pl_penalty, log.pl_ema
                    );
                }
            }
            Err(e) => {
                // diagnostic snapshot before aborting
                let diag = serde_json::json!({
                    "error": e.to_string(),
                    "step": step,
                    "last_rows": rows.iter().rev().take(8).collect::<Vec<_>>(),
                });
                let _ = write_atomic(&out.join("diagnostic.json"), diag.to_string().as_bytes());
                let _ = write_csv(&out.join("metrics.csv"), StepLog::CSV_HEADER, &rows);
                return Err(CliError::Numeric(e.to_string()));
            }
        }
        if cfg.snapshot_every > 0 && (step + 1) % cfg.snapshot_every == 0 {
            snapshot(&trainer, &mut resusage_rows, &mut rng_snap);
        }
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 != cfg.total_steps
        {
            save_ckpt(&trainer, &out.join(format!("ckpt_{:07}.sg2m", step + 1)))?;
            write_csv(&out.join("metrics.csv"), StepLog::CSV_HEADER, &rows).map_err(CliError::usage)?;
        }
    }
    snapshot(&trainer, &mut resusage_rows, &mut rng_snap);
    save_ckpt(&trainer, &out.join("ckpt_final.sg2m"))?;
    write_csv(&out.join("metrics.csv"), StepLog::CSV_HEADER, &rows).map_err(CliError::usage)?;
    if is_skip_g {
        write_csv(&out.join("resusage.csv"), &res_header, &resusage_rows).map_err(CliError::usage)?;
    }
    println!("done: {} steps, outputs in {}", cfg.total_steps, out.display());
    Ok(())
}

fn load_generator(path: &Path, weights: &str) -> Result<(Checkpoint, Generator), CliError> {
    let which = match weights {
        "ema" => WeightSet::Ema,
        "raw" => WeightSet::Raw,
        other => return Err(CliError::Usage(format!("--weights must be ema or raw, got '{other}'"))),
    };
    let ck = Checkpoint::load(path).map_err(CliError::usage)?;
    let g = ck.build_generator(which).map_err(CliError::usage)?;
    Ok((ck, g))
}

fn parse_metric(s: &str) -> Result<DistanceMetric, CliError> {
    s.parse().map_err(CliError::Usage)
}

fn cmd_project(args: ProjectArgs) -> CliResult {
    let (_ck, generator) = load_generator(&args.checkpoint, &args.weights)?;
    let metric = parse_metric(&args.metric)?;
    let res = generator.cfg.resolution;
    std::fs::create_dir_all(&args.out).map_err(CliError::usage)?;

    let mut stats_rng = Rng::derive(args.seed, 0x10a7);
    let stats = estimate_latent_stats(&generator, 10_000, &mut stats_rng);
    let schedule = ProjectionSchedule {
        iterations: args.iterations,
        ramp_up: (args.iterations / 20).min(50),
        ramp_down: args.iterations / 4,
        noise_phase: args.iterations * 3 / 4,
        ..Default::default()
    };

    if let Some(n) = args.self_test {
        // project n self-generated images; emit the distance table
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let gen_seed = args.seed.wrapping_add(1000 + i as u64);
            let target = generate_image(&generator, gen_seed);
            let result = project(&generator, &target, &stats, &schedule, &metric, gen_seed ^ 0xbeef)
                .map_err(CliError::usage)?;
            println!("self-test {i}: distance {}", result.attribution_distance);
            rows.push(format!("{i},{gen_seed},{}", result.attribution_distance));
        }
        write_csv(&args.out.join("selftest.csv"), "index,seed,distance", &rows)
            .map_err(CliError::usage)?;
        println!("wrote {}", args.out.join("selftest.csv").display());
        return Ok(());
    }

    let (target, target_desc) = match (&args.target, args.generate_seed) {
        (Some(path), None) => {
            let img = read_ppm(path).map_err(CliError::usage)?;
            if img.shape()[1] != res || img.shape()[2] != res {
                return Err(CliError::Usage(format!(
                    "target is {}x{}, checkpoint expects {res}x{res}",
                    img.shape()[1],
                    img.shape()[2]
                )));
            }
            (img, path.display().to_string())
        }
        (None, Some(seed)) => {
            let img = generate_image(&generator, seed);
            write_ppm(&args.out.join("target.ppm"), &img).map_err(CliError::usage)?;
            (img, format!("generated:{seed}"))
        }
        _ => {
            return Err(CliError::Usage(
                "exactly one of --target or --generate-seed is required".into(),
            ))
        }
    };

    let result = project(&generator, &target, &stats, &schedule, &metric, args.seed)
        .map_err(CliError::usage)?;
    write_ppm(&args.out.join("projected.ppm"), &result.final_image).map_err(CliError::usage)?;
    let record = serde_json::json!({
        "target": target_desc,
        "metric": metric.to_string(),
        "seed": args.seed,
        "attribution_distance": result.attribution_distance,
        "initial_loss": result.loss_trace.first(),
        "schedule": {
            "iterations": schedule.iterations,
            "lr_max": schedule.lr_max,
            "ramp_up": schedule.ramp_up,
            "ramp_down": schedule.ramp_down,
            "noise_phase": schedule.noise_phase,
            "noise_scale": schedule.noise_scale,
            "reg_weight": schedule.reg_weight,
        },
        "w": result.w,
    });
    write_atomic(
        &args.out.join("result.json"),
        serde_json::to_string_pretty(&record).unwrap().as_bytes(),
    )
    .map_err(CliError::usage)?;
    if args.loss_csv {
        let rows: Vec<String> = result
            .loss_trace
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{i},{v}"))
            .collect();
        write_csv(&args.out.join("loss.csv"), "step,loss", &rows).map_err(CliError::usage)?;
    }
    println!(
        "projected {target_desc}: attribution distance {}",
        result.attribution_distance
    );
    Ok(())
}

fn generate_image(generator: &Generator, seed: u64) -> sg2m_core::Tensor {
    let mut rng = Rng::derive(seed, 0x9e4e);
    no_grad(|| {
        let z = rng.normal_tensor(&[1, generator.cfg.z_dim]);
        let noise = NoiseMaps::sample(&generator.cfg, 1, &mut rng);
        generator.generate(&z, &noise)
    })
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    let (_ck, generator) = load_generator(&args.checkpoint, &args.weights)?;
    let metric = parse_metric(&args.metric)?;
    std::fs::create_dir_all(&args.out).map_err(CliError::usage)?;

    let mut rng = Rng::derive(args.seed, 0xe7a1);
    let report = ppl(&generator, &metric, args.ppl_samples, args.ppl_epsilon, &mut rng);
    write_atomic(&args.out.join("ppl.csv"), report.scores_csv().as_bytes()).map_err(CliError::usage)?;
    if report.scores.is_empty() {
        println!("ppl: no samples requested (empty report)");
    } else {
        let p = |pct: u8| {
            report
                .percentiles
                .iter()
                .find(|(q, _)| *q == pct)
                .map(|(_, v)| *v)
                .unwrap_or(f64::NAN)
        };
        println!(
            "ppl[{}] over {} samples: mean {:.6e}  p10 {:.6e}  p50 {:.6e}  p90 {:.6e}",
            report.metric,
            report.scores.len(),
            report.mean,
            p(10),
            p(50),
            p(90)
        );
    }

    if args.conditioning_points > 0 {
        let summaries = jacobian_conditioning(&generator, args.conditioning_points, args.fd_step, &mut rng)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let rows: Vec<String> = summaries
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{i},{},{},{},{}", s.sigma_max, s.sigma_min, s.ratio, s.coeff_variation))
            .collect();
        write_csv(
            &args.out.join("conditioning.csv"),
            "point,sigma_max,sigma_min,ratio,coeff_variation",
            &rows,
        )
        .map_err(CliError::usage)?;
        let mean_ratio = summaries.iter().map(|s| s.ratio).sum::<f64>() / summaries.len() as f64;
        println!(
            "conditioning over {} points: mean sigma_max/sigma_min {:.4}",
            summaries.len(),
            mean_ratio
        );
    }
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> CliResult {
    let (ck, generator) = load_generator(&args.checkpoint, &args.weights)?;
    if generator.cfg.g_variant != Variant::Skip {
        return Err(CliError::Usage(
            "resolution analysis requires a skip-variant generator".into(),
        ));
    }
    std::fs::create_dir_all(&args.out).map_err(CliError::usage)?;
    let mut rng = Rng::derive(args.seed, 0xa9a1);
    let shares = resolution_usage(&generator, args.samples, &mut rng).map_err(CliError::usage)?;
    let mut header = String::from("images_seen");
    let mut row = ck.images_seen.to_string();
    for (r, s) in generator.cfg.resolutions().iter().zip(&shares) {
        header.push_str(&format!(",share_{r}"));
        row.push_str(&format!(",{s}"));
        println!("resolution {r:>4}: {s:6.2}%");
    }
    write_csv(&args.out.join("resusage.csv"), &header, &[row]).map_err(CliError::usage)?;
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> CliResult {
    let results = sg2m_core::check::standard_suite(args.seed);
    let mut failed = 0;
    for r in &results {
        println!(
            "{} {:<32} rel err {:.3e} (tol {:.0e})",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.rel_err,
            r.tolerance
        );
        if !r.pass {
            failed += 1;
        }
    }
    println!("{} checks, {} failed", results.len(), failed);
    if failed > 0 {
        return Err(CliError::Numeric(format!("{failed} gradient checks failed")));
    }
    Ok(())
}
