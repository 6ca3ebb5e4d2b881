//! Command-line front end: synthetic data, training, evaluation, inference,
//! gradient checks, ablations, and the scaling benchmark.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cesst_core::attention::MsaVariant;
use cesst_core::data::{
    hsi_to_rgb, load_rgb_png, save_cube_file, save_rgb_png, synth_scene, Dataset, ManifestEntry,
    ResponseMatrix,
};
use cesst_core::error::{Error, Result};
use cesst_core::gradcheck;
use cesst_core::model::ABLATION_ROWS;
use cesst_core::train::{
    ablation_csv, bench_csv, bench_scaling, evaluate_model, load_model, load_run_config,
    run_ablation, train, RunConfig,
};

#[derive(Parser)]
#[command(name = "cesst", version, about = "Desk-scale spectral reconstruction from RGB")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes and a dataset manifest.
    SynthData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write 16-bit PNG renderings of the synthesized RGB inputs.
        #[arg(long, default_value_t = false)]
        png: bool,
    },
    /// Train a model (resume with --resume).
    Train {
        /// Run configuration JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset manifest; a built-in synthetic set is used when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Step budget override.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = false)]
        resume: bool,
    },
    /// Evaluate a checkpoint over a dataset.
    Eval {
        /// Run directory holding model.ckpt and config.json.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Metric report JSON destination; per-band RMSE CSV lands next to it.
        #[arg(long)]
        report: PathBuf,
    },
    /// Reconstruct a 31-band cube from an RGB image.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        rgb: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference verification of gradients.
    Gradcheck {
        #[arg(long, value_parser = ["ops", "blocks", "model"])]
        scope: String,
    },
    /// Train and compare ablation variants.
    Ablate {
        /// Comma-separated row names, or "all".
        #[arg(long, default_value = "all")]
        rows: String,
        /// Training steps per variant.
        #[arg(long, default_value_t = 200)]
        budget: u64,
        #[arg(long, default_value = "ablation.csv")]
        out: PathBuf,
        /// Scratch directory for per-variant checkpoints.
        #[arg(long)]
        work_dir: Option<PathBuf>,
    },
    /// Analytic and measured attention cost scaling.
    Bench {
        #[arg(long, default_value = "window,shuffle_window,spectral,global")]
        variants: String,
        /// Token counts (square grids), ascending.
        #[arg(long, default_value = "64,256,1024,4096")]
        sizes: String,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 4)]
        window: usize,
        #[arg(long, default_value_t = 2)]
        heads: usize,
        #[arg(long, default_value = "bench.csv")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = check_thread_env() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// CESST_THREADS pins the deterministic thread count. Kernels run on a
/// single thread, so any accepted value keeps runs bit-reproducible; the
/// variable is validated and recorded for forward compatibility.
fn check_thread_env() -> Result<()> {
    if let Ok(v) = std::env::var("CESST_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("CESST_THREADS must be a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(Error::Config("CESST_THREADS must be >= 1".into()));
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData {
            seed,
            count,
            size,
            out,
            png,
        } => synth_data(seed, count, size, &out, png),
        Command::Train {
            config,
            data,
            steps,
            out,
            resume,
        } => {
            let mut run_cfg = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                    RunConfig::from_json(&text)?
                }
                None => RunConfig::default(),
            };
            if let Some(s) = steps {
                run_cfg.train.steps = s;
            }
            let dataset = open_dataset(data.as_deref())?;
            let record = train(&run_cfg, &dataset, &out, resume)?;
            let last = record.steps.last().expect("at least one step");
            println!(
                "trained {} steps; final loss {:.6} (mix {:.6}, mrae {:.6})",
                record.steps.len(),
                last.loss_total,
                last.loss_mix,
                last.loss_mrae
            );
            Ok(())
        }
        Command::Eval { ckpt, data, report } => {
            let run_cfg = load_run_config(&ckpt)?;
            let model = load_model(&run_cfg.model, &ckpt)?;
            let dataset = open_dataset(data.as_deref())?;
            let summary = evaluate_model(&model, &dataset)?;
            let json = serde_json::json!({
                "mean": summary.mean.to_json(),
                "per_image": summary.per_image.iter().map(|r| r.to_json()).collect::<Vec<_>>(),
            });
            std::fs::write(&report, serde_json::to_string_pretty(&json)?)?;
            let csv_path = report.with_extension("bands.csv");
            std::fs::write(&csv_path, summary.mean.band_csv())?;
            println!(
                "MRAE {:.4}  RMSE {:.4}  PSNR {}  SAM {:.4}  ERGAS {:.2}  ({} params)",
                summary.mean.mrae,
                summary.mean.rmse,
                if summary.mean.psnr.is_finite() {
                    format!("{:.2}", summary.mean.psnr)
                } else {
                    "inf".into()
                },
                summary.mean.sam,
                summary.mean.ergas,
                summary.mean.params
            );
            Ok(())
        }
        Command::Infer { ckpt, rgb, out } => {
            let run_cfg = load_run_config(&ckpt)?;
            let model = load_model(&run_cfg.model, &ckpt)?;
            let image = load_rgb_png(&rgb)?;
            let cube = model.infer(&image)?;
            save_cube_file(&out, &cube)?;
            println!(
                "reconstructed {}x{} cube with {} bands -> {}",
                cube.height(),
                cube.width(),
                cube.wavelengths().len(),
                out.display()
            );
            Ok(())
        }
        Command::Gradcheck { scope } => run_gradcheck(&scope),
        Command::Ablate {
            rows,
            budget,
            out,
            work_dir,
        } => {
            let rows: Vec<String> = if rows == "all" {
                ABLATION_ROWS.iter().map(|s| s.to_string()).collect()
            } else {
                rows.split(',').map(|s| s.trim().to_string()).collect()
            };
            let base = cesst_core::train::smoke_run_config(0, budget);
            let resp = ResponseMatrix::default_gaussian();
            let train_set = Dataset::synthetic(100, 4, 32, &resp)?;
            let eval_set = Dataset::synthetic(900, 2, 32, &resp)?;
            let tmp = std::env::temp_dir().join("cesst_ablation");
            let work = work_dir.unwrap_or(tmp);
            let results = run_ablation(&base, &rows, &train_set, &eval_set, &work)?;
            std::fs::write(&out, ablation_csv(&results))?;
            for r in &results {
                println!(
                    "{:<22} params={:<9} flops={:<12} mrae={:.4} rmse={:.4} psnr={:.2}",
                    r.row, r.params, r.flops, r.mrae, r.rmse, r.psnr
                );
            }
            Ok(())
        }
        Command::Bench {
            variants,
            sizes,
            dim,
            window,
            heads,
            out,
        } => {
            let variants: Vec<MsaVariant> = variants
                .split(',')
                .map(|s| {
                    MsaVariant::parse(s.trim()).ok_or_else(|| {
                        Error::Config(format!("unknown attention variant '{s}'"))
                    })
                })
                .collect::<Result<_>>()?;
            let sizes: Vec<usize> = sizes
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad token count '{s}'")))
                })
                .collect::<Result<_>>()?;
            let report = bench_scaling(&variants, &sizes, dim, window, heads)?;
            std::fs::write(&out, bench_csv(&report))?;
            for f in &report.fits {
                println!(
                    "{:<16} linear fit R^2 = {:.4} ({:.2} ns/token)",
                    f.variant,
                    f.r_squared,
                    f.seconds_per_token * 1e9
                );
            }
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn synth_data(seed: u64, count: usize, size: usize, out: &PathBuf, png: bool) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let resp = ResponseMatrix::default_gaussian();
    let mut manifest = Vec::with_capacity(count);
    for i in 0..count {
        let cube = synth_scene(seed.wrapping_add(i as u64), size, size)?;
        let cube_name = format!("scene_{i:03}.hsic");
        save_cube_file(&out.join(&cube_name), &cube)?;
        let rgb_path = if png {
            let rgb = hsi_to_rgb(&cube, &resp)?;
            let name = format!("scene_{i:03}.png");
            save_rgb_png(&out.join(&name), &rgb)?;
            Some(name)
        } else {
            None
        };
        manifest.push(ManifestEntry {
            cube_path: cube_name,
            rgb_path,
        });
    }
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    println!("wrote {count} scenes of {size}x{size} to {}", out.display());
    Ok(())
}

fn open_dataset(manifest: Option<&std::path::Path>) -> Result<Dataset> {
    let resp = ResponseMatrix::default_gaussian();
    match manifest {
        Some(path) => Dataset::load_manifest(path, &resp),
        None => Dataset::synthetic(100, 4, 32, &resp),
    }
}

fn run_gradcheck(scope: &str) -> Result<()> {
    let seeds = [0u64, 1, 2];
    let mut all_pass = true;
    let mut total = 0usize;
    match scope {
        "ops" => {
            let settings = gradcheck::CheckSettings::default();
            for &seed in &seeds {
                for report in gradcheck::op_checks(seed, &settings)? {
                    println!("seed {seed} {}", report.line());
                    all_pass &= report.pass;
                    total += 1;
                }
            }
        }
        "blocks" => {
            let settings = gradcheck::block_settings();
            for &seed in &seeds {
                for report in gradcheck::block_checks(seed, &settings)? {
                    println!("seed {seed} {}", report.line());
                    all_pass &= report.pass;
                    total += 1;
                }
            }
        }
        "model" => {
            let settings = gradcheck::block_settings();
            for &seed in &seeds {
                let report = gradcheck::model_check(seed, &settings)?;
                println!("seed {seed} {}", report.line());
                all_pass &= report.pass;
                total += 1;
            }
        }
        other => return Err(Error::Config(format!("unknown gradcheck scope '{other}'"))),
    }
    if all_pass {
        println!("{total} checks passed");
        Ok(())
    } else {
        Err(Error::Numeric("gradient check failed".into()))
    }
}
