use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use scaleprune_cli::experiment::write_masks;
use scaleprune_cli::fixture::{propagate_fixture, select_fixture, Fixture};
use scaleprune_cli::report::ErrorRecord;
use scaleprune_cli::{Config, Experiment, OUT_DIR_ENV};
use scaleprune_core::PruneParams;

#[derive(Parser)]
#[command(
    name = "scaleprune",
    version,
    about = "Token pruning experiments on a toy next-scale pipeline"
)]
struct Cli {
    /// TOML config; defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dense reference vs. the configured pruned schedule.
    Run,
    /// Ratio and stage grid.
    Sweep,
    /// Strategy x recovery matrix.
    Ablate,
    /// Dense per-scale FLOP and latency breakdown.
    Profile,
    /// Final-output degradation from noise injected at each scale.
    Sensitivity,
    /// Export selection masks.
    Mask {
        /// Prune the last `--stages` scales at this ratio; repeatable.
        #[arg(long = "ratio")]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 2)]
        stages: usize,
    },
    /// Write a random dense fixture.
    Fixture {
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        channels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output stem; writes `<stem>.bin` and `<stem>.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Joint selection on a dense fixture.
    Select {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: SelectArgs,
    },
    /// Nearest-neighbor propagation of a sparse fixture.
    Propagate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    ratio: f64,
    #[arg(long, default_value_t = 0.5)]
    w_str: f64,
    #[arg(long, default_value_t = 3)]
    power_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(dir) = &cli.out_dir {
        cfg.output.dir = dir.clone();
    }
    Ok(cfg)
}

fn fail(err: ErrorRecord) -> anyhow::Error {
    anyhow::anyhow!("{err}")
}

fn report_written(dir: &Path) {
    println!(
        "wrote {}",
        dir.join(scaleprune_cli::report::JSON_NAME).display()
    );
    println!(
        "wrote {}",
        dir.join(scaleprune_cli::report::CSV_NAME).display()
    );
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Fixture {
            batch,
            height,
            width,
            channels,
            seed,
            ref out,
        } => {
            if batch == 0 || height == 0 || width == 0 || channels == 0 {
                bail!("fixture dimensions must be positive");
            }
            let (bin, json) = Fixture::random(batch, height, width, channels, seed).write(out)?;
            println!("wrote {} and {}", bin.display(), json.display());
            return Ok(());
        }
        Command::Select {
            ref input,
            ref out,
            ref params,
        } => {
            let p = PruneParams {
                ratio: params.ratio,
                w_str: params.w_str,
                power_iters: params.power_iters,
                rng_seed: params.seed,
            };
            let fx = Fixture::read(input)?;
            let sparse = select_fixture(&fx, &p)?;
            sparse.write(out)?;
            println!(
                "kept {} of {} tokens",
                sparse.sidecar.shape[1], fx.sidecar.shape[1]
            );
            return Ok(());
        }
        Command::Propagate { ref input, ref out } => {
            propagate_fixture(&Fixture::read(input)?)?.write(out)?;
            println!("wrote {}", out.display());
            return Ok(());
        }
        _ => {}
    }

    let cfg = load_config(&cli)?;
    let dir = cfg.output.dir.clone();
    let exp = Experiment::new(cfg)?;
    match cli.command {
        Command::Run => {
            let out = exp.run();
            out.report.write(&dir)?;
            report_written(&dir);
            if exp.config().output.masks {
                let files = write_masks(&dir, &out.masks)?;
                println!("wrote {} mask files", files.len());
            }
            if let Some(err) = out.report.error {
                bail!("run failed, partial report written: {err}");
            }
            let t = &out.report.totals;
            print!("analytic speedup {:.2}x", t.flop_speedup);
            if let Some(w) = t.wall_speedup {
                print!(", wall-clock {w:.2}x");
            }
            if let Some(f) = &out.report.fidelity {
                print!(", PSNR {:.2} dB, SSIM {:.4}", f.psnr_db, f.ssim);
            }
            println!();
        }
        Command::Sweep => {
            exp.sweep().map_err(fail)?.write(&dir)?;
            report_written(&dir);
        }
        Command::Ablate => {
            exp.ablate().map_err(fail)?.write(&dir)?;
            report_written(&dir);
        }
        Command::Profile => {
            exp.profile().map_err(fail)?.write(&dir)?;
            report_written(&dir);
        }
        Command::Sensitivity => {
            exp.sensitivity().map_err(fail)?.write(&dir)?;
            report_written(&dir);
        }
        Command::Mask { ref ratios, stages } => {
            let masks = exp.masks(ratios, stages).map_err(fail)?;
            let files = write_masks(&dir, &masks).context("exporting masks")?;
            println!(
                "wrote {} mask files under {}",
                files.len(),
                dir.join("masks").display()
            );
        }
        Command::Fixture { .. } | Command::Select { .. } | Command::Propagate { .. } => {
            unreachable!()
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
