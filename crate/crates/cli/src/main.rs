use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use esd_cli::config::{default_config_toml, validate_config, ExperimentId, Stage};
use esd_cli::manifest::{Manifest, MANIFEST_FILE};
use esd_cli::Pipeline;

/// Exact-score conditional diffusion sampling experiments.
#[derive(Parser)]
#[command(name = "esd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML or JSON); a run manifest also works.
    #[arg(long)]
    config: PathBuf,
    /// Override the top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; ESD_THREADS takes precedence.
    #[arg(long)]
    threads: Option<usize>,
    /// Only report warnings and errors.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or import) the joint dataset.
    GenData(Common),
    /// Normalize the data and fix the prior variances.
    Prior(Common),
    /// Draw posterior samples with the reverse ODE.
    Sample(Common),
    /// Build the labeled noise/sample dataset.
    Label(Common),
    /// Train the amortized network.
    Train(Common),
    /// Sample from the trained network.
    Infer(Common),
    /// Score samples against reference densities.
    Eval(Common),
    /// Run the configured stage list.
    Run(Common),
    /// Sweep the step count and fit the error slope (bimodal).
    Convergence(Common),
    /// Run the nine-case bimodal ablation table.
    Ablation(Common),
    /// Resolve and print a config.
    Validate(Common),
    /// Print the default config of an experiment.
    Defaults {
        #[arg(value_parser = ["bimodal", "gmm20d", "elliptic", "custom"])]
        experiment: String,
    },
    /// Recompute the hashes listed in a manifest.
    Verify {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn setup(common: &Common) -> Result<esd_cli::ExperimentConfig> {
    let level = if common.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let threads = match std::env::var("ESD_THREADS") {
        Ok(v) => Some(v.parse::<usize>().with_context(|| format!("ESD_THREADS=`{v}` is not a thread count"))?),
        Err(_) => common.threads,
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let mut cfg = validate_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn stage_command(name: &str, stage: Stage, common: &Common) -> Result<()> {
    let cfg = setup(common)?;
    let mut p = Pipeline::open(name, cfg)?;
    p.run_stage(stage)?;
    let path = p.finish()?;
    log::info!("manifest: {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => stage_command("gen-data", Stage::GenData, &c),
        Command::Prior(c) => stage_command("prior", Stage::Prior, &c),
        Command::Sample(c) => stage_command("sample", Stage::Sample, &c),
        Command::Label(c) => stage_command("label", Stage::Label, &c),
        Command::Train(c) => stage_command("train", Stage::Train, &c),
        Command::Infer(c) => stage_command("infer", Stage::Infer, &c),
        Command::Eval(c) => stage_command("eval", Stage::Eval, &c),
        Command::Run(c) => {
            let cfg = setup(&c)?;
            let path = Pipeline::open("run", cfg)?.run_all()?;
            log::info!("manifest: {}", path.display());
            Ok(())
        }
        Command::Convergence(c) => {
            let cfg = setup(&c)?;
            let (points, slope) = Pipeline::open("convergence", cfg)?.convergence()?;
            for (n, e) in points {
                println!("{n}\t{e:.4e}");
            }
            println!("slope\t{slope:.3}");
            Ok(())
        }
        Command::Ablation(c) => {
            let cfg = setup(&c)?;
            let rows = Pipeline::open("ablation", cfg)?.ablation()?;
            println!("case\tK\tsigma_u2\tsigma_y2\te_exact\te_gmm\te_bgmm");
            for r in rows {
                println!(
                    "{}\t{}\t{}\t{}\t{:.3e}\t{:.3e}\t{:.3e}",
                    r.case, r.k, r.sigma_u2, r.sigma_y2, r.e_exact, r.e_gmm, r.e_bgmm
                );
            }
            Ok(())
        }
        Command::Validate(c) => {
            let cfg = setup(&c)?;
            print!("{}", cfg.to_toml_string()?);
            Ok(())
        }
        Command::Defaults { experiment } => {
            let id = ExperimentId::ALL
                .into_iter()
                .find(|id| id.name() == experiment)
                .expect("clap restricts the value");
            print!("{}", default_config_toml(id));
            Ok(())
        }
        Command::Verify { manifest } => {
            let m = Manifest::read(&manifest)?;
            let dir = manifest.parent().map(PathBuf::from).unwrap_or_default();
            let bad = m.verify(&dir)?;
            if !bad.is_empty() {
                bail!("{} output(s) do not match {}: {}", bad.len(), MANIFEST_FILE, bad.join(", "));
            }
            println!("{} outputs verified", m.outputs.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
