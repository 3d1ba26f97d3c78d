use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use emsense::em::build_channels;
use emsense::harness::{load_estimate, run_experiment, summarize_reports, Experiment, ExperimentConfig, RunReport};
use emsense::material::{accuracy, identify};
use emsense::pilot::{design_pilots, max_coherence, random_pilots};
use std::path::PathBuf;
use std::process::ExitCode;

/// Multi-base-station permittivity and conductivity sensing experiments.
#[derive(Parser)]
#[command(name = "emsense", version)]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the base point of an experiment.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        snr: Option<f64>,
        /// Subcarrier count.
        #[arg(long)]
        k: Option<usize>,
        /// Number of fused base stations.
        #[arg(long)]
        n_bs: Option<usize>,
        /// Injected channel NMSE in dB.
        #[arg(long)]
        channel_error: Option<f64>,
    },
    /// Run every point of the sweep axes.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',')]
        snr: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        n_bs: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        channel_error: Vec<f64>,
    },
    /// Design pilots for the scenario and write them to a file.
    DesignPilots {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Destination pilot file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster and label a reconstruction written by `run`.
    Classify {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory holding the exported estimate.
        #[arg(long)]
        estimate: PathBuf,
    },
    /// Summarize a reports CSV.
    Report {
        /// Path to reports.csv.
        csv: PathBuf,
    },
    /// Print a configuration as TOML.
    ShowConfig {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment TOML file.
    #[arg(long, short, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset: desk or faithful.
    #[arg(long)]
    preset: Option<String>,
    /// Override a config key, e.g. `--set fusion.rho=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides `output`).
    #[arg(long)]
    output: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let base = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (None, None) => ExperimentConfig::desk(),
        };
        let mut cfg = base.with_overrides(&self.overrides)?;
        if let Some(out) = &self.output {
            cfg.output = Some(std::env::current_dir()?.join(out));
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn print_reports(reports: &[RunReport]) {
    println!("{}", RunReport::CSV_HEADER);
    for r in reports {
        println!("{}", r.csv_row());
    }
}

/// `Ok(false)` when some sweep point failed.
fn dispatch(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Run { cfg, snr, k, n_bs, channel_error } => {
            let mut cfg = cfg.load()?;
            if let Some(v) = snr {
                cfg.run.snr_db = v;
            }
            if k.is_some() {
                cfg.run.k = k;
            }
            if let Some(v) = n_bs {
                cfg.run.n_bs = v;
            }
            if channel_error.is_some() {
                cfg.run.channel_error_db = channel_error;
            }
            let point = cfg.base_point();
            let outcome = Experiment::new(cfg).run_point(&point)?;
            print_reports(&[outcome.report]);
            Ok(true)
        }
        Command::Sweep { cfg, snr, k, n_bs, channel_error } => {
            let mut cfg = cfg.load()?;
            if !snr.is_empty() {
                cfg.sweep.snr_db = snr;
            }
            if !k.is_empty() {
                cfg.sweep.k = k;
            }
            if !n_bs.is_empty() {
                cfg.sweep.n_bs = n_bs;
            }
            if !channel_error.is_empty() {
                cfg.sweep.channel_error_db = channel_error;
            }
            let (reports, failures) = run_experiment(&cfg);
            print_reports(&reports);
            if failures > 0 {
                eprintln!("{failures} sweep point(s) failed");
            }
            Ok(failures == 0)
        }
        Command::DesignPilots { cfg, out } => {
            let cfg = cfg.load()?;
            let built = cfg.scenario.build(&cfg.base_dir, cfg.seeds.placement)?;
            let channels = build_channels(&built.scene)?;
            let designed = design_pilots(&built.scene, &channels, cfg.pilots.symbols, &cfg.pilots.params, cfg.seeds.pilots)?;
            let random = random_pilots(&built.scene, cfg.pilots.symbols, cfg.seeds.pilots)?;
            std::fs::write(&out, designed.pilots.to_text()).with_context(|| format!("writing {}", out.display()))?;
            let mut ratio = Vec::new();
            for (k, ch) in channels.iter().enumerate() {
                for (u, h1) in ch.h1.iter().enumerate() {
                    let d = max_coherence(h1.as_ref(), designed.pilots.get(u, k).w().as_ref());
                    let r = max_coherence(h1.as_ref(), random.get(u, k).w().as_ref());
                    ratio.push(r / d.max(1e-300));
                }
            }
            let mean = ratio.iter().sum::<f64>() / ratio.len() as f64;
            println!(
                "wrote {} ({} blocks, {} infeasible); mean coherence reduction vs random x{mean:.2}",
                out.display(),
                designed.objectives.len(),
                designed.infeasible_blocks
            );
            Ok(true)
        }
        Command::Classify { cfg, estimate } => {
            let cfg = cfg.load()?;
            let (n, s) = load_estimate(&estimate)?;
            if n != cfg.scenario.region.n_side {
                bail!("estimate is {n}x{n} but the scenario grid is {0}x{0}", cfg.scenario.region.n_side);
            }
            let target = cfg.scenario.load_target(&cfg.base_dir)?;
            let omega_c = 2.0 * std::f64::consts::PI * cfg.scenario.carriers.f_c;
            let cls = identify(&s, target.db(), omega_c, &cfg.cluster)?;
            println!("eps = {:.4}, {} clusters, {} outliers", cls.eps, cls.clusters.n_clusters(), cls.clusters.n_noise());
            for (c, centroid) in cls.clusters.centroids.iter().enumerate() {
                let name = &target.db().entries()[cls.cluster_material[c]].name;
                let tag = if Some(c) == cls.air_cluster { " (air)" } else { "" };
                println!(
                    "cluster {c}: {} px, centroid ({:.3}, {:.3}) -> {name}{tag}, distance {:.3}",
                    cls.clusters.counts[c], centroid[0], centroid[1], cls.cluster_distance[c]
                );
            }
            if target.target_pixels() > 0 {
                let acc = accuracy(&cls.pixel_labels, &target)?;
                println!("accuracy: {:.4} over target pixels, {:.4} over all pixels", acc.target, acc.all);
            }
            Ok(true)
        }
        Command::Report { csv } => {
            let text = std::fs::read_to_string(&csv).with_context(|| format!("reading {}", csv.display()))?;
            print!("{}", summarize_reports(&text)?);
            Ok(true)
        }
        Command::ShowConfig { cfg } => {
            print!("{}", cfg.load()?.to_toml()?);
            Ok(true)
        }
    }
}
