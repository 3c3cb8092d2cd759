use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use softservo::dataset::Preset;
use softservo::experiments::pipeline::{self, Layout};
use softservo::experiments::report::{self, update_manifest};
use softservo::experiments::{ExperimentConfig, ExperimentError, Pipeline, Scenario};

/// Simulated soft-arm visual servoing experiments.
#[derive(Debug, Parser)]
#[command(name = "softservo", version)]
struct Cli {
    /// TOML experiment config; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset preset, overriding the config.
    #[arg(long, global = true, value_parser = parse::<Preset>)]
    preset: Option<Preset>,
    /// Output directory for every artifact.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Regenerate datasets that already exist instead of refusing.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render and label the training dataset.
    Generate,
    /// Train the integrated or modular pipeline.
    Train {
        #[arg(long, value_parser = parse::<Pipeline>)]
        pipeline: Pipeline,
    },
    /// Run one episode of a scenario and print its trace.
    Servo {
        #[arg(long, value_parser = parse::<Scenario>, default_value = "integrated_n30")]
        scenario: Scenario,
        #[arg(long, default_value_t = 0)]
        episode: usize,
    },
    /// Run scenario batches and write their reports.
    Experiment {
        /// Scenarios to run; defaults to the configured list.
        #[arg(long, value_parser = parse::<Scenario>)]
        scenario: Vec<Scenario>,
    },
    /// Sweep both gains with the oracle predictor.
    GainSweep,
    /// Merge report.json files into tables and plot-ready CSVs under --out.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T, String> {
    s.parse()
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = cli.preset {
        cfg.preset = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

fn print_report(r: &report::ExperimentReport) {
    if let Some(s) = &r.summary {
        println!("{}", s.table_row(r.scenario.name()));
    }
    if let Some(g) = &r.gain_sweep {
        println!(
            "gain sweep: best mean iterations {:.2}, plateau {:?}, default in plateau: {}, max closed-form gap {}",
            g.best_mean_iterations, g.plateau, g.default_in_plateau, g.max_gap
        );
    }
}

fn experiment(cfg: &ExperimentConfig, layout: &Layout, scenarios: &[Scenario]) -> Result<(), ExperimentError> {
    println!("{}", report::TABLE_HEADER);
    for &s in scenarios {
        let (r, files) = pipeline::cmd_experiment(cfg, layout, s)?;
        print_report(&r);
        update_manifest(&layout.out, cfg, &format!("experiment.{s}"), &files)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), ExperimentError> {
    let cfg = load_config(cli)?;
    let layout = Layout::new(&cli.out, &cfg);
    let mut log = log;
    match &cli.command {
        Command::Generate => {
            let ds = pipeline::cmd_generate(&cfg, &layout, cli.force)?;
            println!(
                "generated {} images in {} (train {}, validation {}, test {}; {} image collisions)",
                ds.manifest.count,
                ds.root.display(),
                ds.split.train.len(),
                ds.split.validation.len(),
                ds.split.test.len(),
                ds.manifest.image_collisions
            );
            let files = ["manifest.json", "actuations.csv", "poses.csv", "split.json", "norm.json", "images"]
                .map(|f| ds.root.join(f));
            update_manifest(&layout.out, &cfg, "generate", &files)?;
        }
        Command::Train { pipeline: p } => {
            let files = pipeline::cmd_train(&cfg, &layout, *p, cli.force, &mut log)?;
            for f in &files {
                println!("wrote {}", f.display());
            }
            let step = match p {
                Pipeline::Integrated => "train.integrated",
                Pipeline::Modular => "train.modular",
            };
            update_manifest(&layout.out, &cfg, step, &files)?;
        }
        Command::Servo { scenario, episode } => {
            let t = pipeline::cmd_servo(&cfg, &layout, *scenario, *episode)?;
            let json = serde_json::to_string_pretty(&t).map_err(|e| ExperimentError::Format(e.to_string()))?;
            println!("{json}");
        }
        Command::Experiment { scenario } => {
            let list = if scenario.is_empty() { &cfg.scenarios } else { scenario };
            experiment(&cfg, &layout, list)?;
        }
        Command::GainSweep => experiment(&cfg, &layout, &[Scenario::GainSweep])?,
        Command::Report { reports } => {
            let files = report::merge_reports(reports, &cli.out)?;
            print!("{}", std::fs::read_to_string(cli.out.join("table.csv")).map_err(ExperimentError::io(Path::new("table.csv")))?);
            update_manifest(&layout.out, &cfg, "report", &files)?;
        }
    }
    Ok(())
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
