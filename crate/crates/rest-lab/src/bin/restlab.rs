use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rest_lab::cli::{
    self, report, BaselineMethod, CliError, ExperimentConfig,
};
use rest_lab::metrics::summarize;

#[derive(Parser)]
#[command(name = "restlab", version, about = "Reinforced self-training experiments on synthetic lesion data")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic dataset (PGM images + manifest).
    Generate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Cross-validated supervised training at one labeled fraction.
    TrainSupervised {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        fraction: f64,
    },
    /// Train the frozen expert reward model per CV cell.
    TrainIrl {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        fraction: f64,
    },
    /// Run the reinforced self-training loop per CV cell.
    Rest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        fraction: f64,
    },
    /// Run a comparison baseline (self-train or neg-mine).
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long)]
        fraction: f64,
    },
    /// Summarize metrics: table, convergence curves, overlay triptychs.
    Report {
        #[arg(long)]
        config: PathBuf,
        /// Labeled sample ids for triptych overlays.
        #[arg(long, value_delimiter = ',')]
        samples: Vec<u64>,
    },
    /// Print the default config, or validate an existing one.
    Config {
        #[arg(long, conflicts_with = "check")]
        defaults: bool,
        #[arg(long)]
        check: Option<PathBuf>,
    },
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Generate { config } => {
            let cfg = cli::load_config(&config)?;
            let out = cli::resolve_out_dir(&cfg);
            let digest = cli::cmd_generate(&cfg, &out)?;
            println!("dataset written to {}", out.join("data").display());
            println!("dataset digest: {digest:016x}");
        }
        Cmd::TrainSupervised { config, fraction } => {
            let cfg = cli::load_config(&config)?;
            let out = cli::resolve_out_dir(&cfg);
            let records = cli::cmd_train_supervised(&cfg, &out, fraction)?;
            let s = summarize(&records);
            println!(
                "supervised @ {}%: {} cells, F1 {:.3} +- {:.3}",
                cli::pct(fraction),
                s.n,
                s.f1_mean,
                s.f1_sd
            );
        }
        Cmd::TrainIrl { config, fraction } => {
            let cfg = cli::load_config(&config)?;
            let out = cli::resolve_out_dir(&cfg);
            let accs = cli::cmd_train_irl(&cfg, &out, fraction)?;
            let mean = accs.iter().sum::<f64>() / accs.len().max(1) as f64;
            println!(
                "expert reward @ {}%: {} cells, mean held-out accuracy {:.3}",
                cli::pct(fraction),
                accs.len(),
                mean
            );
        }
        Cmd::Rest { config, fraction } => {
            let cfg = cli::load_config(&config)?;
            let out = cli::resolve_out_dir(&cfg);
            let records = cli::cmd_rest(&cfg, &out, fraction)?;
            let finals = report::final_records(&records, "rest", fraction);
            let s = summarize(&finals);
            println!(
                "rest @ {}%: {} cells, final F1 {:.3} +- {:.3}",
                cli::pct(fraction),
                s.n,
                s.f1_mean,
                s.f1_sd
            );
        }
        Cmd::Baseline { config, method, fraction } => {
            let cfg = cli::load_config(&config)?;
            let out = cli::resolve_out_dir(&cfg);
            let method = BaselineMethod::parse(&method)?;
            let records = cli::cmd_baseline(&cfg, &out, method, fraction)?;
            let name = match method {
                BaselineMethod::SelfTrain => "self-train",
                BaselineMethod::NegMine => "neg-mine",
            };
            let finals = report::final_records(&records, name, fraction);
            let s = summarize(&finals);
            println!(
                "{name} @ {}%: {} cells, final F1 {:.3} +- {:.3}",
                cli::pct(fraction),
                s.n,
                s.f1_mean,
                s.f1_sd
            );
        }
        Cmd::Report { config, samples } => {
            let cfg = cli::load_config(&config)?;
            let out = cli::resolve_out_dir(&cfg);
            let result = report::cmd_report(&cfg, &out, &samples)?;
            print!("{}", report::render_table(&result.table_rows));
            for p in result.curve_files.iter().chain(&result.triptych_files) {
                println!("wrote {}", p.display());
            }
            if let Some(t) = &result.table_txt {
                println!("wrote {}", t.display());
            }
        }
        Cmd::Config { defaults, check } => {
            if let Some(path) = check {
                cli::load_config(&path)?;
                println!("{} ok", path.display());
            } else if defaults {
                print!("{}", ExperimentConfig::default().serialize());
            } else {
                return Err(CliError::Config(
                    "use --defaults to print defaults or --check <path> to validate".into(),
                ));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
