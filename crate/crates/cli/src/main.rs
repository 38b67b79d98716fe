use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use clonekit::config::ExtractionConfig;
use clonekit::data::fixture::{Fixture, Split};
use clonekit::data::{corrupt_gaussian, export_dataset, export_pool};
use clonekit::nn::Network;
use clonekit::rng::{make_rng_stream, Stream};
use clonekit::trainer::evaluate;
use clonekit::ttda::write_adapt_log;
use clonekit::victim::VictimEndpoint;
use clonekit_cli::pipeline::align;
use clonekit_cli::task::fixture_victim;
use clonekit_cli::{compare, run, select, ExperimentReport, Task, VictimAccess};

#[derive(Parser)]
#[command(name = "clonekit", version, about = "Query-efficient black-box model extraction")]
struct Cli {
    /// TOML config; flags given with --set take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the sampling plan and print it as JSON.
    Select {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline and write the report and curves.
    Extract {
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Run test-time alignment over the test set with a saved surrogate.
    Adapt {
        #[arg(long)]
        surrogate: PathBuf,
        /// Corrupt the stream with Gaussian noise of the configured sigma.
        #[arg(long)]
        noisy: bool,
        /// Where to write the per-sample log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Test accuracy (and victim agreement, for local victims) of a saved surrogate.
    Evaluate {
        #[arg(long)]
        surrogate: PathBuf,
    },
    /// Summarize reports by method: mean and sample std across seeds.
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve the configured victim over HTTP with the configured budget.
    ServeVictim {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Write the synthetic task, pool and trained victim to disk, plus a
    /// config that points at them.
    Fixture {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_surrogate(path: &Path) -> Result<Network> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: Option<&Path>, json: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, json).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn export_fixture(config: &ExtractionConfig, out: &Path) -> Result<()> {
    let fx = Fixture::new(config.fixture_seed, config.full_resolution);
    let test = export_dataset(
        &fx.target_split(Split::Test, config.fixture_test_per_class),
        &out.join("test"),
    )?;
    let pool = export_pool(&fx.pool(config.fixture_pool_per_class), &out.join("pool"))?;
    let victim = out.join("victim.json");
    fixture_victim(config)?.save(&victim)?;
    let files = ExtractionConfig {
        data_source: clonekit::config::DataSource::Files,
        test_manifest: Some(test.display().to_string()),
        pool_manifest: Some(pool.display().to_string()),
        victim_model: Some(victim.display().to_string()),
        ..config.clone()
    };
    std::fs::write(out.join("config.toml"), files.to_toml_string())?;
    println!("wrote {}", out.join("config.toml").display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse();
    let config = ExtractionConfig::load_with_overrides(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Select { out } => {
            let task = Task::load(&config)?;
            let (plan, queries) = select(&config, &task)?;
            eprintln!("{} queries, digest {}", queries.len(), queries.digest());
            write_json(out.as_deref(), &plan.to_json())?;
        }
        Command::Extract { out } => {
            let report = run(&config, Some(&out))?;
            println!(
                "{} seed {}: accuracy {} spent {}/{}",
                report.method,
                report.seed,
                report
                    .accuracy
                    .map_or("n/a".to_string(), |a| format!("{:.2}%", 100.0 * a)),
                report.budget.spent,
                report.budget.budget
            );
            if !report.valid {
                eprintln!("run invalid: {}", report.error.as_deref().unwrap_or("unknown"));
                return Ok(ExitCode::from(2));
            }
        }
        Command::Adapt {
            surrogate,
            noisy,
            log,
        } => {
            let net = load_surrogate(&surrogate)?;
            let task = Task::load(&config)?;
            let data = if noisy {
                corrupt_gaussian(
                    &task.test,
                    config.noise_sigma,
                    &mut make_rng_stream(config.seed, Stream::Noise),
                )
            } else {
                task.test.clone()
            };
            let (eval, rows) = align(&net, &data, &config);
            if let Some(path) = log {
                write_adapt_log(&rows, &path)?;
            }
            println!("{}", serde_json::to_string_pretty(&eval)?);
        }
        Command::Evaluate { surrogate } => {
            let net = load_surrogate(&surrogate)?;
            let task = Task::load(&config)?;
            let oracle = match (&config.victim_url, &config.victim_model) {
                (None, Some(_)) => VictimAccess::resolve(&config)?.oracle(),
                _ => None,
            };
            let result = evaluate(&net, &task.test, &config.input_mean, &config.input_std, oracle.as_ref());
            println!("{}", serde_json::to_string_pretty(&result)?);
        }
        Command::Compare { reports, csv } => {
            let loaded = reports
                .iter()
                .map(|p| ExperimentReport::load(p))
                .collect::<Result<Vec<_>, _>>()?;
            let table = compare(&loaded)?;
            print!("{}", table.to_text());
            if let Some(path) = csv {
                table.write_csv(&path)?;
            }
        }
        Command::ServeVictim { addr } => {
            let VictimAccess::Local(model) = VictimAccess::resolve(&config)? else {
                bail!("serve-victim needs a local victim, not victim_url");
            };
            let endpoint = VictimEndpoint::new(model, config.query_budget)
                .with_rounding(config.response_rounding);
            let server = clonekit_service::spawn_background(Arc::new(endpoint), addr)?;
            println!("serving on {} with budget {}", server.url(), config.query_budget);
            loop {
                std::thread::park();
            }
        }
        Command::Fixture { out } => export_fixture(&config, &out)?,
    }
    Ok(ExitCode::SUCCESS)
}
