use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use aiba::engine::EngineSpec;
use aiba::server::{self, ServerOptions};
use aiba::simulator::{run_scenario, verify_report, ScenarioSpec};
use aiba::storage::SampleStore;
use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "aiba", version, about = "Voice-sample collection server, simulator and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the collection server.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "0.0.0.0")]
        bind: IpAddr,
        #[arg(long, default_value = "data")]
        data_root: PathBuf,
        #[arg(long, default_value_t = 0)]
        default_config_number: u32,
        /// Engine registration, `<number>=<kind[:url]>`, e.g. `1=echo` or
        /// `2=remote:http://host/infer`. Repeatable.
        #[arg(long = "engine", value_name = "SPEC")]
        engines: Vec<EngineSpec>,
        /// Config document to install at startup. Repeatable.
        #[arg(long = "config", value_name = "FILE")]
        configs: Vec<PathBuf>,
    },
    /// Drive simulated phones against a running server and verify the result.
    Simulate {
        #[arg(long)]
        phones: usize,
        #[arg(long)]
        samples_per_phone: usize,
        #[arg(long)]
        uptime: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        server_url: String,
        #[arg(long)]
        config_number: u32,
        #[arg(long, default_value_t = 0)]
        engine_number: u32,
        /// Server data root; enables the on-disk census during verification.
        #[arg(long)]
        data_root: Option<PathBuf>,
        /// Where phone stores go; a fresh temporary directory by default.
        #[arg(long)]
        client_root: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        ack_drop_rate: f64,
        #[arg(long)]
        no_drain: bool,
        #[arg(long, default_value_t = 120)]
        drain_cap_secs: u64,
    },
    /// Build the daily export archive for one UTC date.
    Export {
        #[arg(long)]
        data_root: PathBuf,
        #[arg(long)]
        date: NaiveDate,
    },
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();

    match run(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

async fn run(cli: Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match cli.command {
        Command::Serve {
            port,
            bind,
            data_root,
            default_config_number,
            engines,
            configs,
        } => {
            let mut opts = ServerOptions::new(data_root);
            opts.bind = bind;
            opts.port = port;
            opts.default_config_number = default_config_number;
            opts.engines = engines;
            for path in configs {
                opts.configs.push(std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?);
            }
            let running = server::start(opts).await?;
            println!("listening on {}", running.url());
            tokio::signal::ctrl_c().await?;
            running.shutdown().await?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate {
            phones,
            samples_per_phone,
            uptime,
            seed,
            server_url,
            config_number,
            engine_number,
            data_root,
            client_root,
            ack_drop_rate,
            no_drain,
            drain_cap_secs,
        } => {
            let mut spec = ScenarioSpec::new(phones, samples_per_phone, uptime, seed);
            spec.config_number = config_number;
            spec.engine_number = engine_number;
            spec.ack_drop_rate = ack_drop_rate;
            spec.drain = !no_drain;
            spec.drain_cap = Duration::from_secs(drain_cap_secs);

            let (root, cleanup) = match client_root {
                Some(r) => (r, false),
                None => (
                    std::env::temp_dir().join(format!("aiba-sim-{seed}-{}", std::process::id())),
                    true,
                ),
            };
            let report = run_scenario(&spec, &server_url, &root).await;
            if cleanup {
                let _ = std::fs::remove_dir_all(&root);
            }
            let report = report?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            let violations = verify_report(&report, &spec, data_root.as_deref());
            for v in &violations {
                eprintln!("violation: {v}");
            }
            Ok(if violations.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Export { data_root, date } => {
            let store = SampleStore::open(data_root)?;
            let bundle = store.build_daily_export(date)?;
            println!(
                "{}: {} samples, {} audio files",
                bundle.path.display(),
                bundle.rows,
                bundle.audio_files
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}
