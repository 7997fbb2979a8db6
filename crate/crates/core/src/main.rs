use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use auction_channel::harness::{self, Format};
use auction_channel::metrics::MetricsRecord;
use auction_channel::netsim::{self, trace, RunOptions};
use auction_channel::scenario::{load_scenario, Mode, ScenarioConfig};

#[derive(Parser)]
#[command(name = "auction-sim", version, about = "Run iterative double auctions over a simulated multiparty state channel")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Writes metrics here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Csv)]
    format: OutFormat,
}

#[derive(Subcommand)]
enum Command {
    /// Runs one scenario file.
    Run {
        scenario: PathBuf,
        /// Writes the per-round trace as JSON lines (channel mode only).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Runs a scenario in both modes and prints the differences.
    Compare { scenario: PathBuf },
    /// Runs every bundled scenario plus the create/close block series.
    PaperSuite {
        /// Largest channel size of the block series.
        #[arg(long, default_value_t = 5000)]
        max_n: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Jsonl,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Jsonl => Format::JsonLines,
        }
    }
}

type Failure = Box<dyn std::error::Error>;

fn load(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let mut cfg = load_scenario(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn emit(records: &[MetricsRecord], cli: &Cli) -> Result<(), Failure> {
    match &cli.out {
        Some(path) => harness::emit_metrics(records, cli.format.into(), path)?,
        None => print!("{}", harness::render_metrics(records, cli.format.into())),
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run { scenario, trace: trace_path } => {
            let cfg = load(scenario, cli.seed)?;
            let record = match (cfg.mode, trace_path) {
                (Mode::Channel, Some(path)) => {
                    let out = netsim::run(
                        &cfg,
                        RunOptions {
                            record_trace: true,
                            record_messages: false,
                        },
                    )?;
                    trace::write_jsonl(&out.trace, std::io::BufWriter::new(std::fs::File::create(path)?))?;
                    out.metrics
                }
                _ => harness::run_scenario(&cfg)?,
            };
            emit(&[record], cli)
        }
        Command::Compare { scenario } => {
            let mut cfg = load(scenario, cli.seed)?;
            cfg.mode = Mode::Channel;
            let channel = harness::run_scenario(&cfg)?;
            cfg.mode = Mode::Strawman;
            let straw = harness::run_scenario(&cfg)?;
            eprintln!("{}", harness::compare_runs(&channel, &straw));
            emit(&[channel, straw], cli)
        }
        Command::PaperSuite { max_n } => {
            let mut records = Vec::new();
            for (name, _) in harness::SUITE {
                let mut cfg = harness::suite_scenario(name).expect("bundled");
                if let Some(s) = cli.seed {
                    cfg.seed = s;
                }
                let t = Instant::now();
                let r = harness::run_scenario(&cfg)?;
                eprintln!(
                    "{name:<16} tx={:<6} gas={:<10} eth={:.4} messages={:<7} iterations={:<4} converged={} ({:.1?})",
                    r.on_chain_tx,
                    r.gas_total,
                    r.eth_total,
                    r.off_chain_messages,
                    r.iterations_run,
                    r.converged,
                    t.elapsed()
                );
                records.push(r);
            }
            for n in harness::SCALING_SIZES.into_iter().filter(|n| *n <= *max_n) {
                let t = Instant::now();
                let r = harness::run_scenario(&harness::lifecycle_config(n))?;
                eprintln!(
                    "lifecycle n={n:<5} blocks={:<3} expected={:<3} messages/iteration={} ({:.1?})",
                    r.blocks_used,
                    2 * harness::blocks_for(n as u64, 380),
                    harness::messages_per_iteration(n as u64),
                    t.elapsed()
                );
                records.push(r);
            }
            emit(&records, cli)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
