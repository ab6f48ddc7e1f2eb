use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use uwlink_core::modem::{measure_ber, ModemConfig, SUPPORTED_RATES};
use uwlink_core::sim::{run_scenario_with, write_report_dir, RunOptions, Scenario, SimError};
use uwlink_core::validation;

/// Receptions captured with --dump-waveforms.
const WAVEFORM_DUMP_LIMIT: usize = 16;

#[derive(Parser)]
#[command(
    name = "uwlink",
    version,
    about = "Inductive-coupling power-carrier link simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write report.json, report.csv and timeline.jsonl.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write conditioned receive waveforms as CSV.
        #[arg(long)]
        dump_waveforms: bool,
    },
    /// Monte Carlo BER over an AWGN channel, written as CSV.
    BerSweep {
        /// Comma-separated Eb/N0 points in dB.
        #[arg(
            long,
            value_delimiter = ',',
            required = true,
            allow_hyphen_values = true
        )]
        ebn0: Vec<f64>,
        #[arg(long, default_value_t = 100_000)]
        bits: usize,
        #[arg(long, default_value_t = 115_200, value_parser = parse_rate)]
        rate: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the acceptance checks and print one line per criterion.
    Validate,
}

fn parse_rate(s: &str) -> Result<u32, String> {
    let r: u32 = s.parse().map_err(|e| format!("{e}"))?;
    if SUPPORTED_RATES.contains(&r) {
        Ok(r)
    } else {
        Err(format!("rate must be one of {SUPPORTED_RATES:?}"))
    }
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::ConfigInvalid { .. } => Failure::Config(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

fn run(scenario: &Path, out: &Path, seed: Option<u64>, dump: bool) -> Result<(), Failure> {
    let mut sc = Scenario::load(scenario)?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    let opts = RunOptions {
        dump_waveforms: if dump { WAVEFORM_DUMP_LIMIT } else { 0 },
    };
    let output = run_scenario_with(&sc, &opts)?;
    write_report_dir(&output.report, out)?;
    for (node, trace) in output.energy_traces.iter().enumerate() {
        let f = File::create(out.join(format!("energy_node{node}.csv")))?;
        trace
            .write_csv(BufWriter::new(f))
            .map_err(|e| Failure::Run(e.to_string()))?;
    }
    if dump {
        let dir = out.join("waveforms");
        fs::create_dir_all(&dir)?;
        for w in &output.waveforms {
            let f = File::create(dir.join(format!("{}.csv", w.label)))?;
            w.wave
                .write_csv(BufWriter::new(f))
                .map_err(|e| Failure::Run(e.to_string()))?;
        }
    }
    let r = &output.report;
    println!(
        "{} polls, {} decode errors, {} timeouts, BER {:.3e} over {} bits",
        r.polls.len(),
        r.total_decode_errors(),
        r.total_timeouts(),
        r.link.measured_ber,
        r.link.physical_bits
    );
    Ok(())
}

fn ber_sweep(ebn0: &[f64], bits: usize, rate: u32, seed: u64, out: &Path) -> Result<(), Failure> {
    let cfg = ModemConfig::with_rate(rate);
    let points = measure_ber(&cfg, ebn0, bits, seed);
    let mut w = csv::Writer::from_path(out).map_err(|e| Failure::Run(e.to_string()))?;
    for p in &points {
        w.serialize(p).map_err(|e| Failure::Run(e.to_string()))?;
        println!(
            "{:>6.2} dB  measured {:.4e}  theory {:.4e}",
            p.ebn0_db, p.measured_ber, p.theoretical_ber
        );
    }
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            dump_waveforms,
        } => run(&scenario, &out, seed, dump_waveforms),
        Command::BerSweep {
            ebn0,
            bits,
            rate,
            seed,
            out,
        } => ber_sweep(&ebn0, bits, rate, seed, &out),
        Command::Validate => {
            let results = validation::run_all();
            for r in &results {
                println!("{}", r.line());
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed == 0 {
                Ok(())
            } else {
                Err(Failure::Run(format!("{failed} criteria failed")))
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
