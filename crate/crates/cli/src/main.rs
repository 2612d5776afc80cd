//! `todma`: Monte-Carlo sweeps of the token-domain multiple access link.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::Parser;

use todma_core::harness::{latency_sweep, write_csv, write_json, write_results, DEFAULT_TRIALS};
use todma_core::{BridgeEndpoint, OutputFormat, PredictorKind, ScenarioConfig, SourceSpec, SweepConfig};

#[derive(Debug, Parser)]
#[command(
    name = "todma",
    version,
    about = "Token-domain multiple access link simulator"
)]
struct Args {
    /// Total number of devices K_T.
    #[arg(long, default_value_t = 500)]
    devices: usize,

    /// Active devices per round; a comma list sweeps K.
    #[arg(long, value_delimiter = ',', default_value = "8")]
    active: Vec<usize>,

    /// Receive antennas M.
    #[arg(long, default_value_t = 32)]
    antennas: usize,

    /// Token codebook size Q (also the codeword length).
    #[arg(long, default_value_t = 64)]
    codebook_size: usize,

    /// Tokens per sequence N.
    #[arg(long, default_value_t = 32)]
    seq_len: usize,

    /// SNR in dB; a comma list sweeps SNR.
    #[arg(long, value_delimiter = ',', default_value = "25", allow_hyphen_values = true)]
    snr_db: Vec<f64>,

    /// Monte-Carlo trials per sweep coordinate.
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// markov, random, genie or bridge; a comma list evaluates several on the same trials.
    #[arg(long, value_delimiter = ',', default_value = "markov")]
    predictor: Vec<PredictorKind>,

    /// `host:port`, or `stdio:<command> [args]` to spawn the service.
    #[arg(long)]
    bridge_endpoint: Option<BridgeEndpoint>,

    /// Seconds to wait for each bridge reply.
    #[arg(long, default_value_t = 30.0)]
    bridge_timeout: f64,

    /// `markov:<concentration>` or `file:<path>`.
    #[arg(long, default_value = "markov:3")]
    source: SourceSpec,

    /// Switch noise off (detection threshold 1e-9).
    #[arg(long)]
    noiseless: bool,

    /// Target BER of the orthogonal QAM baseline.
    #[arg(long, default_value_t = 1e-3)]
    ber: f64,

    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    workers: usize,

    /// Print the latency comparison for these K_T values instead of simulating.
    #[arg(long, value_delimiter = ',')]
    latency_sweep: Option<Vec<usize>>,

    /// Write results here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

impl Args {
    fn sweep_config(&self) -> Result<SweepConfig> {
        if !(self.bridge_timeout > 0.0 && self.bridge_timeout.is_finite()) {
            anyhow::bail!("--bridge-timeout must be a positive number of seconds");
        }
        let scenario = ScenarioConfig {
            k_total: self.devices,
            k_active: self.active.first().copied().unwrap_or(0),
            m: self.antennas,
            n_slots: self.seq_len,
            q: self.codebook_size,
            snr_db: self.snr_db.first().copied().unwrap_or(f64::NAN),
        };
        let mut cfg = SweepConfig::new(scenario, self.source.clone(), self.predictor.clone());
        cfg.active_axis = self.active.clone();
        cfg.snr_axis = self.snr_db.clone();
        cfg.trials = self.trials;
        cfg.seed = self.seed;
        cfg.noiseless = self.noiseless;
        cfg.target_ber = self.ber;
        cfg.bridge = self.bridge_endpoint.clone();
        cfg.bridge_timeout = Duration::from_secs_f64(self.bridge_timeout);
        cfg.workers = self.workers;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit<T: serde::Serialize>(rows: &[T], args: &Args) -> Result<()> {
    match &args.output {
        Some(path) => write_results(rows, path, args.format.into())
            .with_context(|| format!("cannot write {}", path.display())),
        None => {
            let mut out = std::io::stdout().lock();
            match args.format {
                Format::Csv => write_csv(rows, &mut out)?,
                Format::Json => write_json(rows, &mut out)?,
            }
            out.flush()?;
            Ok(())
        }
    }
}

fn run(args: &Args) -> Result<()> {
    let cfg = args.sweep_config()?;
    if let Some(k_totals) = &args.latency_sweep {
        let model = cfg.latency_model(cfg.snr_axis[0]);
        let rows = latency_sweep(
            k_totals,
            cfg.scenario.q,
            cfg.scenario.n_slots,
            cfg.scenario.q,
            &model,
        )?;
        return emit(&rows, args);
    }
    let rows = todma_core::run_sweep(&cfg)?;
    emit(&rows, args)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("todma: error: {msg}");
            ExitCode::FAILURE
        }
    }
}
