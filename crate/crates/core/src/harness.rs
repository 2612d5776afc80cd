//! Seeded Monte-Carlo trials and parameter sweeps over the full
//! transmit / channel / receive pipeline.
//!
//! Every trial draws its randomness from ChaCha streams keyed by the master
//! seed, the sweep coordinate and the trial index, so results do not depend
//! on the order in which worker threads pick up trials. All predictors of a
//! coordinate are evaluated on the same simulated link realizations.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assigner::{fine_grained_update, initial_assignment, AssignmentState};
use crate::channel::{
    sample_rayleigh, snr_to_noise_variance, transmit_slot, ChannelRealization, ScenarioConfig,
};
use crate::detector::{default_threshold, detect, project, DetectionResult};
use crate::error::{Error, Result};
use crate::metrics::{orth_latency, todma_latency, token_error_rate, LatencyModel, TrialOutcome};
use crate::modem::ModulationCodebook;
use crate::predictor::bridge::DEFAULT_TIMEOUT;
use crate::predictor::{
    genie_predict, markov_predict, random_predict, BridgeClient, BridgeEndpoint, PredictionRequest,
};
use crate::token::{load_sequences, SourceModel, TokenSequence};

/// Detection threshold used when noise is switched off.
pub const NOISELESS_THRESHOLD: f64 = 1e-9;

/// Default trials per sweep coordinate.
pub const DEFAULT_TRIALS: usize = 500;

/// Additive smoothing when fitting a Markov model to a token file.
const FIT_PSEUDOCOUNT: f64 = 0.5;

// stream domains
const DOMAIN_LINK: u64 = 0x6c69_6e6b;
const DOMAIN_PREDICT: u64 = 0x7072_6564;
const DOMAIN_MODEL: u64 = 0x6d6f_6465;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Markov,
    Random,
    Genie,
    Bridge,
}

impl PredictorKind {
    fn tag(self) -> u64 {
        match self {
            Self::Markov => 1,
            Self::Random => 2,
            Self::Genie => 3,
            Self::Bridge => 4,
        }
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Markov => "markov",
            Self::Random => "random",
            Self::Genie => "genie",
            Self::Bridge => "bridge",
        })
    }
}

impl FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markov" => Ok(Self::Markov),
            "random" => Ok(Self::Random),
            "genie" => Ok(Self::Genie),
            "bridge" => Ok(Self::Bridge),
            other => Err(Error::Config(format!(
                "unknown predictor {other:?} (expected markov, random, genie or bridge)"
            ))),
        }
    }
}

/// Where device token sequences come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SourceSpec {
    /// Synthetic Markov source, see [`SourceModel::concentrated`].
    Markov { concentration: f64 },
    /// Token file; each active device picks one of its sequences per trial.
    File(PathBuf),
}

impl FromStr for SourceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(c) = s.strip_prefix("markov:") {
            let concentration = c
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad concentration {c:?}: {e}")))?;
            return Ok(Self::Markov { concentration });
        }
        if let Some(p) = s.strip_prefix("file:") {
            if p.is_empty() {
                return Err(Error::Config("file source needs a path".into()));
            }
            return Ok(Self::File(PathBuf::from(p)));
        }
        Err(Error::Config(format!(
            "unknown source {s:?} (expected markov:<concentration> or file:<path>)"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::Config(format!(
                "unknown format {other:?} (expected csv or json)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Base scenario. `k_active` and `snr_db` are taken from the sweep axes.
    pub scenario: ScenarioConfig,
    pub source: SourceSpec,
    pub predictors: Vec<PredictorKind>,
    pub trials: usize,
    pub seed: u64,
    pub active_axis: Vec<usize>,
    pub snr_axis: Vec<f64>,
    /// Zero noise with [`NOISELESS_THRESHOLD`] in place of `2 sigma^2`.
    pub noiseless: bool,
    pub n_subcarriers: usize,
    pub subcarrier_spacing: f64,
    pub target_ber: f64,
    pub bridge: Option<BridgeEndpoint>,
    pub bridge_timeout: std::time::Duration,
    /// Worker threads; 0 uses the rayon default.
    pub workers: usize,
}

impl SweepConfig {
    /// Config for a single coordinate taken from `scenario`.
    pub fn new(scenario: ScenarioConfig, source: SourceSpec, predictors: Vec<PredictorKind>) -> Self {
        Self {
            scenario,
            source,
            predictors,
            trials: DEFAULT_TRIALS,
            seed: 0,
            active_axis: vec![scenario.k_active],
            snr_axis: vec![scenario.snr_db],
            noiseless: false,
            n_subcarriers: 1024,
            subcarrier_spacing: 15e3,
            target_ber: 1e-3,
            bridge: None,
            bridge_timeout: DEFAULT_TIMEOUT,
            workers: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.trials < 1 {
            return bad("trial count must be >= 1");
        }
        if self.active_axis.is_empty() || self.snr_axis.is_empty() {
            return bad("sweep axes must be nonempty");
        }
        if self.predictors.is_empty() {
            return bad("at least one predictor is required");
        }
        if self.predictors.contains(&PredictorKind::Bridge) && self.bridge.is_none() {
            return bad("the bridge predictor needs --bridge-endpoint");
        }
        if let SourceSpec::Markov { concentration } = self.source {
            if !concentration.is_finite() || concentration < 0.0 {
                return bad("concentration must be finite and >= 0");
            }
        }
        for point in self.points() {
            self.scenario_at(point).validate()?;
        }
        self.latency_model(self.snr_axis[0]).validate()
    }

    /// Sweep coordinates in output order: active count major, SNR minor.
    pub fn points(&self) -> Vec<SweepPoint> {
        self.active_axis
            .iter()
            .flat_map(|&k| {
                self.snr_axis.iter().map(move |&s| SweepPoint {
                    k_active: k,
                    snr_db: s,
                })
            })
            .collect()
    }

    pub fn scenario_at(&self, point: SweepPoint) -> ScenarioConfig {
        ScenarioConfig {
            k_active: point.k_active,
            snr_db: point.snr_db,
            ..self.scenario
        }
    }

    pub fn latency_model(&self, snr_db: f64) -> LatencyModel {
        LatencyModel {
            n_subcarriers: self.n_subcarriers,
            subcarrier_spacing: self.subcarrier_spacing,
            target_ber: self.target_ber,
            snr_linear: 10f64.powf(snr_db / 10.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub k_active: usize,
    pub snr_db: f64,
}

/// One output line of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub snr_db: f64,
    pub predictor: PredictorKind,
    pub trials: usize,
    pub ter_mean: f64,
    pub ter_stderr: f64,
    pub mask_rate_mean: f64,
    pub collision_rate_mean: f64,
    pub todma_latency_s: f64,
    pub orth_latency_s: f64,
    /// Wall time of the whole coordinate (shared by its predictor rows).
    pub wall_s: f64,
}

/// Receiver state of one simulated access round, before prediction.
#[derive(Debug, Clone)]
pub struct LinkTrial {
    /// Identities of the active devices within `0..K_T`.
    pub device_ids: Vec<usize>,
    pub truth: Vec<TokenSequence>,
    pub channels: ChannelRealization,
    pub detections: Vec<DetectionResult>,
    pub initial: AssignmentState,
    pub updated: AssignmentState,
}

impl LinkTrial {
    /// Summary for sequences produced by some predictor.
    pub fn outcome(&self, estimated: &[TokenSequence]) -> Result<TrialOutcome> {
        let ter = token_error_rate(estimated, &self.truth)?;
        let token_errors = estimated
            .iter()
            .zip(&self.truth)
            .map(|(e, t)| {
                e.as_slice()
                    .iter()
                    .zip(t.as_slice())
                    .filter(|(a, b)| a != b)
                    .count()
            })
            .collect();
        let n = self.truth.first().map_or(0, TokenSequence::len);
        Ok(TrialOutcome {
            ter,
            mask_rate: self.initial.mask_rate(),
            mask_rate_after_update: self.updated.mask_rate(),
            collision_rate: if n == 0 {
                0.0
            } else {
                self.initial.slots_with_residual() as f64 / n as f64
            },
            token_errors,
            n_slots: n,
        })
    }
}

/// Runs transmission, detection and both assignment phases for given
/// sequences and channels. `known_csi` is the receiver's view of the
/// channels (genie CSI: the same realization).
pub fn simulate_link<R: Rng + ?Sized>(
    truth: Vec<TokenSequence>,
    codebook: &ModulationCodebook,
    channels: ChannelRealization,
    sigma2: f64,
    threshold: f64,
    rng: &mut R,
) -> Result<LinkTrial> {
    let k = truth.len();
    if channels.k() != k {
        return Err(Error::Dimension(format!(
            "{k} sequences, {} channels",
            channels.k()
        )));
    }
    let n_slots = truth.first().map_or(0, TokenSequence::len);
    if truth.iter().any(|s| s.len() != n_slots) {
        return Err(Error::Dimension("sequences have mixed lengths".into()));
    }
    let q = codebook.q();
    if let Some(id) = truth.iter().flat_map(|s| s.as_slice()).find(|&&t| t >= q) {
        return Err(Error::TokenOutOfRange { id: *id, q });
    }
    let mut detections = Vec::with_capacity(n_slots);
    let mut columns = Vec::with_capacity(k);
    for n in 0..n_slots {
        columns.clear();
        columns.extend(truth.iter().map(|s| codebook.codeword(s.as_slice()[n])));
        let y = transmit_slot(codebook.l(), &columns, &channels, sigma2, rng)?;
        detections.push(detect(&project(&y, codebook)?, threshold)?);
    }
    let initial = initial_assignment(&detections, &channels, threshold, q)?;
    let updated = fine_grained_update(initial.clone());
    Ok(LinkTrial {
        device_ids: Vec::new(),
        truth,
        channels,
        detections,
        initial,
        updated,
    })
}

/// Shared, immutable resources for a sweep.
#[derive(Debug)]
pub struct Experiment {
    config: SweepConfig,
    codebook: ModulationCodebook,
    model: SourceModel,
    file_sequences: Option<Vec<TokenSequence>>,
}

impl Experiment {
    pub fn new(config: SweepConfig) -> Result<Self> {
        config.validate()?;
        let q = config.scenario.q;
        let (model, file_sequences) = match &config.source {
            SourceSpec::Markov { concentration } => (
                SourceModel::concentrated(q, *concentration, mix(config.seed, DOMAIN_MODEL))?,
                None,
            ),
            SourceSpec::File(path) => {
                let file = load_sequences(path)?;
                if file.q != q || file.n != config.scenario.n_slots {
                    return Err(Error::Config(format!(
                        "{} declares Q={} N={}, scenario has Q={} N={}",
                        path.display(),
                        file.q,
                        file.n,
                        q,
                        config.scenario.n_slots
                    )));
                }
                if file.sequences.is_empty() {
                    return Err(Error::Config(format!("{} holds no sequences", path.display())));
                }
                (
                    SourceModel::fit(&file.sequences, q, FIT_PSEUDOCOUNT)?,
                    Some(file.sequences),
                )
            }
        };
        Ok(Self {
            codebook: ModulationCodebook::dft(q)?,
            model,
            file_sequences,
            config,
        })
    }

    pub fn config(&self) -> &SweepConfig {
        &self.config
    }

    pub fn codebook(&self) -> &ModulationCodebook {
        &self.codebook
    }

    /// The Markov model used by the source (synthetic) or fitted to the
    /// token file; it also drives the Markov predictor.
    pub fn model(&self) -> &SourceModel {
        &self.model
    }

    fn stream(&self, point: SweepPoint, domain: u64, trial_index: u64) -> ChaCha8Rng {
        let key = mix(
            mix(mix(self.config.seed, domain), point.k_active as u64),
            point.snr_db.to_bits(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(trial_index);
        rng
    }

    /// Simulates one access round at `point` up to the fine-grained update.
    pub fn link_trial(&self, point: SweepPoint, trial_index: u64) -> Result<LinkTrial> {
        let sc = self.config.scenario_at(point);
        sc.validate()?;
        let mut rng = self.stream(point, DOMAIN_LINK, trial_index);
        let device_ids = rand::seq::index::sample(&mut rng, sc.k_total, sc.k_active).into_vec();
        let truth = (0..sc.k_active)
            .map(|_| match &self.file_sequences {
                Some(pool) => Ok(pool[rng.random_range(0..pool.len())].clone()),
                None => self.model.sample_sequence(sc.n_slots, &mut rng),
            })
            .collect::<Result<Vec<_>>>()?;
        let channels = sample_rayleigh(sc.k_active, sc.m, &mut rng);
        let (sigma2, threshold) = if self.config.noiseless {
            (0.0, NOISELESS_THRESHOLD)
        } else {
            let s = snr_to_noise_variance(sc.snr_db);
            (s, default_threshold(s))
        };
        let mut trial = simulate_link(truth, &self.codebook, channels, sigma2, threshold, &mut rng)?;
        trial.device_ids = device_ids;
        Ok(trial)
    }

    /// Fills every device's MASKs with `kind` and returns the estimates.
    pub fn predict(
        &self,
        trial: &LinkTrial,
        kind: PredictorKind,
        point: SweepPoint,
        trial_index: u64,
        bridge: Option<&mut BridgeClient>,
    ) -> Result<Vec<TokenSequence>> {
        let state = &trial.updated;
        let mut rng = self.stream(point, mix(DOMAIN_PREDICT, kind.tag()), trial_index);
        let mut bridge = bridge;
        let mut out = Vec::with_capacity(state.sequences.len());
        for (k, seq) in state.sequences.iter().enumerate() {
            if let Some(done) = seq.to_sequence() {
                out.push(done);
                continue;
            }
            let request = PredictionRequest::from_assignment(state, k)?;
            let filled = match kind {
                PredictorKind::Markov => markov_predict(&request, &self.model)?,
                PredictorKind::Random => random_predict(&request, state.q(), &mut rng)?,
                PredictorKind::Genie => genie_predict(&request, &trial.truth[k])?,
                PredictorKind::Bridge => match bridge.as_deref_mut() {
                    Some(client) => client.predict(&request)?,
                    None => return Err(Error::Config("bridge predictor without a connection".into())),
                },
            };
            out.push(filled);
        }
        Ok(out)
    }

    /// Full pipeline for one trial and one predictor.
    pub fn run_trial(
        &self,
        point: SweepPoint,
        kind: PredictorKind,
        trial_index: u64,
        bridge: Option<&mut BridgeClient>,
    ) -> Result<TrialOutcome> {
        let trial = self.link_trial(point, trial_index)?;
        let est = self.predict(&trial, kind, point, trial_index, bridge)?;
        trial.outcome(&est)
    }

    /// Outcomes of every configured predictor on one link realization.
    fn trial_all_predictors(
        &self,
        point: SweepPoint,
        trial_index: u64,
        mut bridge: Option<&mut BridgeClient>,
    ) -> Result<Vec<TrialOutcome>> {
        let trial = self.link_trial(point, trial_index)?;
        self.config
            .predictors
            .iter()
            .map(|&kind| {
                let est = self.predict(&trial, kind, point, trial_index, bridge.as_deref_mut())?;
                trial.outcome(&est)
            })
            .collect()
    }

    /// Runs every coordinate and returns one row per (coordinate, predictor).
    pub fn run_sweep(&self) -> Result<Vec<ResultRow>> {
        let mut bridge = match (
            &self.config.bridge,
            self.config.predictors.contains(&PredictorKind::Bridge),
        ) {
            (Some(ep), true) => Some(BridgeClient::connect(ep.clone(), self.config.bridge_timeout)?),
            _ => None,
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let mut rows = Vec::new();
        for point in self.config.points() {
            let start = Instant::now();
            let trials = self.config.trials as u64;
            // outcomes[trial][predictor], always in trial order
            let outcomes: Vec<Vec<TrialOutcome>> = match bridge.as_mut() {
                Some(client) => (0..trials)
                    .map(|t| self.trial_all_predictors(point, t, Some(client)))
                    .collect::<Result<_>>()?,
                None => pool.install(|| {
                    (0..trials)
                        .into_par_iter()
                        .map(|t| self.trial_all_predictors(point, t, None))
                        .collect::<Result<_>>()
                })?,
            };
            let wall_s = start.elapsed().as_secs_f64();
            let sc = self.config.scenario_at(point);
            let latency = self.config.latency_model(point.snr_db);
            let todma = todma_latency(self.codebook.l(), sc.n_slots, &latency)?;
            let orth = orth_latency(sc.k_total, sc.n_slots, sc.q, &latency).unwrap_or(f64::NAN);
            for (p, &kind) in self.config.predictors.iter().enumerate() {
                let ter: Vec<f64> = outcomes.iter().map(|o| o[p].ter).collect();
                let (ter_mean, ter_stderr) = mean_stderr(&ter);
                let mask: Vec<f64> = outcomes.iter().map(|o| o[p].mask_rate).collect();
                let coll: Vec<f64> = outcomes.iter().map(|o| o[p].collision_rate).collect();
                rows.push(ResultRow {
                    k: point.k_active,
                    snr_db: point.snr_db,
                    predictor: kind,
                    trials: self.config.trials,
                    ter_mean,
                    ter_stderr,
                    mask_rate_mean: mean_stderr(&mask).0,
                    collision_rate_mean: mean_stderr(&coll).0,
                    todma_latency_s: todma,
                    orth_latency_s: orth,
                    wall_s,
                });
            }
        }
        Ok(rows)
    }
}

/// Runs one trial at the config's base scenario with its first predictor.
pub fn run_trial(config: &SweepConfig, trial_index: u64) -> Result<TrialOutcome> {
    let exp = Experiment::new(config.clone())?;
    let point = SweepPoint {
        k_active: config.scenario.k_active,
        snr_db: config.scenario.snr_db,
    };
    let kind = config.predictors[0];
    let mut bridge = match (&config.bridge, kind) {
        (Some(ep), PredictorKind::Bridge) => Some(BridgeClient::connect(ep.clone(), config.bridge_timeout)?),
        _ => None,
    };
    exp.run_trial(point, kind, trial_index, bridge.as_mut())
}

pub fn run_sweep(config: &SweepConfig) -> Result<Vec<ResultRow>> {
    Experiment::new(config.clone())?.run_sweep()
}

/// Sample mean and standard error (`s / sqrt(n)`, zero for a single sample).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Latency of both schemes for a list of `K_T` values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub k_total: usize,
    pub todma_latency_s: f64,
    pub orth_latency_s: f64,
}

pub fn latency_sweep(
    k_totals: &[usize],
    l: usize,
    n_tokens: usize,
    q: usize,
    model: &LatencyModel,
) -> Result<Vec<LatencyRow>> {
    let todma = todma_latency(l, n_tokens, model)?;
    k_totals
        .iter()
        .map(|&k_total| {
            Ok(LatencyRow {
                k_total,
                todma_latency_s: todma,
                orth_latency_s: orth_latency(k_total, n_tokens, q, model)?,
            })
        })
        .collect()
}

pub fn write_csv<W: Write, T: Serialize>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write, T: Serialize>(rows: &[T], mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, rows)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn write_results<T: Serialize>(rows: &[T], path: &Path, format: OutputFormat) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        OutputFormat::Csv => write_csv(rows, file),
        OutputFormat::Json => write_json(rows, file),
    }
}

/// SplitMix64 finalizer over `a ^ b`-chained input.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(0x6a09_e667_f3bc_c909);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
