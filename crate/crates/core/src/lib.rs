//! Token-domain multiple access (ToDMA) link-level simulation.
//!
//! Devices share a token codebook of size `Q` and an orthonormal modulation
//! codebook `U`. Each active device sends its token sequence one codeword
//! per slot over a Rayleigh block-fading channel; codewords of different
//! devices overlap at an `M`-antenna receiver. The receiver projects every
//! slot onto `U`, detects the active tokens with their channel signatures,
//! assigns tokens to devices by matching against the known channels,
//! resolves single-token collisions, and hands the remaining masked
//! positions, with their candidate sets, to a predictor.
//!
//! Module map:
//!
//! - [`token`]: token sequences, Markov sources, token files
//! - [`modem`]: codebook construction and token modulation
//! - [`channel`]: Rayleigh channel and the superposition model
//! - [`detector`]: projection and energy-threshold token detection
//! - [`assigner`]: CSI-matched assignment and residual/candidate sets
//! - [`predictor`]: masked-token predictors and the external bridge client
//! - [`metrics`]: token error rate, collision oracles, latency models
//! - [`harness`]: seeded Monte-Carlo trials and sweeps

pub mod assigner;
pub mod channel;
pub mod detector;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod modem;
pub mod predictor;
pub mod token;

pub use assigner::{fine_grained_update, initial_assignment, AssignmentState, MaskedSequence};
pub use channel::{
    sample_rayleigh, snr_to_noise_variance, transmit_slot, ChannelRealization, ReceivedSlot, ScenarioConfig,
};
pub use detector::{default_threshold, detect, project, DetectionResult};
pub use error::{Error, Result};
pub use harness::{
    run_sweep, run_trial, simulate_link, Experiment, LinkTrial, OutputFormat, PredictorKind, ResultRow,
    SourceSpec, SweepConfig, SweepPoint,
};
pub use metrics::{
    mask_rate_oracle, one_hot_token_error_rate, orth_latency, todma_latency, token_error_rate, LatencyModel,
    TrialOutcome,
};
pub use modem::{modulate, ModulatedFrame, ModulationCodebook};
pub use predictor::{
    genie_predict, markov_predict, random_predict, BridgeClient, BridgeEndpoint, MaskPredictor,
    PredictionRequest,
};
pub use token::{from_one_hot, load_sequences, one_hot, OneHotMatrix, SourceModel, TokenId, TokenSequence};
