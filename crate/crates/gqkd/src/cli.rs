//! The `gqkd` command-line surface.
//!
//! Five subcommands (`keyrate`, `boundary`, `montecarlo`, `scaling`,
//! `oracle-check`) map onto the library layers. Parameters come from flags,
//! from a JSON config file (`--config`, flags win), or both; unknown config
//! keys are rejected. Every run echoes a metadata block (version, seed,
//! config hash) on stderr, embeds the same provenance in its outputs, writes
//! files atomically, and exits 0 on success, 1 on computation errors (with a
//! machine-readable JSON error on stderr) and 2 on usage errors.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boundary::{
    lin_spaced, log_spaced, rows_to_csv, scan_boundary, ScanMetadata, SearchConfig, SearchMode,
};
use crate::channel::{ChannelKind, ChannelSpec, EprSource};
use crate::cm::{FilterSpec, StandardFormCm};
use crate::error::Error;
use crate::fock::{oracle_check, DEFAULT_N_CUT};
use crate::keyrate::{key_rate, KeyRateReport};
use crate::postselect::{
    apply_rule, fit_scaling_exponent, sample_pairs, summarize, MonteCarloSummary,
    PostSelectionRule, ScalingFit, DEFAULT_BOOTSTRAP,
};

/// Seed used when neither `--seed`, the config file, nor `GQ_SEED` provide
/// one.
pub const DEFAULT_SEED: u64 = 1;

/// Exit status plus error channel of a CLI run.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config; exit code 2.
    Usage(String),
    /// A computation or I/O failure on a valid config; exit code 1.
    Computation(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Computation(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Parser, Debug)]
#[command(name = "gqkd", version, about = "CV-QKD key rates and Gaussian post-selection")]
struct Cli {
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed (default: $GQ_SEED, then 1).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on worker threads; results are unaffected.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output path; stdout when absent. Writes are atomic.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format (boundary defaults to csv, everything else to json).
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
    #[command(subcommand)]
    command: Option<CommandArgs>,
}

#[derive(Subcommand, Debug)]
enum CommandArgs {
    /// Key rate of one source/channel/filter configuration.
    Keyrate(KeyrateArgs),
    /// Maximum tolerable excess noise over a channel-parameter grid.
    Boundary(BoundaryArgs),
    /// Monte Carlo post-selection run with empirical covariance estimate.
    Montecarlo(MonteCarloArgs),
    /// Sublinear-scaling experiment for the adaptive amplification rule.
    Scaling(ScalingArgs),
    /// Gaussian-vs-Fock cross-check of the filter and loss pipeline.
    OracleCheck(OracleArgs),
}

#[derive(Args, Debug, Default)]
struct KeyrateArgs {
    /// Channel family: loss or amp.
    #[arg(long)]
    channel: Option<String>,
    /// Transmittance of a lossy channel.
    #[arg(long = "T")]
    t: Option<f64>,
    /// Channel loss in dB (alternative to --T).
    #[arg(long = "loss-db")]
    loss_db: Option<f64>,
    /// Gain of an amplifying channel.
    #[arg(long = "G")]
    g_channel: Option<f64>,
    /// Mean excess thermal photons (default 0).
    #[arg(long)]
    nth: Option<f64>,
    /// Alice's modulation variance.
    #[arg(long = "V")]
    v: Option<f64>,
    /// Source squeezing parameter (alternative to --V).
    #[arg(long)]
    lambda: Option<f64>,
    /// Virtual filter gain applied to Bob's mode (default 1 = none).
    #[arg(long)]
    gain: Option<f64>,
    /// Reconciliation efficiency (default 0.9).
    #[arg(long)]
    eta: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct BoundaryArgs {
    /// Channel family: loss or amp.
    #[arg(long)]
    channel: Option<String>,
    /// Transmittance grid, `start:stop:step` (or a single value).
    #[arg(long = "T")]
    t: Option<String>,
    /// Loss grid in dB, `start:stop:step` (alternative to --T).
    #[arg(long = "loss-db")]
    loss_db: Option<String>,
    /// Channel-gain grid, `start:stop:step`.
    #[arg(long = "G")]
    g_channel: Option<String>,
    /// Comma-separated modes: standard, attenuate, amplify.
    #[arg(long)]
    mode: Option<String>,
    /// Reconciliation efficiency (default 0.9).
    #[arg(long)]
    eta: Option<f64>,
    /// Modulation grid bounds and size (log-spaced).
    #[arg(long)]
    v_min: Option<f64>,
    #[arg(long)]
    v_max: Option<f64>,
    #[arg(long)]
    v_points: Option<usize>,
    /// Smallest attenuation in the nu grid.
    #[arg(long)]
    gain_min: Option<f64>,
    /// Largest amplification in the g grid.
    #[arg(long)]
    gain_max: Option<f64>,
    #[arg(long)]
    gain_points: Option<usize>,
    /// Noise bisection tolerance in photons (default 1e-4).
    #[arg(long)]
    bisect_tol: Option<f64>,
    /// Bracket cap in photons (default 50).
    #[arg(long)]
    noise_cap: Option<f64>,
    /// Disable the local polish after the grid pass.
    #[arg(long)]
    no_refine: bool,
}

#[derive(Args, Debug, Default)]
struct MonteCarloArgs {
    /// Source squeezing parameter (alternative to --V).
    #[arg(long)]
    lambda: Option<f64>,
    /// Alice's modulation variance.
    #[arg(long = "V")]
    v: Option<f64>,
    /// Optional channel before detection: loss or amp.
    #[arg(long)]
    channel: Option<String>,
    #[arg(long = "T")]
    t: Option<f64>,
    #[arg(long = "loss-db")]
    loss_db: Option<f64>,
    #[arg(long = "G")]
    g_channel: Option<f64>,
    #[arg(long)]
    nth: Option<f64>,
    /// Post-selection rule: attenuate, cutoff or adaptive.
    #[arg(long)]
    rule: Option<String>,
    /// Attenuation nu in (0, 1] (rule = attenuate).
    #[arg(long)]
    nu: Option<f64>,
    /// Filter gain > 1 (rules cutoff and adaptive).
    #[arg(long = "g")]
    g_filter: Option<f64>,
    /// Squared cutoff radius |gamma_M|^2 (rule = cutoff).
    #[arg(long)]
    gm2: Option<f64>,
    /// Batch size (scientific notation accepted, default 1e6).
    #[arg(long = "N")]
    n: Option<String>,
    /// Bootstrap resamples for the covariance errors (default 100).
    #[arg(long)]
    bootstrap: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct ScalingArgs {
    /// Per-component variance of Bob's outcomes (default 1).
    #[arg(long = "VB")]
    v_b: Option<f64>,
    /// Squared filter gain g^2 (default 1.5).
    #[arg(long)]
    g2: Option<f64>,
    /// Independent repetitions per batch size (default 100).
    #[arg(long)]
    runs: Option<usize>,
    /// Batch-size grid, `start:stop` for decade steps or `start:stop:step`.
    #[arg(long = "Ngrid")]
    n_grid: Option<String>,
}

#[derive(Args, Debug, Default)]
struct OracleArgs {
    /// Source squeezing parameter.
    #[arg(long)]
    lambda: Option<f64>,
    /// Filter gain.
    #[arg(long = "g")]
    g_filter: Option<f64>,
    /// Channel transmittance.
    #[arg(long = "T")]
    t: Option<f64>,
    /// Fock cutoff (default 60).
    #[arg(long)]
    ncut: Option<usize>,
    /// Acceptance threshold on the entrywise deviation (default 1e-6).
    #[arg(long)]
    tol: Option<f64>,
}

/// Flat, merged view of everything a run can be told, either via flags or
/// the config file. Unknown keys in the file are rejected by serde.
#[derive(Debug, Default, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
struct RawParams {
    command: Option<String>,
    seed: Option<u64>,
    threads: Option<usize>,
    out: Option<String>,
    format: Option<String>,

    channel: Option<String>,
    #[serde(rename = "T")]
    t: Option<String>,
    loss_db: Option<String>,
    #[serde(rename = "G")]
    g_channel: Option<String>,
    nth: Option<f64>,
    #[serde(rename = "V")]
    v: Option<f64>,
    lambda: Option<f64>,
    gain: Option<f64>,
    eta: Option<f64>,

    mode: Option<String>,
    v_min: Option<f64>,
    v_max: Option<f64>,
    v_points: Option<usize>,
    gain_min: Option<f64>,
    gain_max: Option<f64>,
    gain_points: Option<usize>,
    bisect_tol: Option<f64>,
    noise_cap: Option<f64>,
    no_refine: Option<bool>,

    rule: Option<String>,
    nu: Option<f64>,
    #[serde(rename = "g")]
    g_filter: Option<f64>,
    gm2: Option<f64>,
    #[serde(rename = "N")]
    n: Option<String>,
    bootstrap: Option<usize>,

    #[serde(rename = "VB")]
    v_b: Option<f64>,
    g2: Option<f64>,
    runs: Option<usize>,
    #[serde(rename = "Ngrid")]
    n_grid: Option<String>,

    ncut: Option<usize>,
    tol: Option<f64>,
}

macro_rules! overlay {
    ($dst:expr, $src:expr, $($field:ident),+ $(,)?) => {
        $( if $src.$field.is_some() { $dst.$field = $src.$field.clone(); } )+
    };
}

impl RawParams {
    fn keys_present(&self) -> Vec<&'static str> {
        let mut keys = Vec::new();
        macro_rules! check {
            ($($name:literal => $field:ident),+ $(,)?) => {
                $( if self.$field.is_some() { keys.push($name); } )+
            };
        }
        check!(
            "channel" => channel, "T" => t, "loss_db" => loss_db, "G" => g_channel,
            "nth" => nth, "V" => v, "lambda" => lambda, "gain" => gain, "eta" => eta,
            "mode" => mode, "v_min" => v_min, "v_max" => v_max, "v_points" => v_points,
            "gain_min" => gain_min, "gain_max" => gain_max, "gain_points" => gain_points,
            "bisect_tol" => bisect_tol, "noise_cap" => noise_cap, "no_refine" => no_refine,
            "rule" => rule, "nu" => nu, "g" => g_filter, "gm2" => gm2, "N" => n,
            "bootstrap" => bootstrap, "VB" => v_b, "g2" => g2, "runs" => runs,
            "Ngrid" => n_grid, "ncut" => ncut, "tol" => tol,
        );
        keys
    }
}

/// Fully validated run description; serialized into every output as the
/// provenance record.
#[derive(Debug, Clone, Serialize, PartialEq)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Keyrate {
        channel: ChannelSpec,
        source: EprSource,
        gain: f64,
        eta: f64,
    },
    Boundary {
        channel: ChannelKind,
        params: Vec<f64>,
        modes: Vec<SearchMode>,
        config: SearchConfig,
    },
    Montecarlo {
        source: EprSource,
        channel: Option<ChannelSpec>,
        rule: PostSelectionRule,
        n: usize,
        bootstrap: usize,
    },
    Scaling {
        v_b: f64,
        gain: f64,
        n_grid: Vec<usize>,
        runs: usize,
    },
    OracleCheck {
        lambda: f64,
        gain: f64,
        t: f64,
        n_cut: usize,
        tol: f64,
    },
}

impl RunConfig {
    fn command_name(&self) -> &'static str {
        match self {
            RunConfig::Keyrate { .. } => "keyrate",
            RunConfig::Boundary { .. } => "boundary",
            RunConfig::Montecarlo { .. } => "montecarlo",
            RunConfig::Scaling { .. } => "scaling",
            RunConfig::OracleCheck { .. } => "oracle-check",
        }
    }
}

/// Everything about a run that is not the computation itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RunContext {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    pub threads: Option<usize>,
}

/// Provenance block embedded in every output and echoed on stderr.
#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
}

impl RunMeta {
    fn new(config: &RunConfig, ctx: &RunContext) -> Self {
        #[derive(Serialize)]
        struct Hashed<'a> {
            config: &'a RunConfig,
            seed: u64,
            format: &'a OutputFormat,
        }
        let canonical = serde_json::to_vec(&Hashed {
            config,
            seed: ctx.seed,
            format: &ctx.format,
        })
        .expect("config serializes");
        let digest = Sha256::digest(&canonical);
        Self {
            version: crate::VERSION.to_string(),
            seed: ctx.seed,
            config_hash: hex::encode(digest),
            config: config.clone(),
        }
    }
}

fn allowed_keys(command: &str) -> &'static [&'static str] {
    match command {
        "keyrate" => &["channel", "T", "loss_db", "G", "nth", "V", "lambda", "gain", "eta"],
        "boundary" => &[
            "channel", "T", "loss_db", "G", "mode", "eta", "v_min", "v_max", "v_points",
            "gain_min", "gain_max", "gain_points", "bisect_tol", "noise_cap", "no_refine",
        ],
        "montecarlo" => &[
            "lambda", "V", "channel", "T", "loss_db", "G", "nth", "rule", "nu", "g", "gm2", "N",
            "bootstrap",
        ],
        "scaling" => &["VB", "g2", "runs", "Ngrid"],
        "oracle-check" => &["lambda", "g", "T", "ncut", "tol"],
        _ => &[],
    }
}

/// `start:stop:step` arithmetic grid, `start:stop` decade ladder, or a
/// single value. Scientific notation is accepted throughout.
fn parse_grid(text: &str, flag: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| -> CliResult<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| usage(format!("--{flag}: cannot parse '{s}' as a number")))
    };
    match parts.as_slice() {
        [one] => Ok(vec![num(one)?]),
        [start, stop] => {
            let (a, b) = (num(start)?, num(stop)?);
            if a <= 0.0 || b < a {
                return Err(usage(format!(
                    "--{flag}: decade range needs 0 < start <= stop, got {text}"
                )));
            }
            let mut vals = Vec::new();
            let mut x = a;
            while x <= b * (1.0 + 1e-9) {
                vals.push(x);
                x *= 10.0;
            }
            Ok(vals)
        }
        [start, stop, step] => {
            let (a, b, s) = (num(start)?, num(stop)?, num(step)?);
            if s <= 0.0 || b < a {
                return Err(usage(format!(
                    "--{flag}: range needs start <= stop and step > 0, got {text}"
                )));
            }
            let count = ((b - a) / s + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|i| a + i as f64 * s).collect())
        }
        _ => Err(usage(format!("--{flag}: expected value, start:stop or start:stop:step"))),
    }
}

fn parse_scalar(text: &str, flag: &str) -> CliResult<f64> {
    text.trim()
        .parse::<f64>()
        .map_err(|_| usage(format!("--{flag}: cannot parse '{text}' as a number")))
}

fn db_to_transmittance(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

fn source_from(v: Option<f64>, lambda: Option<f64>) -> CliResult<EprSource> {
    match (v, lambda) {
        (Some(_), Some(_)) => Err(usage("give either --V or --lambda, not both")),
        (Some(v), None) => EprSource::from_variance(v).map_err(|e| usage(format!("--V: {e}"))),
        (None, Some(l)) => EprSource::from_lambda(l).map_err(|e| usage(format!("--lambda: {e}"))),
        (None, None) => Err(usage("missing source: give --V or --lambda")),
    }
}

/// Builds a scalar channel from the flat parameters; `required` says whether
/// a missing channel is an error or `None`.
fn channel_from(raw: &RawParams, required: bool) -> CliResult<Option<ChannelSpec>> {
    let n_th = raw.nth.unwrap_or(0.0);
    let t = raw.t.as_deref().map(|s| parse_scalar(s, "T")).transpose()?;
    let db = raw.loss_db.as_deref().map(|s| parse_scalar(s, "loss-db")).transpose()?;
    let g = raw.g_channel.as_deref().map(|s| parse_scalar(s, "G")).transpose()?;
    let kind = match raw.channel.as_deref() {
        Some("loss") => Some(ChannelKind::Loss),
        Some("amp") | Some("amplify") => Some(ChannelKind::Amplify),
        Some(other) => return Err(usage(format!("--channel: unknown kind '{other}'"))),
        None => {
            if t.is_some() || db.is_some() {
                Some(ChannelKind::Loss)
            } else if g.is_some() {
                Some(ChannelKind::Amplify)
            } else {
                None
            }
        }
    };
    match kind {
        None => {
            if required {
                Err(usage("missing channel: give --channel loss|amp"))
            } else {
                Ok(None)
            }
        }
        Some(ChannelKind::Loss) => {
            let t = match (t, db) {
                (Some(_), Some(_)) => return Err(usage("give either --T or --loss-db, not both")),
                (Some(t), None) => t,
                (None, Some(db)) => db_to_transmittance(db),
                (None, None) => return Err(usage("lossy channel needs --T or --loss-db")),
            };
            ChannelSpec::loss(t, n_th)
                .map(Some)
                .map_err(|e| usage(format!("--T: {e}")))
        }
        Some(ChannelKind::Amplify) => {
            let g = g.ok_or_else(|| usage("amplifying channel needs --G"))?;
            ChannelSpec::amplify(g, n_th)
                .map(Some)
                .map_err(|e| usage(format!("--G: {e}")))
        }
    }
}

fn build_config(raw: &RawParams, command: &str) -> CliResult<RunConfig> {
    // Reject keys that belong to other commands.
    let allowed = allowed_keys(command);
    for key in raw.keys_present() {
        if !allowed.contains(&key) {
            return Err(usage(format!("unexpected key for {command}: {key}")));
        }
    }

    match command {
        "keyrate" => {
            let channel = channel_from(raw, true)?.expect("required");
            let source = source_from(raw.v, raw.lambda)?;
            let gain = raw.gain.unwrap_or(1.0);
            FilterSpec::new(gain).map_err(|e| usage(format!("--gain: {e}")))?;
            let eta = raw.eta.unwrap_or(0.9);
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(usage(format!("--eta: must lie in (0, 1], got {eta}")));
            }
            Ok(RunConfig::Keyrate { channel, source, gain, eta })
        }
        "boundary" => {
            let eta = raw.eta.unwrap_or(0.9);
            let (kind, params) = match raw.channel.as_deref() {
                Some("amp") | Some("amplify") => {
                    let text = raw
                        .g_channel
                        .as_deref()
                        .ok_or_else(|| usage("amplifying boundary needs --G start:stop:step"))?;
                    (ChannelKind::Amplify, parse_grid(text, "G")?)
                }
                Some("loss") => {
                    let params = match (&raw.t, &raw.loss_db) {
                        (Some(_), Some(_)) => {
                            return Err(usage("give either --T or --loss-db, not both"))
                        }
                        (Some(t), None) => parse_grid(t, "T")?,
                        (None, Some(db)) => parse_grid(db, "loss-db")?
                            .into_iter()
                            .map(db_to_transmittance)
                            .collect(),
                        (None, None) => {
                            return Err(usage("lossy boundary needs --T or --loss-db"))
                        }
                    };
                    (ChannelKind::Loss, params)
                }
                Some(other) => return Err(usage(format!("--channel: unknown kind '{other}'"))),
                None => return Err(usage("missing channel: give --channel loss|amp")),
            };
            for &p in &params {
                kind.spec(p, 0.0).map_err(|e| usage(format!("channel grid: {e}")))?;
            }
            let modes = match raw.mode.as_deref() {
                None => match kind {
                    ChannelKind::Amplify => vec![SearchMode::Standard, SearchMode::Attenuate],
                    ChannelKind::Loss => vec![SearchMode::Standard, SearchMode::Amplify],
                },
                Some(list) => list
                    .split(',')
                    .map(|m| match m.trim() {
                        "standard" => Ok(SearchMode::Standard),
                        "attenuate" => Ok(SearchMode::Attenuate),
                        "amplify" => Ok(SearchMode::Amplify),
                        other => Err(usage(format!("--mode: unknown mode '{other}'"))),
                    })
                    .collect::<CliResult<Vec<_>>>()?,
            };
            let mut config = SearchConfig::defaults(eta);
            if raw.v_min.is_some() || raw.v_max.is_some() || raw.v_points.is_some() {
                config.v_grid = log_spaced(
                    raw.v_min.unwrap_or(1e-2),
                    raw.v_max.unwrap_or(1e2),
                    raw.v_points.unwrap_or(40),
                );
            }
            if raw.gain_min.is_some() || raw.gain_points.is_some() {
                config.attenuation_grid =
                    lin_spaced(raw.gain_min.unwrap_or(0.05), 1.0, raw.gain_points.unwrap_or(40));
            }
            if raw.gain_max.is_some() || raw.gain_points.is_some() {
                config.amplification_grid =
                    lin_spaced(1.0, raw.gain_max.unwrap_or(3.0), raw.gain_points.unwrap_or(40));
            }
            if let Some(tol) = raw.bisect_tol {
                config.bisect_tol = tol;
            }
            if let Some(cap) = raw.noise_cap {
                config.noise_cap = cap;
            }
            if raw.no_refine == Some(true) {
                config.refine = false;
            }
            config.validate().map_err(|e| usage(format!("search config: {e}")))?;
            Ok(RunConfig::Boundary { channel: kind, params, modes, config })
        }
        "montecarlo" => {
            let source = source_from(raw.v, raw.lambda)?;
            let channel = channel_from(raw, false)?;
            let rule = match raw.rule.as_deref() {
                Some("attenuate") => PostSelectionRule::Attenuate {
                    nu: raw.nu.ok_or_else(|| usage("rule attenuate needs --nu"))?,
                },
                Some("cutoff") => PostSelectionRule::AmplifyCutoff {
                    gain: raw.g_filter.ok_or_else(|| usage("rule cutoff needs --g"))?,
                    gamma_max: raw
                        .gm2
                        .ok_or_else(|| usage("rule cutoff needs --gm2 (squared radius)"))?
                        .sqrt(),
                },
                Some("adaptive") => PostSelectionRule::AmplifyAdaptive {
                    gain: raw.g_filter.ok_or_else(|| usage("rule adaptive needs --g"))?,
                },
                Some(other) => return Err(usage(format!("--rule: unknown rule '{other}'"))),
                None => return Err(usage("missing --rule (attenuate|cutoff|adaptive)")),
            };
            rule.validate().map_err(|e| usage(format!("--rule: {e}")))?;
            let n = match raw.n.as_deref() {
                None => 1_000_000,
                Some(text) => {
                    let x = parse_scalar(text, "N")?;
                    if x < 1.0 || x > 1e9 || x.fract() != 0.0 && (x - x.round()).abs() > 1e-6 {
                        return Err(usage(format!("--N: need an integer in [1, 1e9], got {text}")));
                    }
                    x.round() as usize
                }
            };
            Ok(RunConfig::Montecarlo {
                source,
                channel,
                rule,
                n,
                bootstrap: raw.bootstrap.unwrap_or(DEFAULT_BOOTSTRAP),
            })
        }
        "scaling" => {
            let g2 = raw.g2.unwrap_or(1.5);
            if g2 <= 1.0 {
                return Err(usage(format!("--g2: need g^2 > 1, got {g2}")));
            }
            let n_grid = match raw.n_grid.as_deref() {
                None => vec![1_000, 10_000, 100_000, 1_000_000],
                Some(text) => {
                    let vals = parse_grid(text, "Ngrid")?;
                    vals.into_iter()
                        .map(|x| {
                            if x < 1.0 || x > 1e9 {
                                Err(usage(format!("--Ngrid: sizes must lie in [1, 1e9], got {x}")))
                            } else {
                                Ok(x.round() as usize)
                            }
                        })
                        .collect::<CliResult<Vec<_>>>()?
                }
            };
            Ok(RunConfig::Scaling {
                v_b: raw.v_b.unwrap_or(1.0),
                gain: g2.sqrt(),
                n_grid,
                runs: raw.runs.unwrap_or(100),
            })
        }
        "oracle-check" => {
            let lambda = raw.lambda.ok_or_else(|| usage("oracle-check needs --lambda"))?;
            let gain = raw.g_filter.ok_or_else(|| usage("oracle-check needs --g"))?;
            let t = raw
                .t
                .as_deref()
                .map(|s| parse_scalar(s, "T"))
                .transpose()?
                .unwrap_or(1.0);
            Ok(RunConfig::OracleCheck {
                lambda,
                gain,
                t,
                n_cut: raw.ncut.unwrap_or(DEFAULT_N_CUT),
                tol: raw.tol.unwrap_or(1e-6),
            })
        }
        other => Err(usage(format!("unknown command '{other}'"))),
    }
}

fn merge_cli_over_raw(cli: &Cli, mut raw: RawParams) -> CliResult<(String, RawParams)> {
    let cli_command = cli.command.as_ref().map(|c| match c {
        CommandArgs::Keyrate(_) => "keyrate",
        CommandArgs::Boundary(_) => "boundary",
        CommandArgs::Montecarlo(_) => "montecarlo",
        CommandArgs::Scaling(_) => "scaling",
        CommandArgs::OracleCheck(_) => "oracle-check",
    });
    let command = match (cli_command, raw.command.clone()) {
        (Some(c), Some(f)) if c != f => {
            return Err(usage(format!(
                "command mismatch: '{c}' on the command line, '{f}' in the config file"
            )))
        }
        (Some(c), _) => c.to_string(),
        (None, Some(f)) => f,
        (None, None) => return Err(usage("no command given (flags or config file)")),
    };

    match &cli.command {
        None => {}
        Some(CommandArgs::Keyrate(a)) => {
            let scalar = |x: Option<f64>| x.map(|v| v.to_string());
            let src = RawParams {
                channel: a.channel.clone(),
                t: scalar(a.t),
                loss_db: scalar(a.loss_db),
                g_channel: scalar(a.g_channel),
                nth: a.nth,
                v: a.v,
                lambda: a.lambda,
                gain: a.gain,
                eta: a.eta,
                ..RawParams::default()
            };
            overlay!(raw, src, channel, t, loss_db, g_channel, nth, v, lambda, gain, eta);
        }
        Some(CommandArgs::Boundary(a)) => {
            let src = RawParams {
                channel: a.channel.clone(),
                t: a.t.clone(),
                loss_db: a.loss_db.clone(),
                g_channel: a.g_channel.clone(),
                mode: a.mode.clone(),
                eta: a.eta,
                v_min: a.v_min,
                v_max: a.v_max,
                v_points: a.v_points,
                gain_min: a.gain_min,
                gain_max: a.gain_max,
                gain_points: a.gain_points,
                bisect_tol: a.bisect_tol,
                noise_cap: a.noise_cap,
                no_refine: if a.no_refine { Some(true) } else { None },
                ..RawParams::default()
            };
            overlay!(
                raw, src, channel, t, loss_db, g_channel, mode, eta, v_min, v_max, v_points,
                gain_min, gain_max, gain_points, bisect_tol, noise_cap, no_refine
            );
        }
        Some(CommandArgs::Montecarlo(a)) => {
            let scalar = |x: Option<f64>| x.map(|v| v.to_string());
            let src = RawParams {
                lambda: a.lambda,
                v: a.v,
                channel: a.channel.clone(),
                t: scalar(a.t),
                loss_db: scalar(a.loss_db),
                g_channel: scalar(a.g_channel),
                nth: a.nth,
                rule: a.rule.clone(),
                nu: a.nu,
                g_filter: a.g_filter,
                gm2: a.gm2,
                n: a.n.clone(),
                bootstrap: a.bootstrap,
                ..RawParams::default()
            };
            overlay!(
                raw, src, lambda, v, channel, t, loss_db, g_channel, nth, rule, nu, g_filter,
                gm2, n, bootstrap
            );
        }
        Some(CommandArgs::Scaling(a)) => {
            let src = RawParams {
                v_b: a.v_b,
                g2: a.g2,
                runs: a.runs,
                n_grid: a.n_grid.clone(),
                ..RawParams::default()
            };
            overlay!(raw, src, v_b, g2, runs, n_grid);
        }
        Some(CommandArgs::OracleCheck(a)) => {
            let src = RawParams {
                lambda: a.lambda,
                g_filter: a.g_filter,
                t: a.t.map(|v| v.to_string()),
                ncut: a.ncut,
                tol: a.tol,
                ..RawParams::default()
            };
            overlay!(raw, src, lambda, g_filter, t, ncut, tol);
        }
    }
    Ok((command, raw))
}

/// Parses and validates argv (plus an optional config file) into a run
/// description. Usage problems name the offending flag or key.
pub fn parse_and_validate<I, T>(argv: I) -> CliResult<(RunConfig, RunContext)>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            // Render help/version as a "usage" path that exits 0; handled by
            // the caller through the printed text.
            CliError::Usage(format!("__display__{e}"))
        }
        _ => usage(e.to_string()),
    })?;

    let raw_file: RawParams = match &cli.config {
        None => RawParams::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("--config {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| usage(format!("--config {}: {e}", path.display())))?
        }
    };

    let (command, raw) = merge_cli_over_raw(&cli, raw_file)?;

    let seed = match cli.seed.or(raw.seed) {
        Some(s) => s,
        None => match std::env::var("GQ_SEED") {
            Ok(text) => text
                .parse::<u64>()
                .map_err(|_| usage(format!("GQ_SEED: cannot parse '{text}' as u64")))?,
            Err(_) => DEFAULT_SEED,
        },
    };
    let out = cli.out.clone().or_else(|| raw.out.clone().map(PathBuf::from));
    let threads = cli.threads.or(raw.threads);
    let format = match (&cli.format, raw.format.as_deref()) {
        (Some(f), _) => *f,
        (None, Some("json")) => OutputFormat::Json,
        (None, Some("csv")) => OutputFormat::Csv,
        (None, Some(other)) => return Err(usage(format!("format: unknown format '{other}'"))),
        (None, None) => {
            if command == "boundary" {
                OutputFormat::Csv
            } else {
                OutputFormat::Json
            }
        }
    };
    if format == OutputFormat::Csv && command != "boundary" {
        return Err(usage(format!("--format csv is only available for boundary, not {command}")));
    }

    let config = build_config(&raw, &command)?;
    Ok((config, RunContext { seed, out, format, threads }))
}

#[derive(Serialize)]
struct KeyrateOutput {
    meta: RunMeta,
    cm_after_channel: StandardFormCm,
    cm_after_filter: StandardFormCm,
    report: KeyRateReport,
}

#[derive(Serialize)]
struct MonteCarloOutput {
    meta: RunMeta,
    cm_sampled: StandardFormCm,
    summary: MonteCarloSummary,
}

#[derive(Serialize)]
struct ScalingOutput {
    meta: RunMeta,
    fit: ScalingFit,
    sublinearity_p_value: f64,
    kappa_ci95_half_width: f64,
}

#[derive(Serialize)]
struct OracleOutput {
    meta: RunMeta,
    report: crate::fock::OracleCheckReport,
    tol: f64,
    pass: bool,
}

#[derive(Serialize)]
struct BoundaryJsonOutput {
    meta: RunMeta,
    scan: ScanMetadata,
    rows: Vec<crate::boundary::BoundaryRow>,
}

/// Atomic write: temp file in the target directory, then rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or_else(|| Path::new(".")))
        .map_err(|e| CliError::Computation(format!("cannot create temp file: {e}")))?;
    tmp.write_all(bytes)
        .map_err(|e| CliError::Computation(format!("cannot write output: {e}")))?;
    tmp.persist(path)
        .map_err(|e| CliError::Computation(format!("cannot move output into place: {e}")))?;
    Ok(())
}

fn emit(ctx: &RunContext, bytes: &[u8]) -> CliResult<()> {
    match &ctx.out {
        Some(path) => write_atomic(path, bytes),
        None => {
            std::io::stdout()
                .write_all(bytes)
                .map_err(|e| CliError::Computation(format!("stdout: {e}")))?;
            Ok(())
        }
    }
}

fn to_pretty_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable output");
    text.push('\n');
    text.into_bytes()
}

/// Executes a validated run. Outputs go to `ctx.out` (atomically) or stdout;
/// the metadata block goes to stderr.
pub fn run(config: &RunConfig, ctx: &RunContext) -> CliResult<()> {
    if let Some(threads) = ctx.threads {
        // Build the global pool once; later runs in the same process keep
        // the first configuration, which never changes results.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let meta = RunMeta::new(config, ctx);
    eprintln!(
        "{}",
        serde_json::json!({
            "version": meta.version,
            "seed": meta.seed,
            "config_hash": meta.config_hash,
            "command": config.command_name(),
        })
    );

    match config {
        RunConfig::Keyrate { channel, source, gain, eta } => {
            let cm_after_channel = channel.apply(source.cm())?;
            let cm_after_filter = if *gain == 1.0 {
                cm_after_channel
            } else {
                cm_after_channel.apply_filter(FilterSpec { gain: *gain })?
            };
            let report = key_rate(&cm_after_filter, *eta)?;
            emit(ctx, &to_pretty_json(&KeyrateOutput {
                meta,
                cm_after_channel,
                cm_after_filter,
                report,
            }))
        }
        RunConfig::Boundary { channel, params, modes, config: search } => {
            let rows = scan_boundary(*channel, params, search, modes)?;
            let scan = ScanMetadata::new(*channel, params, modes, search);
            match ctx.format {
                OutputFormat::Csv => {
                    let csv = rows_to_csv(&rows);
                    emit(ctx, csv.as_bytes())?;
                    // Provenance sidecar next to the CSV; embedded instead
                    // when printing to stdout would mix formats.
                    if let Some(out) = &ctx.out {
                        let mut sidecar = out.as_os_str().to_owned();
                        sidecar.push(".meta.json");
                        write_atomic(
                            Path::new(&sidecar),
                            &to_pretty_json(&BoundaryJsonOutput { meta, scan, rows }),
                        )?;
                    }
                    Ok(())
                }
                OutputFormat::Json => {
                    emit(ctx, &to_pretty_json(&BoundaryJsonOutput { meta, scan, rows }))
                }
            }
        }
        RunConfig::Montecarlo { source, channel, rule, n, bootstrap } => {
            let cm = match channel {
                Some(ch) => ch.apply(source.cm())?,
                None => source.cm(),
            };
            let batch = sample_pairs(&cm, *n, ctx.seed)?;
            // Decisions draw from an independent stream; derive its seed
            // from the run seed so one --seed pins the whole run.
            let accept_seed = ctx.seed.wrapping_add(0x9e3779b97f4a7c15);
            let accepted = apply_rule(&batch, *rule, accept_seed)?;
            let summary = summarize(&batch, &accepted, *bootstrap)?;
            emit(ctx, &to_pretty_json(&MonteCarloOutput { meta, cm_sampled: cm, summary }))
        }
        RunConfig::Scaling { v_b, gain, n_grid, runs } => {
            let fit = fit_scaling_exponent(*v_b, *gain, n_grid, *runs, ctx.seed)?;
            let out = ScalingOutput {
                meta,
                sublinearity_p_value: fit.sublinearity_p_value(),
                kappa_ci95_half_width: fit.ci95_half_width(),
                fit,
            };
            emit(ctx, &to_pretty_json(&out))
        }
        RunConfig::OracleCheck { lambda, gain, t, n_cut, tol } => {
            let report = oracle_check(*lambda, *gain, *t, *n_cut)?;
            let pass = report.max_abs_deviation < *tol;
            let bytes = to_pretty_json(&OracleOutput { meta, report, tol: *tol, pass });
            emit(ctx, &bytes)?;
            if pass {
                Ok(())
            } else {
                Err(CliError::Computation(format!(
                    "oracle deviation exceeds tolerance {tol}"
                )))
            }
        }
    }
}

/// Entry point for the binary: parse, run, map errors to exit codes.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match parse_and_validate(argv) {
        Ok((config, ctx)) => match run(&config, &ctx) {
            Ok(()) => 0,
            Err(CliError::Computation(msg)) => {
                eprintln!(
                    "{}",
                    serde_json::json!({ "error": "computation", "message": msg })
                );
                1
            }
            Err(CliError::Usage(msg)) => {
                eprintln!("{msg}");
                2
            }
        },
        Err(CliError::Usage(msg)) => {
            if let Some(text) = msg.strip_prefix("__display__") {
                print!("{text}");
                0
            } else {
                eprintln!("{msg}");
                2
            }
        }
        Err(CliError::Computation(msg)) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": "computation", "message": msg })
            );
            1
        }
    }
}

/// Process entry used by `src/main.rs`.
pub fn cli_main() -> i32 {
    main_with_args(std::env::args_os())
}
