//! Accuracy and latency sources for sampled architectures.
//!
//! Accuracy comes from the deterministic [`surrogate_accuracy`] landscape or
//! from an external process speaking a newline-delimited JSON protocol.
//! Latency comes from a [`LatencyModel`] unless the external process reports
//! its own measurement.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ConvOp, NetworkArch, SkipOp};
use crate::cost::{arch_macs, CostError, LatencyModel};

/// Version tag sent in every external request.
pub const PROTOCOL_VERSION: u32 = 1;
/// Default wall-clock limit for one external evaluation.
pub const DEFAULT_EXTERNAL_TIMEOUT: Duration = Duration::from_secs(3600);
/// 5x5 depthwise layers beyond this count earn no further receptive-field bonus.
pub const RECEPTIVE_BONUS_CAP: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("external evaluator failed ({status}): {stderr}")]
    ExternalFailure { status: String, stderr: String },
    #[error("external evaluator protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("external evaluator timed out after {0:?}")]
    Timeout(Duration),
    #[error("external evaluator i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    /// MAC count at which the capacity term reaches 0.5.
    pub capacity_half_point: f64,
    /// Added per 5x5 depthwise layer, up to [`RECEPTIVE_BONUS_CAP`] layers.
    pub receptive_bonus: f64,
    /// Full bonus when every block uses a different layer type.
    pub diversity_bonus: f64,
    /// Added per layer that carries a skip path.
    pub skip_bonus: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            capacity_half_point: 300e6,
            receptive_bonus: 0.004,
            diversity_bonus: 0.02,
            skip_bonus: 0.002,
            noise_std: 0.005,
            seed: 0,
        }
    }
}

impl SurrogateConfig {
    pub fn check(&self) -> Result<(), String> {
        let nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !(self.capacity_half_point.is_finite() && self.capacity_half_point > 0.0) {
            return Err("capacity_half_point must be positive".into());
        }
        if !(nonneg(self.receptive_bonus)
            && nonneg(self.diversity_bonus)
            && nonneg(self.skip_bonus)
            && nonneg(self.noise_std))
        {
            return Err("surrogate bonuses and noise_std must be >= 0".into());
        }
        Ok(())
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn conv_code(op: ConvOp) -> u64 {
    match op {
        ConvOp::Regular => 1,
        ConvOp::DepthwiseSep => 2,
        ConvOp::MbConv { expansion } => 3 + ((expansion as u64) << 8),
    }
}

/// Hash of (seed, arch descriptor) folded through splitmix64.
fn arch_hash(arch: &NetworkArch, seed: u64) -> u64 {
    let mut state = seed;
    let mut h = splitmix64(&mut state);
    let mut mix = |v: u64| {
        state ^= v.wrapping_add(h);
        h = splitmix64(&mut state);
    };
    mix(arch.input_resolution as u64);
    mix(arch.stem_filters as u64);
    for b in &arch.blocks {
        mix(conv_code(b.layer.conv_op));
        mix(b.layer.kernel as u64);
        mix(b.layer.skip_op as u64);
        mix(b.layer.filters as u64);
        mix(b.repeats as u64);
        mix(b.stride as u64);
    }
    h
}

/// Standard-normal-ish draw keyed by the arch, via the sum of twelve
/// uniforms. Only IEEE additions are involved, so results are identical on
/// every platform.
fn keyed_normal(arch: &NetworkArch, seed: u64) -> f64 {
    let mut state = arch_hash(arch, seed);
    let mut sum = 0.0;
    for _ in 0..12 {
        sum += (splitmix64(&mut state) >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    }
    sum - 6.0
}

/// Synthetic accuracy: a saturating capacity curve in MACs plus bonuses for
/// 5x5 depthwise kernels, layer diversity, and skip paths, plus keyed noise.
pub fn surrogate_accuracy(arch: &NetworkArch, cfg: &SurrogateConfig) -> f64 {
    let macs = arch_macs(arch) as f64;
    let capacity = macs / (macs + cfg.capacity_half_point);

    let wide_depthwise = arch
        .layers
        .iter()
        .filter(|l| l.spec.kernel == 5 && l.spec.conv_op.is_depthwise())
        .count()
        .min(RECEPTIVE_BONUS_CAP);

    let mut kinds = HashSet::new();
    for b in &arch.blocks {
        kinds.insert((b.layer.conv_op, b.layer.kernel, b.layer.skip_op));
    }
    let diversity = if arch.blocks.len() > 1 {
        (kinds.len() - 1) as f64 / (arch.blocks.len() - 1) as f64
    } else {
        0.0
    };

    let skips = arch
        .layers
        .iter()
        .filter(|l| l.spec.skip_op != SkipOp::NoSkip)
        .count();

    let noise = if cfg.noise_std > 0.0 {
        cfg.noise_std * keyed_normal(arch, cfg.seed)
    } else {
        0.0
    };

    (capacity
        + cfg.receptive_bonus * wide_depthwise as f64
        + cfg.diversity_bonus * diversity
        + cfg.skip_bonus * skips as f64
        + noise)
        .clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Surrogate,
    Profile,
    External,
}

/// Where each half of an evaluation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sources {
    pub accuracy: Source,
    pub latency: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub arch_id: String,
    pub accuracy: f64,
    pub latency_ms: f64,
    pub source: Sources,
    pub macs: u64,
    pub params: u64,
    /// Only recorded for external evaluations; pure sources stay reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

/// One request line sent to an external evaluator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalRequest {
    pub protocol: u32,
    pub arch_id: String,
    pub tokens: Vec<usize>,
    pub arch: NetworkArch,
}

/// The single reply line expected back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalResponse {
    pub arch_id: String,
    pub accuracy: f64,
    #[serde(default)]
    pub latency_ms: Option<f64>,
}

/// Runs `sh -c <command>` once per request: one JSON line in on stdin, one
/// JSON line out on stdout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalEvaluator {
    pub command: String,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        if !(secs.is_finite() && secs > 0.0) {
            return Err(serde::de::Error::custom("timeout must be positive"));
        }
        Ok(Duration::from_secs_f64(secs))
    }
}

impl ExternalEvaluator {
    pub fn new(command: impl Into<String>) -> Self {
        ExternalEvaluator {
            command: command.into(),
            timeout: DEFAULT_EXTERNAL_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Sends one request and validates the reply.
    pub fn roundtrip(&self, request: &ExternalRequest) -> Result<ExternalResponse, EvalError> {
        let io = |e: std::io::Error| EvalError::Io(e.to_string());
        let deadline = Instant::now() + self.timeout;
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(io)?;

        let mut line = serde_json::to_string(request).expect("request serializes");
        line.push('\n');
        if let Some(mut stdin) = child.stdin.take() {
            // A child that exits without reading is reported through its status.
            let _ = stdin.write_all(line.as_bytes());
        }

        let stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            let mut first = String::new();
            let res = reader.read_line(&mut first).map(|_| first);
            let _ = tx.send(res);
            let _ = std::io::copy(&mut reader, &mut std::io::sink());
        });
        let stderr_handle = thread::spawn(move || {
            let mut s = String::new();
            let _ = stderr.read_to_string(&mut s);
            s
        });

        let remaining = deadline.saturating_duration_since(Instant::now());
        let reply = match rx.recv_timeout(remaining) {
            Ok(r) => r.map_err(io)?,
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(EvalError::Timeout(self.timeout));
            }
        };

        let status = loop {
            if let Some(status) = child.try_wait().map_err(io)? {
                break status;
            }
            if Instant::now() >= deadline {
                let _ = child.kill();
                let _ = child.wait();
                return Err(EvalError::Timeout(self.timeout));
            }
            thread::sleep(Duration::from_millis(2));
        };
        let stderr_text = stderr_handle.join().unwrap_or_default();
        if !status.success() {
            return Err(EvalError::ExternalFailure {
                status: status.to_string(),
                stderr: stderr_text,
            });
        }

        let response: ExternalResponse = serde_json::from_str(reply.trim())
            .map_err(|e| EvalError::ProtocolViolation(format!("malformed reply {:?}: {e}", reply.trim())))?;
        if response.arch_id != request.arch_id {
            return Err(EvalError::ProtocolViolation(format!(
                "reply for {:?} answers request {:?}",
                response.arch_id, request.arch_id
            )));
        }
        if !(0.0..=1.0).contains(&response.accuracy) {
            return Err(EvalError::ProtocolViolation(format!(
                "accuracy {} outside [0, 1]",
                response.accuracy
            )));
        }
        if let Some(lat) = response.latency_ms {
            if !(lat.is_finite() && lat > 0.0) {
                return Err(EvalError::ProtocolViolation(format!("latency_ms {lat} must be positive")));
            }
        }
        Ok(response)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracySource {
    Surrogate(SurrogateConfig),
    External(ExternalEvaluator),
}

/// Combines an accuracy source with a latency model.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub accuracy: AccuracySource,
    pub latency: LatencyModel,
}

impl Evaluator {
    pub fn new(accuracy: AccuracySource, latency: LatencyModel) -> Self {
        Evaluator { accuracy, latency }
    }

    /// True when results depend only on the arch, so they can be cached and
    /// computed in any order.
    pub fn is_pure(&self) -> bool {
        matches!(self.accuracy, AccuracySource::Surrogate(_))
    }

    pub fn evaluate(&self, arch: &NetworkArch, tokens: &[usize]) -> Result<Evaluation, EvalError> {
        let arch_id = crate::codec::arch_id(tokens);
        let costs = self.latency.estimate(arch);
        match &self.accuracy {
            AccuracySource::Surrogate(cfg) => {
                let costs = costs?;
                Ok(Evaluation {
                    arch_id,
                    accuracy: surrogate_accuracy(arch, cfg),
                    latency_ms: costs.total_latency_ms,
                    source: Sources {
                        accuracy: Source::Surrogate,
                        latency: Source::Profile,
                    },
                    macs: costs.total_macs,
                    params: costs.total_params,
                    wall_time_ms: None,
                })
            }
            AccuracySource::External(ext) => {
                let started = Instant::now();
                let response = ext.roundtrip(&ExternalRequest {
                    protocol: PROTOCOL_VERSION,
                    arch_id: arch_id.clone(),
                    tokens: tokens.to_vec(),
                    arch: arch.clone(),
                })?;
                let wall_time_ms = started.elapsed().as_secs_f64() * 1e3;
                let (latency_ms, latency_source, macs, params) = match (response.latency_ms, costs) {
                    (Some(lat), Ok(c)) => (lat, Source::External, c.total_macs, c.total_params),
                    (Some(lat), Err(_)) => (
                        lat,
                        Source::External,
                        arch_macs(arch),
                        crate::cost::arch_params(arch),
                    ),
                    (None, costs) => {
                        let c = costs?;
                        (c.total_latency_ms, Source::Profile, c.total_macs, c.total_params)
                    }
                };
                Ok(Evaluation {
                    arch_id,
                    accuracy: response.accuracy,
                    latency_ms,
                    source: Sources {
                        accuracy: Source::External,
                        latency: latency_source,
                    },
                    macs,
                    params,
                    wall_time_ms: Some(wall_time_ms),
                })
            }
        }
    }
}
