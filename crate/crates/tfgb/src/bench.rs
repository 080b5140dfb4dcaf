//! Benchmark drivers.
//!
//! Three benchmarks run over the same phased loop: point-to-point latency
//! (serial echo), point-to-point bandwidth (serial put/ack), and
//! parameter-server throughput (every worker round-robins puts or gets over
//! every server). A repeat executes RPCs continuously for
//! `warmup + duration` seconds on the wall clock; only RPCs *started* inside
//! the measurement window are recorded, and the last RPC started before the
//! deadline completes and counts. The payload is generated once per run from
//! the configuration, so two runs with the same config and seed transmit
//! byte-identical content (captured as a SHA-256 hash in the results).

use crate::monitor::{start_monitor, ResourceSeries, DEFAULT_INTERVAL_MS};
use crate::rpc::{
    connect_with_counters, Connection, Endpoint, NetCounters, RpcError, Transport, DEFAULT_PORT,
};
use crate::wire::{Mode, MsgType};
use crate::workload::{
    generate_random, generate_skew, generate_uniform, materialize, BufferCategory,
    BufferSizeConfig, CategorySet, Payload, PayloadSpec, Scheme, WorkloadError,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};
use thiserror::Error;

/// Which benchmark to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkKind {
    Latency,
    Bandwidth,
    Throughput,
}

impl fmt::Display for BenchmarkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchmarkKind::Latency => "latency",
            BenchmarkKind::Bandwidth => "bandwidth",
            BenchmarkKind::Throughput => "throughput",
        })
    }
}

impl FromStr for BenchmarkKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "latency" => Ok(BenchmarkKind::Latency),
            "bandwidth" => Ok(BenchmarkKind::Bandwidth),
            "throughput" => Ok(BenchmarkKind::Throughput),
            other => Err(format!(
                "unknown benchmark '{other}' (expected latency, bandwidth, or throughput)"
            )),
        }
    }
}

/// Throughput RPC direction: push sends updates (PUT), pull fetches (GET).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Push,
    Pull,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Push => "push",
            Direction::Pull => "pull",
        })
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "push" => Ok(Direction::Push),
            "pull" => Ok(Direction::Pull),
            other => Err(format!(
                "unknown direction '{other}' (expected push or pull)"
            )),
        }
    }
}

/// Full benchmark configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub benchmark: BenchmarkKind,
    pub ps_endpoints: Vec<Endpoint>,
    pub num_ps: usize,
    pub num_workers: usize,
    pub mode: Mode,
    pub scheme: Scheme,
    pub iovec_count: usize,
    pub sizes: BufferSizeConfig,
    pub categories: CategorySet,
    pub bias: BufferCategory,
    pub warmup_secs: f64,
    pub duration_secs: f64,
    pub seed: u64,
    pub repeats: usize,
    pub direction: Direction,
    pub monitor_interval_ms: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            benchmark: BenchmarkKind::Latency,
            ps_endpoints: vec![Endpoint::new("localhost", DEFAULT_PORT).unwrap()],
            num_ps: 1,
            num_workers: 1,
            mode: Mode::NonSerialized,
            scheme: Scheme::Uniform,
            iovec_count: 10,
            sizes: BufferSizeConfig::default(),
            categories: CategorySet::ALL,
            bias: BufferCategory::Large,
            warmup_secs: 2.0,
            duration_secs: 10.0,
            seed: 42,
            repeats: 1,
            direction: Direction::Push,
            monitor_interval_ms: DEFAULT_INTERVAL_MS,
        }
    }
}

impl BenchConfig {
    /// Generate this configuration's payload specification.
    pub fn payload_spec(&self) -> Result<PayloadSpec, BenchError> {
        let spec = match self.scheme {
            Scheme::Uniform => {
                generate_uniform(self.categories, self.iovec_count, &self.sizes, self.seed)?
            }
            Scheme::Random => {
                generate_random(self.categories, self.iovec_count, &self.sizes, self.seed)?
            }
            Scheme::Skew => generate_skew(
                self.categories,
                self.iovec_count,
                &self.sizes,
                self.bias,
                self.seed,
            )?,
            Scheme::Custom => {
                return Err(BenchError::InvalidConfig(
                    "the custom scheme requires an explicit payload spec".to_string(),
                ))
            }
        };
        Ok(spec)
    }
}

/// Errors from benchmark execution.
#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Rpc(#[from] RpcError),
    #[error(transparent)]
    Monitor(#[from] crate::monitor::MonitorError),
    #[error("invalid benchmark configuration: {0}")]
    InvalidConfig(String),
    #[error("no RPC completed inside the measurement window")]
    NoSamples,
    #[error("cannot compute statistics over an empty sample set")]
    EmptyStats,
    #[error("echoed payload differs from the sent payload (repeat {repeat})")]
    EchoMismatch { repeat: usize },
    #[error("pulled payload shape differs from the configured spec (repeat {repeat})")]
    PullMismatch { repeat: usize },
    #[error("all {0} repeats failed")]
    NoSuccessfulRepeats(usize),
    #[error("cannot aggregate results of different benchmark kinds")]
    MixedMetricKinds,
}

/// Latency distribution of one repeat, microseconds, nearest-rank
/// percentiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: u64,
    pub mean_us: f64,
    pub min_us: f64,
    pub max_us: f64,
    pub p50_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
}

/// Bandwidth accounting of one repeat. `content_bytes` counts payload
/// content only (headers and length prefixes excluded);
/// `mbytes_per_sec = content_bytes / duration_secs / 2^20`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthResult {
    pub rpc_count: u64,
    pub content_bytes: u64,
    pub duration_secs: f64,
    pub mbytes_per_sec: f64,
}

/// One worker's throughput contribution in one repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerThroughput {
    pub rpc_count: u64,
    pub per_ps_counts: Vec<u64>,
    pub duration_secs: f64,
}

/// Cluster-wide throughput of one repeat, merged across workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputResult {
    pub per_worker_counts: Vec<u64>,
    /// `per_ps_counts[w][p]` = RPCs worker `w` completed against server `p`.
    pub per_ps_counts: Vec<Vec<u64>>,
    /// Mean of the workers' measured durations.
    pub duration_secs: f64,
    /// Total RPCs across workers divided by `duration_secs`.
    pub aggregate_rpcs_per_sec: f64,
}

/// Worker-level metrics of one repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RepeatMetrics {
    Latency(LatencyStats),
    Bandwidth(BandwidthResult),
    Throughput(WorkerThroughput),
}

/// Timing and accounting envelope of one repeat's measurement window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureWindow {
    /// Wall offset of the warmup/measure boundary, ms from repeat start.
    pub warmup_end_ms: f64,
    /// Wall offset at loop exit (after the last counted RPC completed).
    pub wall_ms: f64,
    /// Measurement-phase duration: `(wall_ms - warmup_end_ms) / 1000`.
    pub measured_secs: f64,
    /// Start offset of the first recorded RPC, if any.
    pub first_sample_ms: Option<f64>,
    /// Start offset of the last recorded RPC, if any.
    pub last_sample_ms: Option<f64>,
    /// Transport bytes written during the measurement phase.
    pub net_tx_measure_bytes: u64,
    /// Transport bytes read during the measurement phase.
    pub net_rx_measure_bytes: u64,
}

/// Outcome of one repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RepeatOutcome {
    Success {
        metrics: RepeatMetrics,
        window: MeasureWindow,
    },
    Failure {
        error: String,
    },
}

impl RepeatOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, RepeatOutcome::Success { .. })
    }
}

/// One repeat's record: outcome plus the resource series sampled during it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatRecord {
    pub repeat: usize,
    pub outcome: RepeatOutcome,
    pub resources: ResourceSeries,
}

/// Everything one worker process produces for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerRunOutput {
    pub worker_id: usize,
    pub config: BenchConfig,
    pub spec: PayloadSpec,
    /// SHA-256 (hex) of the payload content this worker transmits each RPC.
    pub content_hash: String,
    pub repeats: Vec<RepeatRecord>,
}

impl WorkerRunOutput {
    pub fn all_succeeded(&self) -> bool {
        self.repeats.iter().all(|r| r.outcome.is_success())
    }
}

/// SHA-256 of the payload's concatenated buffer contents, lowercase hex.
pub fn content_hash_hex(payload: &Payload) -> String {
    let mut hasher = Sha256::new();
    for buf in payload.buffers() {
        hasher.update(buf);
    }
    hasher
        .finalize()
        .iter()
        .fold(String::with_capacity(64), |mut acc, byte| {
            use fmt::Write;
            let _ = write!(acc, "{byte:02x}");
            acc
        })
}

/// Nearest-rank latency statistics over microsecond samples.
pub fn compute_stats(samples_us: &[f64]) -> Result<LatencyStats, BenchError> {
    if samples_us.is_empty() {
        return Err(BenchError::EmptyStats);
    }
    let mut sorted = samples_us.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = |p: u64| -> f64 {
        // ceil(p/100 * n)-th smallest, 1-based.
        let idx = (p * n as u64).div_ceil(100) as usize;
        sorted[idx - 1]
    };
    Ok(LatencyStats {
        count: n as u64,
        mean_us: sorted.iter().sum::<f64>() / n as f64,
        min_us: sorted[0],
        max_us: sorted[n - 1],
        p50_us: rank(50),
        p90_us: rank(90),
        p99_us: rank(99),
    })
}

/// Run all repeats of the configured benchmark as worker `worker_id`,
/// connecting to every endpoint in `cfg.ps_endpoints`.
pub fn run_worker(
    cfg: &BenchConfig,
    worker_id: usize,
    transport: &dyn Transport,
) -> Result<WorkerRunOutput, BenchError> {
    match cfg.benchmark {
        BenchmarkKind::Latency | BenchmarkKind::Bandwidth => {
            if cfg.ps_endpoints.len() != 1 {
                return Err(BenchError::InvalidConfig(format!(
                    "{} requires exactly one parameter server, got {}",
                    cfg.benchmark,
                    cfg.ps_endpoints.len()
                )));
            }
        }
        BenchmarkKind::Throughput => {
            if cfg.ps_endpoints.is_empty() {
                return Err(BenchError::InvalidConfig(
                    "throughput requires at least one parameter server".to_string(),
                ));
            }
        }
    }
    if cfg.repeats == 0 {
        return Err(BenchError::InvalidConfig(
            "repeats must be at least 1".to_string(),
        ));
    }
    if cfg.duration_secs <= 0.0 {
        return Err(BenchError::InvalidConfig(
            "duration must be positive".to_string(),
        ));
    }
    if cfg.warmup_secs < 0.0 {
        return Err(BenchError::InvalidConfig(
            "warmup must be non-negative".to_string(),
        ));
    }

    let spec = cfg.payload_spec()?;
    let payload = materialize(&spec);
    let content_hash = content_hash_hex(&payload);
    let counters = NetCounters::new();
    let mut conns = connect_all(cfg, transport, &counters)?;

    let mut repeats = Vec::with_capacity(cfg.repeats);
    for repeat in 0..cfg.repeats {
        let session = start_monitor(cfg.monitor_interval_ms, counters.clone())?;
        let result = run_repeat(cfg, repeat, &mut conns, &payload, &counters);
        let resources = session.stop(Duration::from_secs_f64(cfg.warmup_secs));
        match result {
            Ok((metrics, window)) => repeats.push(RepeatRecord {
                repeat,
                outcome: RepeatOutcome::Success { metrics, window },
                resources,
            }),
            // Integrity failures invalidate the whole run.
            Err(err @ (BenchError::EchoMismatch { .. } | BenchError::PullMismatch { .. })) => {
                return Err(err)
            }
            Err(err) => {
                repeats.push(RepeatRecord {
                    repeat,
                    outcome: RepeatOutcome::Failure {
                        error: err.to_string(),
                    },
                    resources,
                });
                // The failed repeat may have broken a connection; try to
                // re-establish before the next one.
                if repeat + 1 < cfg.repeats {
                    if let Ok(fresh) = connect_all(cfg, transport, &counters) {
                        conns = fresh;
                    }
                }
            }
        }
    }

    Ok(WorkerRunOutput {
        worker_id,
        config: cfg.clone(),
        spec,
        content_hash,
        repeats,
    })
}

fn connect_all(
    cfg: &BenchConfig,
    transport: &dyn Transport,
    counters: &NetCounters,
) -> Result<Vec<Connection>, BenchError> {
    cfg.ps_endpoints
        .iter()
        .map(|endpoint| {
            Ok(connect_with_counters(
                transport,
                endpoint,
                counters.clone(),
            )?)
        })
        .collect()
}

fn run_repeat(
    cfg: &BenchConfig,
    repeat: usize,
    conns: &mut [Connection],
    payload: &Payload,
    counters: &NetCounters,
) -> Result<(RepeatMetrics, MeasureWindow), BenchError> {
    let warmup = Duration::from_secs_f64(cfg.warmup_secs);
    let total = warmup + Duration::from_secs_f64(cfg.duration_secs);

    let mut rtt_samples_us: Vec<f64> = Vec::new();
    let mut per_ps = vec![0u64; conns.len()];
    let mut rpc_count = 0u64;
    let mut rr_index = 0usize;
    let mut first_sample_ms = None;
    let mut last_sample_ms = None;
    let mut measure_started = false;
    let mut tx0 = 0u64;
    let mut rx0 = 0u64;

    let t0 = Instant::now();
    let exit_offset = loop {
        let now = t0.elapsed();
        if now >= total {
            break now;
        }
        let in_measure = now >= warmup;
        if in_measure && !measure_started {
            // Counter snapshot between calls: the serial loop guarantees
            // nothing is in flight right now.
            measure_started = true;
            tx0 = counters.tx_bytes();
            rx0 = counters.rx_bytes();
        }

        let conn_idx = match cfg.benchmark {
            BenchmarkKind::Throughput => {
                let idx = rr_index % conns.len();
                rr_index += 1;
                idx
            }
            _ => 0,
        };
        let (msg_type, sent) = match (cfg.benchmark, cfg.direction) {
            (BenchmarkKind::Latency, _) => (MsgType::EchoReq, Some(payload)),
            (BenchmarkKind::Bandwidth, _) => (MsgType::PutReq, Some(payload)),
            (BenchmarkKind::Throughput, Direction::Push) => (MsgType::PutReq, Some(payload)),
            (BenchmarkKind::Throughput, Direction::Pull) => (MsgType::GetReq, None),
        };
        let outcome = conns[conn_idx].call(msg_type, sent, cfg.mode)?;

        match cfg.benchmark {
            BenchmarkKind::Latency => {
                if outcome.buffers != payload.buffers() {
                    return Err(BenchError::EchoMismatch { repeat });
                }
            }
            BenchmarkKind::Throughput if cfg.direction == Direction::Pull => {
                // Shape check only; full content equality would burn worker
                // CPU inside the measured loop.
                let shapes_match = outcome.buffers.len() == payload.buffers().len()
                    && outcome
                        .buffers
                        .iter()
                        .zip(payload.buffers())
                        .all(|(got, want)| got.len() == want.len());
                if !shapes_match {
                    return Err(BenchError::PullMismatch { repeat });
                }
            }
            _ => {}
        }

        if in_measure {
            let start_ms = now.as_secs_f64() * 1e3;
            first_sample_ms.get_or_insert(start_ms);
            last_sample_ms = Some(start_ms);
            rpc_count += 1;
            per_ps[conn_idx] += 1;
            if cfg.benchmark == BenchmarkKind::Latency {
                rtt_samples_us.push(outcome.elapsed_ns as f64 / 1e3);
            }
        }
    };

    if rpc_count == 0 {
        return Err(BenchError::NoSamples);
    }
    let (tx1, rx1) = if measure_started {
        (counters.tx_bytes(), counters.rx_bytes())
    } else {
        (tx0, rx0)
    };

    let warmup_end_ms = warmup.as_secs_f64() * 1e3;
    let wall_ms = exit_offset.as_secs_f64() * 1e3;
    let measured_secs = (wall_ms - warmup_end_ms) / 1e3;
    if measured_secs <= 0.0 {
        return Err(BenchError::NoSamples);
    }
    let window = MeasureWindow {
        warmup_end_ms,
        wall_ms,
        measured_secs,
        first_sample_ms,
        last_sample_ms,
        net_tx_measure_bytes: tx1 - tx0,
        net_rx_measure_bytes: rx1 - rx0,
    };

    let metrics = match cfg.benchmark {
        BenchmarkKind::Latency => RepeatMetrics::Latency(compute_stats(&rtt_samples_us)?),
        BenchmarkKind::Bandwidth => {
            let content_bytes = rpc_count * payload.content_bytes();
            RepeatMetrics::Bandwidth(BandwidthResult {
                rpc_count,
                content_bytes,
                duration_secs: measured_secs,
                mbytes_per_sec: content_bytes as f64 / measured_secs / (1u64 << 20) as f64,
            })
        }
        BenchmarkKind::Throughput => RepeatMetrics::Throughput(WorkerThroughput {
            rpc_count,
            per_ps_counts: per_ps,
            duration_secs: measured_secs,
        }),
    };
    Ok((metrics, window))
}

/// Merge one repeat's worker contributions into the cluster-wide result.
pub fn merge_throughput(workers: &[WorkerThroughput]) -> ThroughputResult {
    let per_worker_counts: Vec<u64> = workers.iter().map(|w| w.rpc_count).collect();
    let per_ps_counts: Vec<Vec<u64>> = workers.iter().map(|w| w.per_ps_counts.clone()).collect();
    let total: u64 = per_worker_counts.iter().sum();
    let duration_secs = workers.iter().map(|w| w.duration_secs).sum::<f64>() / workers.len() as f64;
    ThroughputResult {
        per_worker_counts,
        per_ps_counts,
        duration_secs,
        aggregate_rpcs_per_sec: total as f64 / duration_secs,
    }
}

/// Cluster-level metrics of one repeat (workers already merged).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MergedMetrics {
    Latency(LatencyStats),
    Bandwidth(BandwidthResult),
    Throughput(ThroughputResult),
}

/// Arithmetic means of every numeric metric over the successful repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AveragedMetrics {
    Latency {
        count: f64,
        mean_us: f64,
        min_us: f64,
        max_us: f64,
        p50_us: f64,
        p90_us: f64,
        p99_us: f64,
    },
    Bandwidth {
        rpc_count: f64,
        content_bytes: f64,
        duration_secs: f64,
        mbytes_per_sec: f64,
    },
    Throughput {
        total_rpcs: f64,
        duration_secs: f64,
        aggregate_rpcs_per_sec: f64,
    },
}

/// Averages plus the success/failure split they were computed over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedResult {
    pub successful_repeats: usize,
    pub failed_repeats: usize,
    pub metrics: AveragedMetrics,
}

/// Average the per-repeat metrics, excluding (but counting) failed repeats.
pub fn aggregate_runs(results: &[Option<MergedMetrics>]) -> Result<AveragedResult, BenchError> {
    let successes: Vec<&MergedMetrics> = results.iter().flatten().collect();
    if successes.is_empty() {
        return Err(BenchError::NoSuccessfulRepeats(results.len()));
    }
    let n = successes.len() as f64;
    let mean = |f: &dyn Fn(&MergedMetrics) -> Option<f64>| -> Result<f64, BenchError> {
        let mut sum = 0.0;
        for m in &successes {
            sum += f(m).ok_or(BenchError::MixedMetricKinds)?;
        }
        Ok(sum / n)
    };
    let metrics = match successes[0] {
        MergedMetrics::Latency(_) => {
            let get = |pick: fn(&LatencyStats) -> f64| {
                move |m: &MergedMetrics| match m {
                    MergedMetrics::Latency(s) => Some(pick(s)),
                    _ => None,
                }
            };
            AveragedMetrics::Latency {
                count: mean(&get(|s| s.count as f64))?,
                mean_us: mean(&get(|s| s.mean_us))?,
                min_us: mean(&get(|s| s.min_us))?,
                max_us: mean(&get(|s| s.max_us))?,
                p50_us: mean(&get(|s| s.p50_us))?,
                p90_us: mean(&get(|s| s.p90_us))?,
                p99_us: mean(&get(|s| s.p99_us))?,
            }
        }
        MergedMetrics::Bandwidth(_) => {
            let get = |pick: fn(&BandwidthResult) -> f64| {
                move |m: &MergedMetrics| match m {
                    MergedMetrics::Bandwidth(b) => Some(pick(b)),
                    _ => None,
                }
            };
            AveragedMetrics::Bandwidth {
                rpc_count: mean(&get(|b| b.rpc_count as f64))?,
                content_bytes: mean(&get(|b| b.content_bytes as f64))?,
                duration_secs: mean(&get(|b| b.duration_secs))?,
                mbytes_per_sec: mean(&get(|b| b.mbytes_per_sec))?,
            }
        }
        MergedMetrics::Throughput(_) => {
            let get = |pick: fn(&ThroughputResult) -> f64| {
                move |m: &MergedMetrics| match m {
                    MergedMetrics::Throughput(t) => Some(pick(t)),
                    _ => None,
                }
            };
            AveragedMetrics::Throughput {
                total_rpcs: mean(&get(|t| t.per_worker_counts.iter().sum::<u64>() as f64))?,
                duration_secs: mean(&get(|t| t.duration_secs))?,
                aggregate_rpcs_per_sec: mean(&get(|t| t.aggregate_rpcs_per_sec))?,
            }
        }
    };
    Ok(AveragedResult {
        successful_repeats: successes.len(),
        failed_repeats: results.len() - successes.len(),
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rpc::{serve, ServerConfig, TcpTransport};
    use std::sync::Arc;

    fn quick_cfg(benchmark: BenchmarkKind, endpoints: Vec<Endpoint>) -> BenchConfig {
        BenchConfig {
            benchmark,
            num_ps: endpoints.len(),
            ps_endpoints: endpoints,
            iovec_count: 4,
            sizes: BufferSizeConfig {
                small_bytes: 64,
                medium_bytes: 4096,
                large_bytes: 1_048_576,
            },
            categories: CategorySet::of(&[BufferCategory::Small, BufferCategory::Medium]),
            warmup_secs: 0.15,
            duration_secs: 0.4,
            monitor_interval_ms: 20,
            ..BenchConfig::default()
        }
    }

    fn start_ps(cfg: &BenchConfig) -> crate::rpc::RunningServer {
        serve(
            &ServerConfig {
                bind_host: "127.0.0.1".to_string(),
                bind_port: 0,
                response_spec: cfg.payload_spec().unwrap(),
                mode: cfg.mode,
            },
            Arc::new(TcpTransport),
        )
        .unwrap()
    }

    #[test]
    fn stats_singleton() {
        let s = compute_stats(&[7.0]).unwrap();
        assert_eq!(s.count, 1);
        for v in [s.mean_us, s.min_us, s.max_us, s.p50_us, s.p90_us, s.p99_us] {
            assert_eq!(v, 7.0);
        }
    }

    #[test]
    fn stats_nearest_rank_1_to_100() {
        let samples: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let s = compute_stats(&samples).unwrap();
        assert_eq!(s.p50_us, 50.0);
        assert_eq!(s.p90_us, 90.0);
        assert_eq!(s.p99_us, 99.0);
        assert_eq!(s.min_us, 1.0);
        assert_eq!(s.max_us, 100.0);
    }

    #[test]
    fn stats_five_millisecond_samples() {
        // 1..5 ms as microseconds.
        let samples = [1000.0, 2000.0, 3000.0, 4000.0, 5000.0];
        let s = compute_stats(&samples).unwrap();
        assert_eq!(s.mean_us, 3000.0);
        assert_eq!(s.p50_us, 3000.0);
        assert_eq!(s.p99_us, 5000.0);
    }

    #[test]
    fn stats_order_independent() {
        let sorted: Vec<f64> = (1..=50).map(|v| v as f64).collect();
        let mut shuffled = sorted.clone();
        shuffled.reverse();
        shuffled.swap(3, 40);
        assert_eq!(
            compute_stats(&sorted).unwrap(),
            compute_stats(&shuffled).unwrap()
        );
    }

    #[test]
    fn stats_empty_rejected() {
        assert!(matches!(compute_stats(&[]), Err(BenchError::EmptyStats)));
    }

    #[test]
    fn aggregate_means_each_metric() {
        let mk = |mean: f64| {
            Some(MergedMetrics::Latency(LatencyStats {
                count: 10,
                mean_us: mean,
                min_us: mean - 1.0,
                max_us: mean + 1.0,
                p50_us: mean,
                p90_us: mean,
                p99_us: mean,
            }))
        };
        let avg = aggregate_runs(&[mk(10.0), mk(12.0), mk(14.0)]).unwrap();
        assert_eq!(avg.successful_repeats, 3);
        assert_eq!(avg.failed_repeats, 0);
        match avg.metrics {
            AveragedMetrics::Latency {
                mean_us, min_us, ..
            } => {
                assert_eq!(mean_us, 12.0);
                assert_eq!(min_us, 11.0);
            }
            _ => panic!("wrong kind"),
        }

        // Single repeat: identity.
        let avg = aggregate_runs(&[mk(10.0)]).unwrap();
        match avg.metrics {
            AveragedMetrics::Latency { mean_us, .. } => assert_eq!(mean_us, 10.0),
            _ => panic!("wrong kind"),
        }

        // One failure out of five: mean over the four successes.
        let avg = aggregate_runs(&[mk(10.0), mk(12.0), None, mk(14.0), mk(16.0)]).unwrap();
        assert_eq!(avg.successful_repeats, 4);
        assert_eq!(avg.failed_repeats, 1);
        match avg.metrics {
            AveragedMetrics::Latency { mean_us, .. } => assert_eq!(mean_us, 13.0),
            _ => panic!("wrong kind"),
        }

        // No successes at all: overall failure.
        assert!(matches!(
            aggregate_runs(&[None, None]),
            Err(BenchError::NoSuccessfulRepeats(2))
        ));
    }

    #[test]
    fn merge_throughput_examples() {
        let w = |count: u64, per_ps: Vec<u64>| WorkerThroughput {
            rpc_count: count,
            per_ps_counts: per_ps,
            duration_secs: 10.0,
        };
        // Three workers, 100 RPCs each over 10 s -> 30 RPC/s aggregate.
        let merged = merge_throughput(&[
            w(100, vec![50, 50]),
            w(100, vec![50, 50]),
            w(100, vec![50, 50]),
        ]);
        assert_eq!(merged.aggregate_rpcs_per_sec, 30.0);
        assert_eq!(merged.per_worker_counts, vec![100, 100, 100]);
        // Single PS: the per-PS row collapses to the worker count.
        let merged = merge_throughput(&[w(42, vec![42])]);
        assert_eq!(merged.per_ps_counts, vec![vec![42]]);
        assert_eq!(merged.per_worker_counts, vec![42]);
    }

    #[test]
    fn latency_run_records_measure_phase_only() {
        let mut cfg = quick_cfg(BenchmarkKind::Latency, vec![]);
        let server = start_ps(&cfg);
        cfg.ps_endpoints = vec![server.endpoint().clone()];
        let out = run_worker(&cfg, 0, &TcpTransport).unwrap();
        assert_eq!(out.repeats.len(), 1);
        let RepeatOutcome::Success { metrics, window } = &out.repeats[0].outcome else {
            panic!("repeat failed");
        };
        let RepeatMetrics::Latency(stats) = metrics else {
            panic!("wrong metrics kind");
        };
        assert!(stats.count >= 1);
        assert!(stats.mean_us > 0.0);
        assert!(stats.min_us <= stats.p50_us);
        assert!(stats.p50_us <= stats.p90_us);
        assert!(stats.p90_us <= stats.p99_us);
        assert!(stats.p99_us <= stats.max_us);
        // Phasing: nothing recorded before the warmup boundary, and the
        // repeat's wall time is warmup + duration within 10%.
        assert!(window.first_sample_ms.unwrap() >= window.warmup_end_ms);
        let nominal = (cfg.warmup_secs + cfg.duration_secs) * 1e3;
        assert!((window.wall_ms - nominal).abs() <= nominal * 0.10);
        server.stop();
    }

    #[test]
    fn bandwidth_accounting_identities() {
        let mut cfg = quick_cfg(BenchmarkKind::Bandwidth, vec![]);
        let server = start_ps(&cfg);
        cfg.ps_endpoints = vec![server.endpoint().clone()];
        let payload = materialize(&cfg.payload_spec().unwrap());
        let out = run_worker(&cfg, 0, &TcpTransport).unwrap();
        let RepeatOutcome::Success { metrics, window } = &out.repeats[0].outcome else {
            panic!("repeat failed");
        };
        let RepeatMetrics::Bandwidth(bw) = metrics else {
            panic!("wrong metrics kind");
        };
        assert_eq!(bw.content_bytes, bw.rpc_count * payload.content_bytes());
        let recomputed = bw.content_bytes as f64 / bw.duration_secs / (1u64 << 20) as f64;
        assert_eq!(bw.mbytes_per_sec, recomputed);
        // Exact framing accounting: each PUT writes a 24-byte header, a
        // 4-byte count, and a 4-byte prefix per buffer; each ACK reads 24.
        let per_rpc_overhead = 24 + 4 + 4 * payload.buffers().len() as u64;
        assert_eq!(
            window.net_tx_measure_bytes,
            bw.content_bytes + bw.rpc_count * per_rpc_overhead
        );
        assert_eq!(window.net_rx_measure_bytes, bw.rpc_count * 24);
        server.stop();
    }

    #[test]
    fn throughput_round_robin_balance() {
        let mut cfg = quick_cfg(BenchmarkKind::Throughput, vec![]);
        let a = start_ps(&cfg);
        let b = start_ps(&cfg);
        cfg.ps_endpoints = vec![a.endpoint().clone(), b.endpoint().clone()];
        cfg.num_ps = 2;
        let out = run_worker(&cfg, 0, &TcpTransport).unwrap();
        let RepeatOutcome::Success { metrics, .. } = &out.repeats[0].outcome else {
            panic!("repeat failed");
        };
        let RepeatMetrics::Throughput(t) = metrics else {
            panic!("wrong metrics kind");
        };
        assert_eq!(t.per_ps_counts.iter().sum::<u64>(), t.rpc_count);
        let max = t.per_ps_counts.iter().max().unwrap();
        let min = t.per_ps_counts.iter().min().unwrap();
        assert!(max - min <= 1, "per-PS counts {:?}", t.per_ps_counts);
        a.stop();
        b.stop();
    }

    #[test]
    fn throughput_pull_direction_works() {
        let mut cfg = quick_cfg(BenchmarkKind::Throughput, vec![]);
        cfg.direction = Direction::Pull;
        let server = start_ps(&cfg);
        cfg.ps_endpoints = vec![server.endpoint().clone()];
        let out = run_worker(&cfg, 0, &TcpTransport).unwrap();
        assert!(out.all_succeeded());
        server.stop();
    }

    #[test]
    fn identical_config_and_seed_reproduce_hash_and_spec() {
        let mut cfg = quick_cfg(BenchmarkKind::Bandwidth, vec![]);
        let server = start_ps(&cfg);
        cfg.ps_endpoints = vec![server.endpoint().clone()];
        let a = run_worker(&cfg, 0, &TcpTransport).unwrap();
        let b = run_worker(&cfg, 0, &TcpTransport).unwrap();
        assert_eq!(a.content_hash, b.content_hash);
        assert_eq!(a.spec, b.spec);
        let mut other = cfg.clone();
        other.seed += 1;
        let c = run_worker(&other, 0, &TcpTransport).unwrap();
        assert_ne!(a.content_hash, c.content_hash);
        server.stop();
    }

    #[test]
    fn repeats_produce_independent_records() {
        let mut cfg = quick_cfg(BenchmarkKind::Latency, vec![]);
        cfg.repeats = 3;
        cfg.warmup_secs = 0.05;
        cfg.duration_secs = 0.15;
        let server = start_ps(&cfg);
        cfg.ps_endpoints = vec![server.endpoint().clone()];
        let out = run_worker(&cfg, 0, &TcpTransport).unwrap();
        assert_eq!(out.repeats.len(), 3);
        assert!(out.all_succeeded());
        for (i, r) in out.repeats.iter().enumerate() {
            assert_eq!(r.repeat, i);
        }
        server.stop();
    }

    /// Transport whose client streams delay every read, making RPCs so slow
    /// that none lands inside a short measurement window.
    struct LaggyTransport {
        delay: Duration,
    }

    struct LaggyStream {
        inner: Box<dyn crate::rpc::TransportStream>,
        delay: Duration,
    }

    impl std::io::Read for LaggyStream {
        fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
            std::thread::sleep(self.delay);
            self.inner.read(buf)
        }
    }

    impl std::io::Write for LaggyStream {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            self.inner.write(buf)
        }
        fn flush(&mut self) -> std::io::Result<()> {
            self.inner.flush()
        }
    }

    impl crate::rpc::TransportStream for LaggyStream {
        fn shutdown_token(&self) -> std::io::Result<Box<dyn crate::rpc::ShutdownToken>> {
            self.inner.shutdown_token()
        }
    }

    impl Transport for LaggyTransport {
        fn listen(
            &self,
            host: &str,
            port: u16,
        ) -> std::io::Result<Box<dyn crate::rpc::TransportListener>> {
            TcpTransport.listen(host, port)
        }
        fn connect(
            &self,
            endpoint: &Endpoint,
        ) -> std::io::Result<Box<dyn crate::rpc::TransportStream>> {
            Ok(Box::new(LaggyStream {
                inner: TcpTransport.connect(endpoint)?,
                delay: self.delay,
            }))
        }
    }

    #[test]
    fn zero_completed_rpcs_is_a_failure_not_a_zero_report() {
        let mut cfg = quick_cfg(BenchmarkKind::Bandwidth, vec![]);
        cfg.warmup_secs = 0.3;
        cfg.duration_secs = 0.05;
        cfg.iovec_count = 1;
        cfg.categories = CategorySet::of(&[BufferCategory::Small]);
        cfg.scheme = Scheme::Uniform;
        let server = start_ps(&cfg);
        cfg.ps_endpoints = vec![server.endpoint().clone()];
        // Every read stalls 200 ms, so both calls that fit in the 350 ms
        // window start during warmup and nothing lands in measurement.
        let out = run_worker(
            &cfg,
            0,
            &LaggyTransport {
                delay: Duration::from_millis(200),
            },
        )
        .unwrap();
        let RepeatOutcome::Failure { error } = &out.repeats[0].outcome else {
            panic!("expected a failed repeat");
        };
        assert!(error.contains("no RPC completed"), "{error}");
        server.stop();
    }

    #[test]
    fn transport_failure_marks_repeat_failed() {
        let mut cfg = quick_cfg(BenchmarkKind::Latency, vec![]);
        cfg.repeats = 1;
        let server = start_ps(&cfg);
        cfg.ps_endpoints = vec![server.endpoint().clone()];
        // Stop the server mid-run from another thread.
        let stopper = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(120));
            server.stop();
        });
        let out = run_worker(&cfg, 0, &TcpTransport).unwrap();
        stopper.join().unwrap();
        assert!(!out.all_succeeded());
        server_failure_is_reported(&out);
    }

    fn server_failure_is_reported(out: &WorkerRunOutput) {
        let RepeatOutcome::Failure { error } = &out.repeats[0].outcome else {
            panic!("expected failure");
        };
        assert!(!error.is_empty());
    }
}
