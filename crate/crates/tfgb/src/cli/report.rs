//! Report assembly and emission.
//!
//! A run produces one `ReportDocument`: the effective configuration, the
//! generated payload spec and its content hash, per-repeat results (merged
//! across workers), the averaged metrics, every process's resource series,
//! and an environment fingerprint. The document round-trips losslessly
//! through its JSON encoding; the CSV rendering is one row per repeat per
//! worker with a fixed, benchmark-specific header.

use crate::bench::{
    aggregate_runs, merge_throughput, AveragedResult, BenchConfig, BenchmarkKind, MergedMetrics,
    RepeatMetrics, RepeatOutcome, WorkerRunOutput, WorkerThroughput,
};
use crate::monitor::ResourceSeries;
use crate::rpc::Endpoint;
use crate::workload::PayloadSpec;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

/// Where and when a run happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentInfo {
    pub hostname: String,
    pub os: String,
    pub arch: String,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

impl EnvironmentInfo {
    pub fn capture() -> EnvironmentInfo {
        let now = unix_ms();
        EnvironmentInfo {
            hostname: hostname(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            started_unix_ms: now,
            finished_unix_ms: now,
        }
    }
}

pub fn unix_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[cfg(unix)]
fn hostname() -> String {
    let mut buf = [0u8; 256];
    let rc = unsafe { libc::gethostname(buf.as_mut_ptr().cast::<libc::c_char>(), buf.len()) };
    if rc == 0 {
        let end = buf.iter().position(|&b| b == 0).unwrap_or(buf.len());
        String::from_utf8_lossy(&buf[..end]).into_owned()
    } else {
        "unknown".to_string()
    }
}

#[cfg(not(unix))]
fn hostname() -> String {
    "unknown".to_string()
}

/// One process's resource series within a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessResources {
    /// "ps" or "worker".
    pub role: String,
    pub index: usize,
    /// Worker series are recorded per repeat; PS series span the run.
    pub repeat: Option<usize>,
    pub series: ResourceSeries,
}

/// One repeat's result merged across workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedRepeat {
    pub repeat: usize,
    /// `None` when any contributing worker failed this repeat.
    pub metrics: Option<MergedMetrics>,
    /// Worker failure messages for this repeat, if any.
    pub errors: Vec<String>,
}

/// Per-worker view kept alongside the merged results (resource series live
/// in [`ReportDocument::resources`], not here).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerReport {
    pub worker_id: usize,
    pub content_hash: String,
    pub repeats: Vec<WorkerRepeat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerRepeat {
    pub repeat: usize,
    pub outcome: RepeatOutcome,
}

/// What a parameter-server process reports when it shuts down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsRunOutput {
    pub index: usize,
    pub endpoint: Endpoint,
    pub config: BenchConfig,
    pub resources: ResourceSeries,
}

/// The complete, self-describing result of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub environment: EnvironmentInfo,
    pub config: BenchConfig,
    pub spec: PayloadSpec,
    /// SHA-256 (hex) of the payload content transmitted on every RPC.
    pub content_hash: String,
    pub repeats: Vec<MergedRepeat>,
    /// `None` only when every repeat failed.
    pub average: Option<AveragedResult>,
    pub workers: Vec<WorkerReport>,
    pub resources: Vec<ProcessResources>,
}

impl ReportDocument {
    /// True when every repeat on every worker succeeded.
    pub fn all_succeeded(&self) -> bool {
        !self.workers.is_empty()
            && self
                .workers
                .iter()
                .all(|w| w.repeats.iter().all(|r| r.outcome.is_success()))
    }
}

/// Merge worker outputs (and PS resource series) into one document.
pub fn build_report(
    config: BenchConfig,
    environment: EnvironmentInfo,
    worker_outputs: &[WorkerRunOutput],
    ps_outputs: &[PsRunOutput],
) -> ReportDocument {
    let repeats = merge_repeats(&config, worker_outputs);
    let average = aggregate_runs(
        &repeats
            .iter()
            .map(|r| r.metrics.clone())
            .collect::<Vec<_>>(),
    )
    .ok();

    let workers = worker_outputs
        .iter()
        .map(|w| WorkerReport {
            worker_id: w.worker_id,
            content_hash: w.content_hash.clone(),
            repeats: w
                .repeats
                .iter()
                .map(|r| WorkerRepeat {
                    repeat: r.repeat,
                    outcome: r.outcome.clone(),
                })
                .collect(),
        })
        .collect();

    let mut resources = Vec::new();
    for ps in ps_outputs {
        resources.push(ProcessResources {
            role: "ps".to_string(),
            index: ps.index,
            repeat: None,
            series: ps.resources.clone(),
        });
    }
    for w in worker_outputs {
        for r in &w.repeats {
            resources.push(ProcessResources {
                role: "worker".to_string(),
                index: w.worker_id,
                repeat: Some(r.repeat),
                series: r.resources.clone(),
            });
        }
    }

    let (spec, content_hash) = worker_outputs
        .first()
        .map(|w| (w.spec.clone(), w.content_hash.clone()))
        .unwrap_or_else(|| {
            // No worker produced output; reconstruct the spec locally so the
            // report is still self-describing.
            let spec = config.payload_spec().expect("validated config");
            let hash = crate::bench::content_hash_hex(&crate::workload::materialize(&spec));
            (spec, hash)
        });

    ReportDocument {
        schema_version: SCHEMA_VERSION,
        environment,
        config,
        spec,
        content_hash,
        repeats,
        average,
        workers,
        resources,
    }
}

fn merge_repeats(config: &BenchConfig, workers: &[WorkerRunOutput]) -> Vec<MergedRepeat> {
    let num_repeats = workers.iter().map(|w| w.repeats.len()).max().unwrap_or(0);
    (0..num_repeats)
        .map(|repeat| {
            let mut errors = Vec::new();
            let mut worker_metrics = Vec::new();
            for w in workers {
                match w.repeats.iter().find(|r| r.repeat == repeat) {
                    Some(record) => match &record.outcome {
                        RepeatOutcome::Success { metrics, .. } => worker_metrics.push(metrics),
                        RepeatOutcome::Failure { error } => {
                            errors.push(format!("worker {}: {error}", w.worker_id))
                        }
                    },
                    None => errors.push(format!("worker {}: repeat {repeat} missing", w.worker_id)),
                }
            }
            let metrics = if errors.is_empty() && worker_metrics.len() == workers.len() {
                merge_metrics(config.benchmark, &worker_metrics)
            } else {
                None
            };
            MergedRepeat {
                repeat,
                metrics,
                errors,
            }
        })
        .collect()
}

fn merge_metrics(kind: BenchmarkKind, worker_metrics: &[&RepeatMetrics]) -> Option<MergedMetrics> {
    match kind {
        BenchmarkKind::Latency => match worker_metrics {
            [RepeatMetrics::Latency(stats)] => Some(MergedMetrics::Latency(stats.clone())),
            _ => None,
        },
        BenchmarkKind::Bandwidth => match worker_metrics {
            [RepeatMetrics::Bandwidth(bw)] => Some(MergedMetrics::Bandwidth(bw.clone())),
            _ => None,
        },
        BenchmarkKind::Throughput => {
            let per_worker: Option<Vec<WorkerThroughput>> = worker_metrics
                .iter()
                .map(|m| match m {
                    RepeatMetrics::Throughput(t) => Some(t.clone()),
                    _ => None,
                })
                .collect();
            per_worker.map(|w| MergedMetrics::Throughput(merge_throughput(&w)))
        }
    }
}

/// Output encodings for a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    Json,
    Csv,
}

/// Render the report deterministically in the requested format.
pub fn emit(report: &ReportDocument, format: EmitFormat) -> String {
    match format {
        EmitFormat::Json => {
            let mut text = serde_json::to_string_pretty(report).expect("report serializes");
            text.push('\n');
            text
        }
        EmitFormat::Csv => emit_csv(report),
    }
}

/// CSV headers, fixed per benchmark:
///
/// - latency: `repeat,worker,count,mean_us,min_us,max_us,p50_us,p90_us,p99_us`
/// - bandwidth: `repeat,worker,rpc_count,content_bytes,duration_secs,mbytes_per_sec`
/// - throughput: `repeat,worker,rpc_count,duration_secs,rpcs_per_sec,ps_0,...`
///
/// One row per successful repeat per worker; failed repeats appear in the
/// JSON document only.
fn emit_csv(report: &ReportDocument) -> String {
    let mut out = String::new();
    match report.config.benchmark {
        BenchmarkKind::Latency => {
            out.push_str("repeat,worker,count,mean_us,min_us,max_us,p50_us,p90_us,p99_us\n");
            for_each_success(report, |repeat, worker_id, metrics| {
                if let RepeatMetrics::Latency(s) = metrics {
                    let _ = writeln!(
                        out,
                        "{repeat},{worker_id},{},{},{},{},{},{},{}",
                        s.count, s.mean_us, s.min_us, s.max_us, s.p50_us, s.p90_us, s.p99_us
                    );
                }
            });
        }
        BenchmarkKind::Bandwidth => {
            out.push_str("repeat,worker,rpc_count,content_bytes,duration_secs,mbytes_per_sec\n");
            for_each_success(report, |repeat, worker_id, metrics| {
                if let RepeatMetrics::Bandwidth(b) = metrics {
                    let _ = writeln!(
                        out,
                        "{repeat},{worker_id},{},{},{},{}",
                        b.rpc_count, b.content_bytes, b.duration_secs, b.mbytes_per_sec
                    );
                }
            });
        }
        BenchmarkKind::Throughput => {
            out.push_str("repeat,worker,rpc_count,duration_secs,rpcs_per_sec");
            for p in 0..report.config.num_ps {
                let _ = write!(out, ",ps_{p}");
            }
            out.push('\n');
            for_each_success(report, |repeat, worker_id, metrics| {
                if let RepeatMetrics::Throughput(t) = metrics {
                    let _ = write!(
                        out,
                        "{repeat},{worker_id},{},{},{}",
                        t.rpc_count,
                        t.duration_secs,
                        t.rpc_count as f64 / t.duration_secs
                    );
                    for c in &t.per_ps_counts {
                        let _ = write!(out, ",{c}");
                    }
                    out.push('\n');
                }
            });
        }
    }
    out
}

fn for_each_success(report: &ReportDocument, mut f: impl FnMut(usize, usize, &RepeatMetrics)) {
    for worker in &report.workers {
        for repeat in &worker.repeats {
            if let RepeatOutcome::Success { metrics, .. } = &repeat.outcome {
                f(repeat.repeat, worker.worker_id, metrics);
            }
        }
    }
}

/// Write `report.json` and `report.csv` under `dir`.
pub fn write_report_files(report: &ReportDocument, dir: &Path) -> io::Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let json_path = dir.join("report.json");
    let csv_path = dir.join("report.csv");
    std::fs::write(&json_path, emit(report, EmitFormat::Json))?;
    std::fs::write(&csv_path, emit(report, EmitFormat::Csv))?;
    Ok((json_path, csv_path))
}
