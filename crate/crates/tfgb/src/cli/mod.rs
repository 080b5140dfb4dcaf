//! Command-line interface: configuration parsing, role dispatch, local
//! multi-process orchestration, and report emission.
//!
//! Driver mode (`tfgb latency|bandwidth|throughput`) spawns the configured
//! number of parameter-server and worker processes on this host, waits for
//! each server's `READY host:port` line, hands workers the actual endpoint
//! list, collects every child's JSON results, and writes the merged
//! `report.json` / `report.csv`. Manual deployment uses `tfgb role ps` and
//! `tfgb role worker --ps-endpoints ...` on each host.

pub mod config;
pub mod report;

pub use config::{ConfigError, ConfigOverlay, ResolvedConfig, Role};
pub use report::{EmitFormat, ReportDocument};

use crate::bench::{self, AveragedMetrics, BenchConfig, WorkerRunOutput};
use crate::monitor::start_monitor;
use crate::rpc::{serve, Endpoint, ServerConfig, TcpTransport};
use clap::Parser;
use config::{overlay_from_config, resolve};
use report::{build_report, write_report_files, EnvironmentInfo, PsRunOutput};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::time::{Duration, Instant};
use thiserror::Error;

/// How long a spawned child may take to report readiness.
const STARTUP_TIMEOUT: Duration = Duration::from_secs(10);
/// Grace period past the nominal run time before a worker is presumed hung.
const WORKER_GRACE: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Bench(#[from] bench::BenchError),
    #[error(transparent)]
    Rpc(#[from] crate::rpc::RpcError),
    #[error(transparent)]
    Monitor(#[from] crate::monitor::MonitorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{role} {index} did not become ready within {timeout:?}")]
    StartupTimeout {
        role: &'static str,
        index: usize,
        timeout: Duration,
    },
    #[error("{role} {index} failed: {detail}")]
    ChildFailed {
        role: &'static str,
        index: usize,
        detail: String,
    },
    #[error("{role} {index} produced unreadable results: {detail}")]
    BadChildOutput {
        role: &'static str,
        index: usize,
        detail: String,
    },
    #[error("{role} {index} ran with a different configuration than the driver sent")]
    ConfigEchoMismatch { role: &'static str, index: usize },
}

#[derive(Debug, Parser)]
#[command(
    name = "tfgb",
    about = "Parameter-server RPC micro-benchmarks over scatter-gather payloads",
    version
)]
struct CliArgs {
    #[command(subcommand)]
    command: Option<CliCommand>,

    #[command(flatten)]
    overlay: ConfigOverlay,

    /// Role to run when no subcommand is given: driver, ps, or worker.
    #[arg(long, global = true)]
    role: Option<Role>,

    /// JSON config file mirroring the flag names (kebab-case keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (driver: report files; ps/worker: result JSON file).
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Index assigned to this ps/worker process.
    #[arg(long, global = true, default_value_t = 0)]
    index: usize,
}

#[derive(Debug, Clone, Copy, clap::Subcommand)]
enum CliCommand {
    /// Run the point-to-point latency benchmark (driver mode).
    Latency,
    /// Run the point-to-point bandwidth benchmark (driver mode).
    Bandwidth,
    /// Run the parameter-server throughput benchmark (driver mode).
    Throughput,
    /// Run a single role for manual multi-host deployment.
    Role {
        #[arg(value_name = "ROLE")]
        role: Role,
    },
}

/// Everything `main` needs to dispatch one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCli {
    pub role: Role,
    pub resolved: ResolvedConfig,
    pub result_path: PathBuf,
    pub index: usize,
}

/// Parse argv against the environment: flags > config file > `TFGB_*`
/// environment variables > defaults.
pub fn parse_cli<I, S>(argv: I, env: &dyn Fn(&str) -> Option<String>) -> Result<ParsedCli, CliError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let args = CliArgs::try_parse_from(argv).map_err(|e| ConfigError::Invalid(e.to_string()))?;

    let (command_role, command_benchmark) = match args.command {
        Some(CliCommand::Latency) => (None, Some(bench::BenchmarkKind::Latency)),
        Some(CliCommand::Bandwidth) => (None, Some(bench::BenchmarkKind::Bandwidth)),
        Some(CliCommand::Throughput) => (None, Some(bench::BenchmarkKind::Throughput)),
        Some(CliCommand::Role { role }) => (Some(role), None),
        None => (None, None),
    };
    if let (Some(sub), Some(flag)) = (command_benchmark, args.overlay.benchmark) {
        if sub != flag {
            return Err(ConfigError::Invalid(format!(
                "the '{sub}' subcommand conflicts with --benchmark {flag}"
            ))
            .into());
        }
    }
    let role = match (command_role, args.role) {
        (Some(sub), Some(flag)) if sub != flag => {
            return Err(ConfigError::Invalid(format!(
                "the 'role {sub}' subcommand conflicts with --role {flag}"
            ))
            .into())
        }
        (Some(sub), _) => sub,
        (None, Some(flag)) => flag,
        (None, None) => Role::Driver,
    };

    let env_layer = ConfigOverlay::from_env(env)?;
    let file_layer = match &args.config {
        Some(path) => ConfigOverlay::from_file(path)?,
        None => ConfigOverlay::default(),
    };
    let mut flag_layer = args.overlay;
    if flag_layer.benchmark.is_none() {
        flag_layer.benchmark = command_benchmark;
    }
    let merged = flag_layer.over(file_layer.over(env_layer));
    let resolved = resolve(&merged, role)?;

    let result_path = args
        .output
        .or_else(|| env("TFGB_OUTPUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("tfgb-results"));

    Ok(ParsedCli {
        role,
        resolved,
        result_path,
        index: args.index,
    })
}

/// Parse real argv/env and run; returns the process exit code.
pub fn run() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    let env = |name: &str| std::env::var(name).ok();
    let parsed = match parse_cli(std::env::args(), &env) {
        Ok(parsed) => parsed,
        Err(err) => {
            eprintln!("{err}");
            return 2;
        }
    };
    let result = match parsed.role {
        Role::Driver => run_driver(&parsed),
        Role::Ps => run_ps(&parsed),
        Role::Worker => run_worker_role(&parsed),
    };
    match result {
        Ok(ok) => {
            if ok {
                0
            } else {
                1
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}

/// Run one parameter-server process: bind, announce readiness on stdout,
/// serve until stdin closes (or a STOP line arrives), then write the
/// resource series to the output file.
fn run_ps(parsed: &ParsedCli) -> Result<bool, CliError> {
    let cfg = &parsed.resolved.bench;
    let spec = cfg.payload_spec()?;
    let server = serve(
        &ServerConfig {
            bind_host: parsed.resolved.ip.clone(),
            bind_port: parsed.resolved.requested_port,
            response_spec: spec,
            mode: cfg.mode,
        },
        std::sync::Arc::new(TcpTransport),
    )?;
    let endpoint = server.endpoint().clone();
    println!("READY {endpoint}");
    std::io::stdout().flush()?;
    log::info!("parameter server {} listening on {endpoint}", parsed.index);

    let session = start_monitor(cfg.monitor_interval_ms, server.net_counters())?;

    // Block until the driver (or operator) closes stdin or says STOP.
    let stdin = std::io::stdin();
    for line in stdin.lock().lines() {
        match line {
            Ok(l) if l.trim() == "STOP" => break,
            Ok(_) => continue,
            Err(_) => break,
        }
    }

    let resources = session.stop(Duration::from_secs_f64(cfg.warmup_secs));
    server.stop();

    let output = PsRunOutput {
        index: parsed.index,
        endpoint,
        config: cfg.clone(),
        resources,
    };
    write_json(&output_file(parsed, "ps"), &output)?;
    Ok(true)
}

/// Run one worker process and write its results as JSON.
fn run_worker_role(parsed: &ParsedCli) -> Result<bool, CliError> {
    let cfg = &parsed.resolved.bench;
    if cfg.ps_endpoints.is_empty() {
        return Err(ConfigError::Invalid(
            "worker role needs --ps-endpoints or a non-zero --port".to_string(),
        )
        .into());
    }
    let output = bench::run_worker(cfg, parsed.index, &TcpTransport)?;
    let ok = output.all_succeeded();
    write_json(&output_file(parsed, "worker"), &output)?;
    Ok(ok)
}

/// Result file for a ps/worker role: `--output` taken verbatim when it
/// names a file, otherwise `<role>_<index>.json` inside it.
fn output_file(parsed: &ParsedCli, role: &str) -> PathBuf {
    let base = parsed.result_path.clone();
    if base.extension().is_some() {
        base
    } else {
        base.join(format!("{role}_{}.json", parsed.index))
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(
    path: &Path,
    role: &'static str,
    index: usize,
) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::BadChildOutput {
        role,
        index,
        detail: format!("{}: {e}", path.display()),
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::BadChildOutput {
        role,
        index,
        detail: format!("{}: {e}", path.display()),
    })
}

struct ChildProc {
    child: Child,
    role: &'static str,
    index: usize,
    lines: Option<mpsc::Receiver<String>>,
}

impl ChildProc {
    fn spawn(
        exe: &Path,
        role: &'static str,
        index: usize,
        args: &[String],
    ) -> Result<ChildProc, CliError> {
        let mut child = Command::new(exe)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdout = child.stdout.take().expect("stdout piped");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(l) => {
                        if tx.send(l).is_err() {
                            // Receiver gone; keep draining so the child
                            // never blocks on a full pipe.
                        }
                    }
                    Err(_) => break,
                }
            }
        });
        Ok(ChildProc {
            child,
            role,
            index,
            lines: Some(rx),
        })
    }

    fn wait_ready(&mut self, timeout: Duration) -> Result<Endpoint, CliError> {
        let rx = self.lines.as_ref().expect("stdout receiver");
        let deadline = Instant::now() + timeout;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return Err(CliError::StartupTimeout {
                    role: self.role,
                    index: self.index,
                    timeout,
                });
            }
            match rx.recv_timeout(remaining) {
                Ok(line) => {
                    if let Some(rest) = line.strip_prefix("READY ") {
                        return rest.trim().parse::<Endpoint>().map_err(|e| {
                            CliError::BadChildOutput {
                                role: self.role,
                                index: self.index,
                                detail: format!("bad READY line: {e}"),
                            }
                        });
                    }
                }
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    return Err(CliError::StartupTimeout {
                        role: self.role,
                        index: self.index,
                        timeout,
                    })
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    let status = self.child.wait()?;
                    return Err(CliError::ChildFailed {
                        role: self.role,
                        index: self.index,
                        detail: format!("exited before READY ({status})"),
                    });
                }
            }
        }
    }

    /// Wait for exit within `timeout`; true when the child exited 0.
    fn wait_with_timeout(&mut self, timeout: Duration) -> Result<bool, CliError> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(status) = self.child.try_wait()? {
                return Ok(status.success());
            }
            if Instant::now() >= deadline {
                let _ = self.child.kill();
                let _ = self.child.wait();
                return Err(CliError::ChildFailed {
                    role: self.role,
                    index: self.index,
                    detail: format!("did not exit within {timeout:?}"),
                });
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    fn send_stop(&mut self) {
        if let Some(stdin) = self.child.stdin.as_mut() {
            let _ = stdin.write_all(b"STOP\n");
            let _ = stdin.flush();
        }
        self.child.stdin.take();
    }
}

impl Drop for ChildProc {
    fn drop(&mut self) {
        if self.child.try_wait().ok().flatten().is_none() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

/// Drive a full local run: spawn servers and workers, merge their results,
/// write report files. Returns the report and whether everything succeeded.
pub fn orchestrate(parsed: &ParsedCli) -> Result<(ReportDocument, bool), CliError> {
    let exe = std::env::current_exe()?;
    orchestrate_with_binary(parsed, &exe)
}

/// As [`orchestrate`], with an explicit benchmark binary (used by tests).
pub fn orchestrate_with_binary(
    parsed: &ParsedCli,
    exe: &Path,
) -> Result<(ReportDocument, bool), CliError> {
    let cfg = &parsed.resolved.bench;
    let mut environment = EnvironmentInfo::capture();
    let scratch = tempfile::tempdir()?;

    // Children re-read the driver's effective configuration from a file;
    // role-specific overrides travel as flags (flags > file).
    let config_path = scratch.path().join("config.json");
    write_json(&config_path, &overlay_from_config(&parsed.resolved))?;
    let config_arg = config_path.display().to_string();

    // Start the parameter servers and collect their actual endpoints.
    let mut ps_children = Vec::new();
    let mut ps_paths = Vec::new();
    for i in 0..cfg.num_ps {
        let port = match parsed.resolved.requested_port {
            0 => 0,
            base => base + i as u16,
        };
        let out = scratch.path().join(format!("ps_{i}.json"));
        let args = vec![
            "role".to_string(),
            "ps".to_string(),
            "--config".to_string(),
            config_arg.clone(),
            "--port".to_string(),
            port.to_string(),
            "--index".to_string(),
            i.to_string(),
            "--output".to_string(),
            out.display().to_string(),
        ];
        ps_children.push(ChildProc::spawn(exe, "ps", i, &args)?);
        ps_paths.push(out);
    }
    let mut endpoints = Vec::with_capacity(cfg.num_ps);
    for child in &mut ps_children {
        endpoints.push(child.wait_ready(STARTUP_TIMEOUT)?);
    }
    let endpoint_list = endpoints
        .iter()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join(",");

    // The configuration every child actually runs with.
    let mut effective = cfg.clone();
    effective.ps_endpoints = endpoints;

    // Start the workers and wait for them to finish their repeats.
    let worker_budget =
        Duration::from_secs_f64((cfg.warmup_secs + cfg.duration_secs) * cfg.repeats as f64)
            + WORKER_GRACE;
    let mut worker_children = Vec::new();
    let mut worker_paths = Vec::new();
    for i in 0..cfg.num_workers {
        let out = scratch.path().join(format!("worker_{i}.json"));
        let args = vec![
            "role".to_string(),
            "worker".to_string(),
            "--config".to_string(),
            config_arg.clone(),
            "--ps-endpoints".to_string(),
            endpoint_list.clone(),
            "--index".to_string(),
            i.to_string(),
            "--output".to_string(),
            out.display().to_string(),
        ];
        worker_children.push(ChildProc::spawn(exe, "worker", i, &args)?);
        worker_paths.push(out);
    }

    let mut workers_exited_clean = true;
    for child in &mut worker_children {
        workers_exited_clean &= child.wait_with_timeout(worker_budget)?;
    }

    // Stop the servers gracefully so they flush their resource series.
    for child in &mut ps_children {
        child.send_stop();
    }
    let mut ps_outputs = Vec::new();
    for (child, path) in ps_children.iter_mut().zip(&ps_paths) {
        child.wait_with_timeout(Duration::from_secs(5))?;
        let output: PsRunOutput = read_json(path, "ps", child.index)?;
        if !payload_fields_match(&output.config, &effective) {
            return Err(CliError::ConfigEchoMismatch {
                role: "ps",
                index: child.index,
            });
        }
        ps_outputs.push(output);
    }

    let mut worker_outputs: Vec<WorkerRunOutput> = Vec::new();
    for (i, path) in worker_paths.iter().enumerate() {
        let output: WorkerRunOutput = read_json(path, "worker", i)?;
        if output.config != effective {
            return Err(CliError::ConfigEchoMismatch {
                role: "worker",
                index: i,
            });
        }
        worker_outputs.push(output);
    }

    environment.finished_unix_ms = report::unix_ms();
    let report = build_report(effective, environment, &worker_outputs, &ps_outputs);
    let all_ok = workers_exited_clean && report.all_succeeded();
    Ok((report, all_ok))
}

/// The fields that determine what a parameter server serves.
fn payload_fields_match(a: &BenchConfig, b: &BenchConfig) -> bool {
    a.mode == b.mode
        && a.scheme == b.scheme
        && a.iovec_count == b.iovec_count
        && a.sizes == b.sizes
        && a.categories == b.categories
        && a.bias == b.bias
        && a.seed == b.seed
}

fn run_driver(parsed: &ParsedCli) -> Result<bool, CliError> {
    let (report, all_ok) = orchestrate(parsed)?;
    let (json_path, csv_path) = write_report_files(&report, &parsed.result_path)?;
    print_summary(&report);
    println!("report: {}", json_path.display());
    println!("report: {}", csv_path.display());
    Ok(all_ok)
}

fn print_summary(report: &ReportDocument) {
    for repeat in &report.repeats {
        match &repeat.metrics {
            Some(bench::MergedMetrics::Latency(s)) => println!(
                "repeat {} latency: count {} mean {:.1} us p50 {:.1} us p90 {:.1} us p99 {:.1} us",
                repeat.repeat, s.count, s.mean_us, s.p50_us, s.p90_us, s.p99_us
            ),
            Some(bench::MergedMetrics::Bandwidth(b)) => println!(
                "repeat {} bandwidth: {} rpcs {} bytes in {:.3} s -> {:.2} MB/s",
                repeat.repeat, b.rpc_count, b.content_bytes, b.duration_secs, b.mbytes_per_sec
            ),
            Some(bench::MergedMetrics::Throughput(t)) => println!(
                "repeat {} throughput: {} rpcs in {:.3} s -> {:.1} rpc/s across {} workers",
                repeat.repeat,
                t.per_worker_counts.iter().sum::<u64>(),
                t.duration_secs,
                t.aggregate_rpcs_per_sec,
                t.per_worker_counts.len()
            ),
            None => println!(
                "repeat {} failed: {}",
                repeat.repeat,
                repeat.errors.join("; ")
            ),
        }
    }
    if let Some(avg) = &report.average {
        match &avg.metrics {
            AveragedMetrics::Latency {
                mean_us,
                p50_us,
                p99_us,
                ..
            } => println!(
                "average over {} repeats: mean {:.1} us p50 {:.1} us p99 {:.1} us",
                avg.successful_repeats, mean_us, p50_us, p99_us
            ),
            AveragedMetrics::Bandwidth { mbytes_per_sec, .. } => println!(
                "average over {} repeats: {:.2} MB/s",
                avg.successful_repeats, mbytes_per_sec
            ),
            AveragedMetrics::Throughput {
                aggregate_rpcs_per_sec,
                ..
            } => println!(
                "average over {} repeats: {:.1} rpc/s",
                avg.successful_repeats, aggregate_rpcs_per_sec
            ),
        }
    }
}
