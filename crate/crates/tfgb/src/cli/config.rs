//! Configuration resolution.
//!
//! Every parameter can be set four ways; higher layers win:
//! command-line flag > JSON config file > `TFGB_*` environment variable >
//! built-in default. The config file mirrors the flag names as kebab-case
//! keys, and environment variables map flag names to uppercase with
//! underscores (`--num-ps` -> `TFGB_NUM_PS`).

use crate::bench::{BenchConfig, BenchmarkKind, Direction};
use crate::monitor::MIN_INTERVAL_MS;
use crate::rpc::Endpoint;
use crate::wire::Mode;
use crate::workload::{BufferCategory, BufferSizeConfig, CategorySet, Scheme};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{flag} must be in {bound}, got {value}")]
    OutOfRange {
        flag: &'static str,
        bound: &'static str,
        value: String,
    },
    #[error("invalid value in {var}: {detail}")]
    InvalidEnv { var: String, detail: String },
    #[error("config file {path}: {detail}")]
    File { path: PathBuf, detail: String },
    #[error("--ps-endpoints lists {got} endpoints but --num-ps is {want}")]
    EndpointCountMismatch { got: usize, want: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Comma-separated endpoint list, e.g. `"10.0.0.1:50001,10.0.0.2:50001"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EndpointList(pub Vec<Endpoint>);

impl FromStr for EndpointList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let endpoints: Result<Vec<Endpoint>, _> = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.trim().parse::<Endpoint>().map_err(|e| e.to_string()))
            .collect();
        let endpoints = endpoints?;
        if endpoints.is_empty() {
            return Err("endpoint list must not be empty".to_string());
        }
        Ok(EndpointList(endpoints))
    }
}

/// One layer of configuration: any subset of the parameters.
#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct ConfigOverlay {
    /// Benchmark to run: latency, bandwidth, or throughput.
    #[arg(long, global = true)]
    pub benchmark: Option<BenchmarkKind>,
    /// Parameter-server IP/host.
    #[arg(long, global = true)]
    pub ip: Option<String>,
    /// Parameter-server base port; servers use consecutive ports from here.
    /// Port 0 asks the driver's servers to bind ephemeral ports.
    #[arg(long, global = true)]
    pub port: Option<u16>,
    /// Number of parameter servers.
    #[arg(long, global = true)]
    pub num_ps: Option<usize>,
    /// Number of workers.
    #[arg(long, global = true)]
    pub num_workers: Option<usize>,
    /// Payload mode: non-serialized or serialized.
    #[arg(long, global = true)]
    pub mode: Option<Mode>,
    /// Payload generation scheme: uniform, random, or skew.
    #[arg(long, global = true)]
    pub scheme: Option<Scheme>,
    /// Number of iovec buffers per payload.
    #[arg(long, global = true)]
    pub iovec_count: Option<usize>,
    /// Small buffer size in bytes, in [1, 1024).
    #[arg(long, global = true)]
    pub small: Option<u64>,
    /// Medium buffer size in bytes, in [1024, 1048576).
    #[arg(long, global = true)]
    pub medium: Option<u64>,
    /// Large buffer size in bytes, in [1048576, 10485760].
    #[arg(long, global = true)]
    pub large: Option<u64>,
    /// Buffer categories to use, comma-separated: small,medium,large.
    #[arg(long, global = true)]
    pub categories: Option<CategorySet>,
    /// Skew bias category.
    #[arg(long, global = true)]
    pub bias: Option<BufferCategory>,
    /// Warmup seconds (excluded from statistics).
    #[arg(long, global = true)]
    pub warmup: Option<f64>,
    /// Measurement seconds.
    #[arg(long, global = true)]
    pub duration: Option<f64>,
    /// Payload content seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of times to repeat the benchmark; results are averaged.
    #[arg(long, global = true)]
    pub repeats: Option<usize>,
    /// Throughput direction: push (PUT) or pull (GET).
    #[arg(long, global = true)]
    pub direction: Option<Direction>,
    /// Resource sampling interval in milliseconds.
    #[arg(long, global = true)]
    pub monitor_interval: Option<u64>,
    /// Explicit parameter-server endpoints (overrides --ip/--port/--num-ps
    /// derivation), comma-separated host:port pairs.
    #[arg(long, global = true)]
    pub ps_endpoints: Option<EndpointList>,
}

macro_rules! merge_fields {
    ($stronger:ident, $weaker:ident; $($field:ident),+ $(,)?) => {
        ConfigOverlay {
            $($field: $stronger.$field.or($weaker.$field)),+
        }
    };
}

macro_rules! env_field {
    ($overlay:ident, $lookup:ident; $($var:literal => $field:ident),+ $(,)?) => {
        $(
            if let Some(raw) = $lookup($var) {
                $overlay.$field = Some(raw.parse().map_err(|e| ConfigError::InvalidEnv {
                    var: $var.to_string(),
                    detail: format!("{e}"),
                })?);
            }
        )+
    };
}

impl ConfigOverlay {
    /// Combine two layers; `self` wins where both set a value.
    pub fn over(self, weaker: ConfigOverlay) -> ConfigOverlay {
        let s = self;
        let w = weaker;
        merge_fields!(s, w;
            benchmark, ip, port, num_ps, num_workers, mode, scheme, iovec_count,
            small, medium, large, categories, bias, warmup, duration, seed,
            repeats, direction, monitor_interval, ps_endpoints,
        )
    }

    /// Read the `TFGB_*` environment layer through a lookup function.
    pub fn from_env(lookup: &dyn Fn(&str) -> Option<String>) -> Result<ConfigOverlay, ConfigError> {
        let mut o = ConfigOverlay::default();
        env_field!(o, lookup;
            "TFGB_BENCHMARK" => benchmark,
            "TFGB_IP" => ip,
            "TFGB_PORT" => port,
            "TFGB_NUM_PS" => num_ps,
            "TFGB_NUM_WORKERS" => num_workers,
            "TFGB_MODE" => mode,
            "TFGB_SCHEME" => scheme,
            "TFGB_IOVEC_COUNT" => iovec_count,
            "TFGB_SMALL" => small,
            "TFGB_MEDIUM" => medium,
            "TFGB_LARGE" => large,
            "TFGB_CATEGORIES" => categories,
            "TFGB_BIAS" => bias,
            "TFGB_WARMUP" => warmup,
            "TFGB_DURATION" => duration,
            "TFGB_SEED" => seed,
            "TFGB_REPEATS" => repeats,
            "TFGB_DIRECTION" => direction,
            "TFGB_MONITOR_INTERVAL" => monitor_interval,
            "TFGB_PS_ENDPOINTS" => ps_endpoints,
        );
        Ok(o)
    }

    /// Read the config-file layer (JSON object with kebab-case flag names).
    pub fn from_file(path: &Path) -> Result<ConfigOverlay, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::File {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }
}

/// Which role this process plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Driver,
    Ps,
    Worker,
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "driver" => Ok(Role::Driver),
            "ps" => Ok(Role::Ps),
            "worker" => Ok(Role::Worker),
            other => Err(format!(
                "unknown role '{other}' (expected driver, ps, or worker)"
            )),
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Driver => "driver",
            Role::Ps => "ps",
            Role::Worker => "worker",
        })
    }
}

/// A fully resolved configuration plus the raw bind request the driver and
/// PS roles need (port 0 means "ephemeral, report what you got").
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub bench: BenchConfig,
    pub ip: String,
    pub requested_port: u16,
}

/// Validate and resolve the merged overlay for a role.
pub fn resolve(overlay: &ConfigOverlay, role: Role) -> Result<ResolvedConfig, ConfigError> {
    let defaults = BenchConfig::default();
    let benchmark = overlay.benchmark.unwrap_or(defaults.benchmark);
    let ip = overlay
        .ip
        .clone()
        .unwrap_or_else(|| "localhost".to_string());
    let requested_port = overlay.port.unwrap_or(crate::rpc::DEFAULT_PORT);
    let num_ps = overlay.num_ps.unwrap_or(defaults.num_ps);
    let num_workers = overlay.num_workers.unwrap_or(defaults.num_workers);
    let mode = overlay.mode.unwrap_or(defaults.mode);
    let scheme = overlay.scheme.unwrap_or(defaults.scheme);
    let iovec_count = overlay.iovec_count.unwrap_or(defaults.iovec_count);
    let sizes = BufferSizeConfig {
        small_bytes: overlay.small.unwrap_or(defaults.sizes.small_bytes),
        medium_bytes: overlay.medium.unwrap_or(defaults.sizes.medium_bytes),
        large_bytes: overlay.large.unwrap_or(defaults.sizes.large_bytes),
    };
    let categories = overlay.categories.unwrap_or(defaults.categories);
    let bias = overlay.bias.unwrap_or(defaults.bias);
    let warmup_secs = overlay.warmup.unwrap_or(defaults.warmup_secs);
    let duration_secs = overlay.duration.unwrap_or(defaults.duration_secs);
    let seed = overlay.seed.unwrap_or(defaults.seed);
    let repeats = overlay.repeats.unwrap_or(defaults.repeats);
    let direction = overlay.direction.unwrap_or(defaults.direction);
    let monitor_interval_ms = overlay
        .monitor_interval
        .unwrap_or(defaults.monitor_interval_ms);

    // Range checks, each naming the violated bound.
    if !(1..1024).contains(&sizes.small_bytes) {
        return Err(ConfigError::OutOfRange {
            flag: "--small",
            bound: "[1, 1024)",
            value: sizes.small_bytes.to_string(),
        });
    }
    if !(1024..1_048_576).contains(&sizes.medium_bytes) {
        return Err(ConfigError::OutOfRange {
            flag: "--medium",
            bound: "[1024, 1048576)",
            value: sizes.medium_bytes.to_string(),
        });
    }
    if !(1_048_576..=10_485_760).contains(&sizes.large_bytes) {
        return Err(ConfigError::OutOfRange {
            flag: "--large",
            bound: "[1048576, 10485760]",
            value: sizes.large_bytes.to_string(),
        });
    }
    if iovec_count < 1 {
        return Err(ConfigError::OutOfRange {
            flag: "--iovec-count",
            bound: "[1, ...)",
            value: iovec_count.to_string(),
        });
    }
    if num_ps < 1 {
        return Err(ConfigError::OutOfRange {
            flag: "--num-ps",
            bound: "[1, ...)",
            value: num_ps.to_string(),
        });
    }
    if num_workers < 1 {
        return Err(ConfigError::OutOfRange {
            flag: "--num-workers",
            bound: "[1, ...)",
            value: num_workers.to_string(),
        });
    }
    if !warmup_secs.is_finite() || warmup_secs < 0.0 {
        return Err(ConfigError::OutOfRange {
            flag: "--warmup",
            bound: "[0, ...)",
            value: warmup_secs.to_string(),
        });
    }
    if !duration_secs.is_finite() || duration_secs <= 0.0 {
        return Err(ConfigError::OutOfRange {
            flag: "--duration",
            bound: "(0, ...)",
            value: duration_secs.to_string(),
        });
    }
    if repeats < 1 {
        return Err(ConfigError::OutOfRange {
            flag: "--repeats",
            bound: "[1, ...)",
            value: repeats.to_string(),
        });
    }
    if monitor_interval_ms < MIN_INTERVAL_MS {
        return Err(ConfigError::OutOfRange {
            flag: "--monitor-interval",
            bound: "[10, ...) milliseconds",
            value: monitor_interval_ms.to_string(),
        });
    }
    match scheme {
        Scheme::Random | Scheme::Skew => {
            if categories.len() < 2 {
                return Err(ConfigError::Invalid(format!(
                    "--scheme {scheme} requires at least two categories, got --categories {categories}"
                )));
            }
            if scheme == Scheme::Skew && !categories.contains(bias) {
                return Err(ConfigError::Invalid(format!(
                    "--bias {bias} is not among --categories {categories}"
                )));
            }
        }
        Scheme::Uniform => {}
        Scheme::Custom => {
            return Err(ConfigError::Invalid(
                "--scheme custom is not available from the command line".to_string(),
            ))
        }
    }
    if matches!(benchmark, BenchmarkKind::Latency | BenchmarkKind::Bandwidth)
        && (num_ps != 1 || num_workers != 1)
    {
        return Err(ConfigError::Invalid(format!(
            "{benchmark} is point-to-point: --num-ps and --num-workers must both be 1 \
             (got {num_ps} and {num_workers})"
        )));
    }

    // Endpoint resolution. Explicit list wins; otherwise consecutive ports
    // from the base. The driver defers when asked for ephemeral ports.
    let ps_endpoints = match (&overlay.ps_endpoints, role) {
        (Some(list), _) => {
            if list.0.len() != num_ps {
                return Err(ConfigError::EndpointCountMismatch {
                    got: list.0.len(),
                    want: num_ps,
                });
            }
            list.0.clone()
        }
        (None, Role::Ps) => Vec::new(),
        (None, Role::Driver) if requested_port == 0 => Vec::new(),
        (None, _) => {
            if u32::from(requested_port) + num_ps as u32 - 1 > u16::MAX as u32 {
                return Err(ConfigError::Invalid(format!(
                    "--port {requested_port} with --num-ps {num_ps} overflows the port range"
                )));
            }
            (0..num_ps as u16)
                .map(|i| Endpoint::new(ip.clone(), requested_port + i))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?
        }
    };

    Ok(ResolvedConfig {
        bench: BenchConfig {
            benchmark,
            ps_endpoints,
            num_ps,
            num_workers,
            mode,
            scheme,
            iovec_count,
            sizes,
            categories,
            bias,
            warmup_secs,
            duration_secs,
            seed,
            repeats,
            direction,
            monitor_interval_ms,
        },
        ip,
        requested_port,
    })
}

/// Express a resolved config as an overlay (used to hand children the
/// driver's effective configuration through a config file).
pub fn overlay_from_config(resolved: &ResolvedConfig) -> ConfigOverlay {
    let cfg = &resolved.bench;
    ConfigOverlay {
        benchmark: Some(cfg.benchmark),
        ip: Some(resolved.ip.clone()),
        port: Some(resolved.requested_port),
        num_ps: Some(cfg.num_ps),
        num_workers: Some(cfg.num_workers),
        mode: Some(cfg.mode),
        scheme: Some(cfg.scheme),
        iovec_count: Some(cfg.iovec_count),
        small: Some(cfg.sizes.small_bytes),
        medium: Some(cfg.sizes.medium_bytes),
        large: Some(cfg.sizes.large_bytes),
        categories: Some(cfg.categories),
        bias: Some(cfg.bias),
        warmup: Some(cfg.warmup_secs),
        duration: Some(cfg.duration_secs),
        seed: Some(cfg.seed),
        repeats: Some(cfg.repeats),
        direction: Some(cfg.direction),
        monitor_interval: Some(cfg.monitor_interval_ms),
        ps_endpoints: None,
    }
}
