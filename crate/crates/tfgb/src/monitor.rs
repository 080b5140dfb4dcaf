//! Per-process resource sampling.
//!
//! A sampler thread wakes on a fixed interval and records CPU utilization,
//! resident memory, and the benchmark's own transport byte counters into a
//! bounded queue (oldest samples are dropped on overflow and counted, so
//! emission can never block RPC progress). CPU and memory come from the OS
//! process-statistics facility; on platforms without one the fields are
//! reported as unavailable and the series still carries the net counters.

use crate::rpc::NetCounters;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};
use thiserror::Error;

/// Smallest supported sampling interval.
pub const MIN_INTERVAL_MS: u64 = 10;
/// Default sampling interval.
pub const DEFAULT_INTERVAL_MS: u64 = 100;

/// Queue bound; at the default interval this holds more than 13 minutes.
const QUEUE_CAP: usize = 8192;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MonitorError {
    #[error("monitor interval must be at least {MIN_INTERVAL_MS} ms, got {0}")]
    IntervalTooSmall(u64),
}

/// Which benchmark phase a sample falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Measure,
}

/// One timestamped reading of a process's resource usage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceSample {
    /// Milliseconds since the session started.
    pub t_ms: u64,
    /// Process CPU over the last interval, in percent of one core;
    /// `None` when the OS facility is unavailable.
    pub cpu_percent: Option<f64>,
    /// Resident set size in bytes; `None` when unavailable.
    pub rss_bytes: Option<u64>,
    /// Cumulative transport bytes written by this process.
    pub net_tx_bytes: u64,
    /// Cumulative transport bytes read by this process.
    pub net_rx_bytes: u64,
    pub phase: Phase,
}

/// An ordered, phase-annotated sample series.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResourceSeries {
    pub samples: Vec<ResourceSample>,
    /// Samples discarded because the bounded queue overflowed.
    pub dropped: u64,
}

struct RawSample {
    t_ms: u64,
    cpu_percent: Option<f64>,
    rss_bytes: Option<u64>,
    net_tx_bytes: u64,
    net_rx_bytes: u64,
}

struct Shared {
    queue: Mutex<VecDeque<RawSample>>,
    dropped: AtomicU64,
    stop: AtomicBool,
}

/// A running sampling session; stop it to collect the series.
pub struct MonitorSession {
    shared: Arc<Shared>,
    thread: Option<JoinHandle<()>>,
}

/// Start sampling every `interval_ms` until stopped.
pub fn start_monitor(interval_ms: u64, net: NetCounters) -> Result<MonitorSession, MonitorError> {
    if interval_ms < MIN_INTERVAL_MS {
        return Err(MonitorError::IntervalTooSmall(interval_ms));
    }
    let shared = Arc::new(Shared {
        queue: Mutex::new(VecDeque::new()),
        dropped: AtomicU64::new(0),
        stop: AtomicBool::new(false),
    });
    let thread_shared = shared.clone();
    let thread = std::thread::Builder::new()
        .name("monitor".to_string())
        .spawn(move || sample_loop(thread_shared, interval_ms, net))
        .expect("spawn monitor thread");
    Ok(MonitorSession {
        shared,
        thread: Some(thread),
    })
}

fn sample_loop(shared: Arc<Shared>, interval_ms: u64, net: NetCounters) {
    let start = Instant::now();
    let interval = Duration::from_millis(interval_ms);
    let mut last_cpu = read_cpu_seconds();
    let mut last_wall = start;
    let mut tick = 1u32;
    while !shared.stop.load(Ordering::SeqCst) {
        let target = start + interval * tick;
        tick += 1;
        let now = Instant::now();
        if target > now {
            std::thread::sleep(target - now);
        }
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }

        let wall = Instant::now();
        let cpu = read_cpu_seconds();
        let cpu_percent = match (last_cpu, cpu) {
            (Some(prev), Some(cur)) => {
                let dwall = wall.duration_since(last_wall).as_secs_f64();
                (dwall > 0.0).then(|| ((cur - prev) / dwall * 100.0).max(0.0))
            }
            _ => None,
        };
        last_cpu = cpu;
        last_wall = wall;

        let sample = RawSample {
            t_ms: start.elapsed().as_millis() as u64,
            cpu_percent,
            rss_bytes: read_rss_bytes(),
            net_tx_bytes: net.tx_bytes(),
            net_rx_bytes: net.rx_bytes(),
        };
        let mut queue = shared.queue.lock().unwrap();
        if queue.len() >= QUEUE_CAP {
            queue.pop_front();
            shared.dropped.fetch_add(1, Ordering::Relaxed);
        }
        queue.push_back(sample);
    }
}

impl MonitorSession {
    /// Stop sampling and return the series, annotating each sample's phase
    /// against the benchmark's warmup boundary.
    pub fn stop(mut self, warmup_boundary: Duration) -> ResourceSeries {
        self.shared.stop.store(true, Ordering::SeqCst);
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
        let boundary_ms = warmup_boundary.as_millis() as u64;
        let samples = self
            .shared
            .queue
            .lock()
            .unwrap()
            .drain(..)
            .map(|raw| ResourceSample {
                t_ms: raw.t_ms,
                cpu_percent: raw.cpu_percent,
                rss_bytes: raw.rss_bytes,
                net_tx_bytes: raw.net_tx_bytes,
                net_rx_bytes: raw.net_rx_bytes,
                phase: if raw.t_ms < boundary_ms {
                    Phase::Warmup
                } else {
                    Phase::Measure
                },
            })
            .collect();
        ResourceSeries {
            samples,
            dropped: self.shared.dropped.load(Ordering::Relaxed),
        }
    }
}

impl Drop for MonitorSession {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

/// Total CPU seconds (user + system) consumed by this process.
#[cfg(target_os = "linux")]
fn read_cpu_seconds() -> Option<f64> {
    let stat = std::fs::read_to_string("/proc/self/stat").ok()?;
    // Fields (14) utime and (15) stime follow the parenthesized comm, which
    // may itself contain spaces; skip past the closing paren.
    let rest = &stat[stat.rfind(')')? + 2..];
    let mut fields = rest.split_ascii_whitespace();
    let utime: u64 = fields.nth(11)?.parse().ok()?;
    let stime: u64 = fields.next()?.parse().ok()?;
    let ticks_per_sec = unsafe { libc::sysconf(libc::_SC_CLK_TCK) };
    if ticks_per_sec <= 0 {
        return None;
    }
    Some((utime + stime) as f64 / ticks_per_sec as f64)
}

#[cfg(not(target_os = "linux"))]
fn read_cpu_seconds() -> Option<f64> {
    None
}

/// Resident set size of this process, in bytes.
#[cfg(target_os = "linux")]
fn read_rss_bytes() -> Option<u64> {
    let statm = std::fs::read_to_string("/proc/self/statm").ok()?;
    let pages: u64 = statm.split_ascii_whitespace().nth(1)?.parse().ok()?;
    let page_size = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    if page_size <= 0 {
        return None;
    }
    Some(pages * page_size as u64)
}

#[cfg(not(target_os = "linux"))]
fn read_rss_bytes() -> Option<u64> {
    None
}
