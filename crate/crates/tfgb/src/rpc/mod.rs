//! Parameter-server and worker endpoints over a pluggable reliable
//! byte-stream transport.
//!
//! Workers own one [`Connection`] per parameter server and issue strictly
//! serial request/response calls on it; servers (see [`serve`]) handle any
//! number of connections concurrently, each with per-connection FIFO
//! ordering. Three exchanges exist: echo (latency), put/ack (bandwidth,
//! push throughput), and get (rendezvous-style pull).

mod server;
mod transport;

pub use server::{serve, RunningServer, ServerConfig};
pub use transport::{
    write_all_vectored, CountingStream, NetCounters, ShutdownToken, TcpTransport, Transport,
    TransportListener, TransportStream,
};

use crate::wire::{self, Mode, MsgType, WireError};
use crate::workload::Payload;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;
use thiserror::Error;

/// Default parameter-server port.
pub const DEFAULT_PORT: u16 = 50001;

/// Errors from connections, calls, and serving.
#[derive(Debug, Error)]
pub enum RpcError {
    #[error("invalid endpoint '{0}': expected host:port with port >= 1")]
    InvalidEndpoint(String),
    #[error("failed to bind {host}:{port}: {source}")]
    Bind {
        host: String,
        port: u16,
        source: std::io::Error,
    },
    #[error("failed to connect to {endpoint}: {source}")]
    Connect {
        endpoint: Endpoint,
        source: std::io::Error,
    },
    #[error("transport error: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol error: {0}")]
    Wire(#[from] WireError),
    #[error("response id {got} does not match request id {expected}")]
    RequestIdMismatch { expected: u64, got: u64 },
    #[error("unexpected message type {0:?}")]
    UnexpectedMessage(MsgType),
    #[error("call type {0:?} is not a request")]
    InvalidCallType(MsgType),
    #[error("{0:?} requires a payload")]
    MissingPayload(MsgType),
    #[error("{0:?} must not carry a payload")]
    UnexpectedPayload(MsgType),
}

/// A reachable server address. Port 0 is reserved for "assign me one" on
/// the bind side and is not a valid endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawEndpoint", into = "RawEndpoint")]
pub struct Endpoint {
    pub host: String,
    pub port: u16,
}

#[derive(Serialize, Deserialize)]
struct RawEndpoint {
    host: String,
    port: u16,
}

impl TryFrom<RawEndpoint> for Endpoint {
    type Error = RpcError;

    fn try_from(raw: RawEndpoint) -> Result<Self, Self::Error> {
        Endpoint::new(raw.host, raw.port)
    }
}

impl From<Endpoint> for RawEndpoint {
    fn from(e: Endpoint) -> Self {
        RawEndpoint {
            host: e.host,
            port: e.port,
        }
    }
}

impl Endpoint {
    pub fn new(host: impl Into<String>, port: u16) -> Result<Endpoint, RpcError> {
        let host = host.into();
        if host.is_empty() || port == 0 {
            return Err(RpcError::InvalidEndpoint(format!("{host}:{port}")));
        }
        Ok(Endpoint { host, port })
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

impl FromStr for Endpoint {
    type Err = RpcError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (host, port) = s
            .rsplit_once(':')
            .ok_or_else(|| RpcError::InvalidEndpoint(s.to_string()))?;
        let port: u16 = port
            .parse()
            .map_err(|_| RpcError::InvalidEndpoint(s.to_string()))?;
        Endpoint::new(host, port)
    }
}

/// Result of one blocking call: the response buffer list and the round-trip
/// time from first header byte enqueued to last response byte received.
#[derive(Debug)]
pub struct CallOutcome {
    pub buffers: Vec<Vec<u8>>,
    pub elapsed_ns: u64,
}

/// One established worker-to-server connection. Calls are strictly serial;
/// request ids count up from 1.
pub struct Connection {
    stream: CountingStream,
    endpoint: Endpoint,
    next_request_id: u64,
}

/// Connect with fresh byte counters.
pub fn connect(transport: &dyn Transport, endpoint: &Endpoint) -> Result<Connection, RpcError> {
    connect_with_counters(transport, endpoint, NetCounters::new())
}

/// Connect, attributing this connection's bytes to `counters` (a worker
/// process shares one counter pair across all of its connections).
pub fn connect_with_counters(
    transport: &dyn Transport,
    endpoint: &Endpoint,
    counters: NetCounters,
) -> Result<Connection, RpcError> {
    let stream = transport
        .connect(endpoint)
        .map_err(|source| RpcError::Connect {
            endpoint: endpoint.clone(),
            source,
        })?;
    Ok(Connection {
        stream: CountingStream::new(stream, counters),
        endpoint: endpoint.clone(),
        next_request_id: 0,
    })
}

impl Connection {
    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn counters(&self) -> &NetCounters {
        self.stream.counters()
    }

    /// Issue one blocking request/response exchange.
    ///
    /// `msg_type` must be ECHO_REQ, PUT_REQ, or GET_REQ; the payload must be
    /// present exactly when the request carries one (GET_REQ sends an empty
    /// buffer list). The round-trip is timed on the monotonic clock.
    pub fn call(
        &mut self,
        msg_type: MsgType,
        payload: Option<&Payload>,
        mode: Mode,
    ) -> Result<CallOutcome, RpcError> {
        let expected_response = match msg_type {
            MsgType::EchoReq => MsgType::EchoResp,
            MsgType::PutReq => MsgType::Ack,
            MsgType::GetReq => MsgType::GetResp,
            other => return Err(RpcError::InvalidCallType(other)),
        };
        match (msg_type, payload) {
            (MsgType::GetReq, Some(_)) => return Err(RpcError::UnexpectedPayload(msg_type)),
            (MsgType::EchoReq | MsgType::PutReq, None) => {
                return Err(RpcError::MissingPayload(msg_type))
            }
            _ => {}
        }
        static NO_BUFFERS: Vec<Vec<u8>> = Vec::new();
        let buffers: &[Vec<u8>] = payload.map(|p| p.buffers()).unwrap_or(&NO_BUFFERS);

        self.next_request_id += 1;
        let request_id = self.next_request_id;

        let start = Instant::now();
        match mode {
            Mode::NonSerialized => {
                let segments = wire::encode_nonserialized(buffers, msg_type, request_id)?;
                write_all_vectored(&mut self.stream, &segments.io_slices())?;
            }
            Mode::Serialized => {
                let frame = wire::encode_serialized(buffers, msg_type, request_id)?;
                self.stream.write_all(&frame)?;
            }
        }
        self.stream.flush()?;
        let response = wire::read_frame(&mut self.stream)?;
        let elapsed_ns = start.elapsed().as_nanos() as u64;

        if response.request_id != request_id {
            return Err(RpcError::RequestIdMismatch {
                expected: request_id,
                got: response.request_id,
            });
        }
        if response.msg_type != expected_response {
            return Err(RpcError::UnexpectedMessage(response.msg_type));
        }
        Ok(CallOutcome {
            buffers: response.buffers,
            elapsed_ns,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{
        generate_random, generate_uniform, materialize, BufferSizeConfig, CategorySet,
    };
    use std::sync::Arc;

    fn small_sizes() -> BufferSizeConfig {
        BufferSizeConfig {
            small_bytes: 16,
            medium_bytes: 2048,
            large_bytes: 1_048_576,
        }
    }

    fn start_server(mode: Mode) -> RunningServer {
        let spec = generate_uniform(
            CategorySet::of(&[crate::workload::BufferCategory::Small]),
            2,
            &small_sizes(),
            7,
        )
        .unwrap();
        serve(
            &ServerConfig {
                bind_host: "127.0.0.1".to_string(),
                bind_port: 0,
                response_spec: spec,
                mode,
            },
            Arc::new(TcpTransport),
        )
        .unwrap()
    }

    #[test]
    fn echo_round_trip_both_modes() {
        let server = start_server(Mode::NonSerialized);
        let mut conn = connect(&TcpTransport, server.endpoint()).unwrap();
        let spec = generate_uniform(
            CategorySet::of(&[
                crate::workload::BufferCategory::Small,
                crate::workload::BufferCategory::Medium,
            ]),
            4,
            &small_sizes(),
            3,
        )
        .unwrap();
        let payload = materialize(&spec);
        for mode in [Mode::NonSerialized, Mode::Serialized] {
            let outcome = conn.call(MsgType::EchoReq, Some(&payload), mode).unwrap();
            assert_eq!(outcome.buffers, payload.buffers());
            assert!(outcome.elapsed_ns > 0);
        }
        server.stop();
    }

    #[test]
    fn echo_fidelity_over_random_specs_and_seeds() {
        use crate::workload::SplitMix64;
        let server = start_server(Mode::NonSerialized);
        let mut conn = connect(&TcpTransport, server.endpoint()).unwrap();
        let mut rng = SplitMix64::new(0xEC40);
        for round in 0..24 {
            let sizes = BufferSizeConfig {
                small_bytes: 1 + rng.next_u64() % 1023,
                medium_bytes: 1024 + rng.next_u64() % 30_000,
                large_bytes: 1_048_576,
            };
            let count = 1 + (rng.next_u64() % 8) as usize;
            let seed = rng.next_u64();
            let spec = if round % 2 == 0 {
                generate_uniform(CategorySet::ALL, count, &sizes, seed).unwrap()
            } else {
                generate_random(CategorySet::ALL, count, &sizes, seed).unwrap()
            };
            let payload = materialize(&spec);
            let mode = if round % 4 < 2 {
                Mode::NonSerialized
            } else {
                Mode::Serialized
            };
            let outcome = conn.call(MsgType::EchoReq, Some(&payload), mode).unwrap();
            assert_eq!(outcome.buffers, payload.buffers(), "round {round}");
        }
        server.stop();
    }

    #[test]
    fn call_payload_presence_is_enforced() {
        let server = start_server(Mode::NonSerialized);
        let mut conn = connect(&TcpTransport, server.endpoint()).unwrap();
        let payload = materialize(
            &generate_uniform(
                CategorySet::of(&[crate::workload::BufferCategory::Small]),
                1,
                &small_sizes(),
                1,
            )
            .unwrap(),
        );
        assert!(matches!(
            conn.call(MsgType::GetReq, Some(&payload), Mode::NonSerialized),
            Err(RpcError::UnexpectedPayload(MsgType::GetReq))
        ));
        assert!(matches!(
            conn.call(MsgType::EchoReq, None, Mode::NonSerialized),
            Err(RpcError::MissingPayload(MsgType::EchoReq))
        ));
        assert!(matches!(
            conn.call(MsgType::Ack, None, Mode::NonSerialized),
            Err(RpcError::InvalidCallType(MsgType::Ack))
        ));
        server.stop();
    }

    #[test]
    fn put_returns_empty_ack() {
        let server = start_server(Mode::NonSerialized);
        let mut conn = connect(&TcpTransport, server.endpoint()).unwrap();
        let spec = generate_uniform(
            CategorySet::of(&[crate::workload::BufferCategory::Small]),
            1,
            &small_sizes(),
            1,
        )
        .unwrap();
        let payload = materialize(&spec);
        let outcome = conn
            .call(MsgType::PutReq, Some(&payload), Mode::NonSerialized)
            .unwrap();
        assert!(outcome.buffers.is_empty());
        server.stop();
    }

    #[test]
    fn get_returns_configured_payload() {
        let spec = generate_random(
            CategorySet::of(&[
                crate::workload::BufferCategory::Small,
                crate::workload::BufferCategory::Medium,
            ]),
            5,
            &small_sizes(),
            99,
        )
        .unwrap();
        let server = serve(
            &ServerConfig {
                bind_host: "127.0.0.1".to_string(),
                bind_port: 0,
                response_spec: spec.clone(),
                mode: Mode::NonSerialized,
            },
            Arc::new(TcpTransport),
        )
        .unwrap();
        let mut conn = connect(&TcpTransport, server.endpoint()).unwrap();
        let outcome = conn
            .call(MsgType::GetReq, None, Mode::NonSerialized)
            .unwrap();
        // Oracle: materialize the same spec locally.
        let expected = materialize(&spec);
        assert_eq!(outcome.buffers, expected.buffers());
        server.stop();
    }

    #[test]
    fn request_ids_count_up_and_match() {
        let server = start_server(Mode::NonSerialized);
        let mut conn = connect(&TcpTransport, server.endpoint()).unwrap();
        let spec = generate_uniform(
            CategorySet::of(&[crate::workload::BufferCategory::Small]),
            1,
            &small_sizes(),
            5,
        )
        .unwrap();
        let payload = materialize(&spec);
        for _ in 1..=5u64 {
            conn.call(MsgType::EchoReq, Some(&payload), Mode::NonSerialized)
                .unwrap();
        }
        assert_eq!(conn.next_request_id, 5);
        server.stop();
    }

    #[test]
    fn connect_to_unbound_port_fails() {
        // Bind then drop a listener to find a port that is very likely dead.
        let port = {
            let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        let endpoint = Endpoint::new("127.0.0.1", port).unwrap();
        let err = match connect(&TcpTransport, &endpoint) {
            Ok(_) => panic!("connect to unbound port should fail"),
            Err(err) => err,
        };
        assert!(matches!(err, RpcError::Connect { .. }), "{err}");
    }

    #[test]
    fn call_after_server_stop_fails() {
        let server = start_server(Mode::NonSerialized);
        let endpoint = server.endpoint().clone();
        let mut conn = connect(&TcpTransport, &endpoint).unwrap();
        let spec = generate_uniform(
            CategorySet::of(&[crate::workload::BufferCategory::Small]),
            1,
            &small_sizes(),
            5,
        )
        .unwrap();
        let payload = materialize(&spec);
        conn.call(MsgType::EchoReq, Some(&payload), Mode::NonSerialized)
            .unwrap();
        server.stop();
        let err = conn
            .call(MsgType::EchoReq, Some(&payload), Mode::NonSerialized)
            .unwrap_err();
        assert!(matches!(err, RpcError::Io(_) | RpcError::Wire(_)), "{err}");
    }

    #[test]
    fn malformed_frame_does_not_disturb_other_connections() {
        let server = start_server(Mode::NonSerialized);
        let mut good = connect(&TcpTransport, server.endpoint()).unwrap();
        let spec = generate_uniform(
            CategorySet::of(&[crate::workload::BufferCategory::Small]),
            1,
            &small_sizes(),
            5,
        )
        .unwrap();
        let payload = materialize(&spec);
        good.call(MsgType::EchoReq, Some(&payload), Mode::NonSerialized)
            .unwrap();

        // Pour garbage down a second connection; the server should close it.
        let mut bad =
            std::net::TcpStream::connect((server.endpoint().host.as_str(), server.endpoint().port))
                .unwrap();
        bad.write_all(b"XXXXGARBAGEGARBAGEGARBAGE").unwrap();
        bad.flush().unwrap();

        // The good connection keeps working.
        for _ in 0..3 {
            let outcome = good
                .call(MsgType::EchoReq, Some(&payload), Mode::NonSerialized)
                .unwrap();
            assert_eq!(outcome.buffers, payload.buffers());
        }
        server.stop();
    }

    #[test]
    fn byte_counters_account_frames_exactly() {
        let server = start_server(Mode::NonSerialized);
        let counters = NetCounters::new();
        let mut conn =
            connect_with_counters(&TcpTransport, server.endpoint(), counters.clone()).unwrap();
        let spec = generate_uniform(
            CategorySet::of(&[crate::workload::BufferCategory::Small]),
            2,
            &small_sizes(),
            5,
        )
        .unwrap();
        let payload = materialize(&spec);
        conn.call(MsgType::PutReq, Some(&payload), Mode::NonSerialized)
            .unwrap();
        // Request: header + count + 2 * (prefix + 16 bytes); response: bare ACK header.
        let request_len = 24 + 4 + 2 * (4 + 16);
        assert_eq!(counters.tx_bytes(), request_len);
        assert_eq!(counters.rx_bytes(), 24);
        server.stop();
    }

    #[test]
    fn endpoint_parsing_and_validation() {
        let e: Endpoint = "10.0.0.1:50001".parse().unwrap();
        assert_eq!(e.host, "10.0.0.1");
        assert_eq!(e.port, 50001);
        assert_eq!(e.to_string(), "10.0.0.1:50001");
        assert!("nohost".parse::<Endpoint>().is_err());
        assert!("h:0".parse::<Endpoint>().is_err());
        assert!(Endpoint::new("h", 0).is_err());
    }
}
