//! Parameter-server endpoint.
//!
//! The server accepts any number of concurrent worker connections and
//! handles each on its own thread with exclusive stream ownership. Per
//! frame: ECHO_REQ is answered with an ECHO_RESP carrying the identical
//! buffer list, PUT_REQ with a bodiless ACK, and GET_REQ with a GET_RESP
//! carrying the pre-materialized response payload. Responses always echo
//! the request's id; echo responses are encoded in the request's mode,
//! GET_RESP in the server's configured mode. A malformed frame closes that
//! connection only; other connections keep being served.

use super::transport::{write_all_vectored, CountingStream, NetCounters, ShutdownToken, Transport};
use super::{Endpoint, RpcError};
use crate::wire::{self, Mode, MsgType};
use crate::workload::{materialize, Payload, PayloadSpec};
use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

/// Parameter-server configuration.
#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Host to bind; port 0 requests an ephemeral port.
    pub bind_host: String,
    pub bind_port: u16,
    /// Payload served in GET_RESP bodies.
    pub response_spec: PayloadSpec,
    /// Encoding mode for GET_RESP bodies. Echo and ACK responses follow the
    /// request's own mode byte instead.
    pub mode: Mode,
}

/// A running server; stops (and joins all threads) on [`RunningServer::stop`].
pub struct RunningServer {
    endpoint: Endpoint,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
    shared: Arc<ServerShared>,
    transport: Arc<dyn Transport>,
}

struct ServerShared {
    response: Payload,
    get_resp_mode: Mode,
    counters: NetCounters,
    stop: Arc<AtomicBool>,
    conn_threads: Mutex<Vec<JoinHandle<()>>>,
    conn_tokens: Mutex<Vec<Box<dyn ShutdownToken>>>,
}

/// Bind and start serving until [`RunningServer::stop`] is called.
pub fn serve(
    config: &ServerConfig,
    transport: Arc<dyn Transport>,
) -> Result<RunningServer, RpcError> {
    let listener = transport
        .listen(&config.bind_host, config.bind_port)
        .map_err(|source| RpcError::Bind {
            host: config.bind_host.clone(),
            port: config.bind_port,
            source,
        })?;
    let endpoint = listener.local_endpoint().map_err(|source| RpcError::Bind {
        host: config.bind_host.clone(),
        port: config.bind_port,
        source,
    })?;

    let stop = Arc::new(AtomicBool::new(false));
    let shared = Arc::new(ServerShared {
        response: materialize(&config.response_spec),
        get_resp_mode: config.mode,
        counters: NetCounters::new(),
        stop: stop.clone(),
        conn_threads: Mutex::new(Vec::new()),
        conn_tokens: Mutex::new(Vec::new()),
    });

    let accept_shared = shared.clone();
    let accept_thread = std::thread::Builder::new()
        .name("ps-accept".to_string())
        .spawn(move || {
            while !accept_shared.stop.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok(stream) => {
                        if accept_shared.stop.load(Ordering::SeqCst) {
                            break;
                        }
                        spawn_handler(&accept_shared, stream);
                    }
                    Err(err) => {
                        if accept_shared.stop.load(Ordering::SeqCst) {
                            break;
                        }
                        log::warn!("accept failed: {err}");
                    }
                }
            }
        })
        .expect("spawn accept thread");

    Ok(RunningServer {
        endpoint,
        stop,
        accept_thread: Some(accept_thread),
        shared,
        transport,
    })
}

fn spawn_handler(shared: &Arc<ServerShared>, stream: Box<dyn super::transport::TransportStream>) {
    if let Ok(token) = stream.shutdown_token() {
        shared.conn_tokens.lock().unwrap().push(token);
    }
    let conn_shared = shared.clone();
    let handle = std::thread::Builder::new()
        .name("ps-conn".to_string())
        .spawn(move || {
            let mut stream = CountingStream::new(stream, conn_shared.counters.clone());
            if let Err(err) = handle_connection(&mut stream, &conn_shared) {
                if !conn_shared.stop.load(Ordering::SeqCst) {
                    log::warn!("connection closed: {err}");
                }
            }
        })
        .expect("spawn connection thread");
    shared.conn_threads.lock().unwrap().push(handle);
}

fn handle_connection(stream: &mut CountingStream, shared: &ServerShared) -> Result<(), RpcError> {
    loop {
        let frame = match wire::read_frame(stream) {
            Ok(frame) => frame,
            Err(wire::WireError::Io(err)) if err.kind() == std::io::ErrorKind::UnexpectedEof => {
                // Peer hung up between frames: normal shutdown.
                return Ok(());
            }
            Err(err) => return Err(err.into()),
        };
        match frame.msg_type {
            MsgType::EchoReq => {
                write_buffers(
                    stream,
                    &frame.buffers,
                    MsgType::EchoResp,
                    frame.mode,
                    frame.request_id,
                )?;
            }
            MsgType::PutReq => {
                stream.write_all(&wire::encode_ack(frame.mode, frame.request_id))?;
                stream.flush()?;
            }
            MsgType::GetReq => {
                write_buffers(
                    stream,
                    shared.response.buffers(),
                    MsgType::GetResp,
                    shared.get_resp_mode,
                    frame.request_id,
                )?;
            }
            other => return Err(RpcError::UnexpectedMessage(other)),
        }
    }
}

fn write_buffers<B: AsRef<[u8]>>(
    stream: &mut CountingStream,
    buffers: &[B],
    msg_type: MsgType,
    mode: Mode,
    request_id: u64,
) -> Result<(), RpcError> {
    match mode {
        Mode::NonSerialized => {
            let segments = wire::encode_nonserialized(buffers, msg_type, request_id)?;
            write_all_vectored(stream, &segments.io_slices())?;
        }
        Mode::Serialized => {
            let frame = wire::encode_serialized(buffers, msg_type, request_id)?;
            stream.write_all(&frame)?;
        }
    }
    stream.flush()?;
    Ok(())
}

impl RunningServer {
    /// The bound endpoint (with the actual port when 0 was requested).
    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// This server's transmitted/received byte counters.
    pub fn net_counters(&self) -> NetCounters {
        self.shared.counters.clone()
    }

    /// Stop accepting, shut down live connections, and join all threads.
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept with a throwaway connection.
        let _ = self.transport.connect(&self.endpoint);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
        for token in self.shared.conn_tokens.lock().unwrap().drain(..) {
            let _ = token.shutdown();
        }
        let threads: Vec<JoinHandle<()>> =
            self.shared.conn_threads.lock().unwrap().drain(..).collect();
        for handle in threads {
            let _ = handle.join();
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        if self.accept_thread.is_some() {
            self.shutdown();
        }
    }
}
