//! Async TCP front end around [`RoutingCore`].
//!
//! Every connection gets a reader that feeds the core in arrival order and
//! a writer draining a bounded queue. A full queue drops the frame, which
//! keeps delivery at-most-once without stalling the routing stage. Bridge
//! peers we dial are retried with exponential backoff.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use ensemble_core::automata::native::{Message, MonitorRegistry};
use ensemble_core::EntityId;
use futures::{SinkExt, StreamExt};
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tokio_util::codec::{FramedRead, FramedWrite};
use tokio_util::sync::CancellationToken;

use crate::config::BrokerConfig;
use crate::monitor::MonitorError;
use crate::routing::{LogLine, Peer, RoutingCore};
use crate::wire::{Frame, FrameCodec, FrameType, Status};

pub const BACKOFF_START: Duration = Duration::from_millis(500);
pub const BACKOFF_CAP: Duration = Duration::from_secs(30);
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);

pub type LogSink = Arc<dyn Fn(&LogLine) + Send + Sync>;

pub struct ServeOptions {
    /// Emit `ROUTE` and `EA` lines.
    pub audit: bool,
    /// Seed handed to native monitors.
    pub seed: u64,
    pub registry: MonitorRegistry,
    pub log: LogSink,
    /// Frames buffered per connection before new ones are dropped.
    pub queue_capacity: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            audit: false,
            seed: 0,
            registry: MonitorRegistry::with_builtins(),
            log: Arc::new(|_| {}),
            queue_capacity: 1 << 16,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Monitor(#[from] MonitorError),
}

struct Outlet {
    conn: u64,
    tx: mpsc::Sender<Frame>,
}

/// The core and the outbound queues share one lock so that egress monitor
/// steps and queue order always agree.
struct State {
    core: RoutingCore,
    outlets: HashMap<Peer, Outlet>,
}

struct Shared {
    name: EntityId,
    state: Mutex<State>,
    next_conn: AtomicU64,
    log: LogSink,
    cancel: CancellationToken,
    capacity: usize,
}

impl Shared {
    fn emit(&self, line: LogLine) {
        (self.log)(&line);
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn publish(&self, from: &Peer, topic: String, payload: bytes::Bytes) {
        let routed = {
            let mut st = self.lock();
            let routed = st.core.on_publish(from, Message::new(topic, payload));
            for (to, m) in &routed.out {
                if let Some(o) = st.outlets.get(to) {
                    let _ = o.tx.try_send(Frame::Publish {
                        topic: m.topic.to_string(),
                        payload: m.payload.clone(),
                    });
                }
            }
            routed
        };
        for line in routed.log {
            self.emit(line);
        }
    }
}

/// A running broker. Dropping the handle does not stop it; call
/// [`shutdown`](Self::shutdown).
pub struct BrokerHandle {
    pub name: EntityId,
    pub local_addr: SocketAddr,
    cancel: CancellationToken,
    tasks: JoinHandle<()>,
}

impl BrokerHandle {
    /// Closes the listener and every connection.
    pub async fn shutdown(self) {
        self.cancel.cancel();
        let _ = self.tasks.await;
    }

    /// Resolves once the broker stops.
    pub async fn wait(self) {
        let _ = self.tasks.await;
    }
}

/// Binds, validates monitors, prints `READY` and starts serving.
pub async fn serve(config: BrokerConfig, opts: ServeOptions) -> Result<BrokerHandle, ServeError> {
    let config = Arc::new(config);
    let core = RoutingCore::new(config.clone(), opts.registry, opts.seed, opts.audit)?;
    let listener = TcpListener::bind(config.listen).await.map_err(|source| ServeError::Bind {
        addr: config.listen,
        source,
    })?;
    let local_addr = listener.local_addr().map_err(|source| ServeError::Bind {
        addr: config.listen,
        source,
    })?;
    let cancel = CancellationToken::new();
    let shared = Arc::new(Shared {
        name: config.name.clone(),
        state: Mutex::new(State {
            core,
            outlets: HashMap::new(),
        }),
        next_conn: AtomicU64::new(0),
        log: opts.log,
        cancel: cancel.clone(),
        capacity: opts.queue_capacity.max(1),
    });
    shared.emit(LogLine::Ready {
        name: config.name.to_string(),
        addr: local_addr.to_string(),
    });

    let mut tasks = Vec::new();
    for (peer, decl) in &config.bridges {
        if let Some(addr) = &decl.addr {
            tasks.push(tokio::spawn(dial_loop(shared.clone(), peer.clone(), addr.clone())));
        }
    }
    tasks.push(tokio::spawn(accept_loop(shared.clone(), listener)));
    let tasks = tokio::spawn(async move {
        for t in tasks {
            let _ = t.await;
        }
    });
    Ok(BrokerHandle {
        name: config.name.clone(),
        local_addr,
        cancel,
        tasks,
    })
}

async fn accept_loop(shared: Arc<Shared>, listener: TcpListener) {
    let mut conns = Vec::new();
    loop {
        tokio::select! {
            _ = shared.cancel.cancelled() => break,
            accepted = listener.accept() => {
                if let Ok((stream, _)) = accepted {
                    let _ = stream.set_nodelay(true);
                    conns.push(tokio::spawn(accept_one(shared.clone(), stream)));
                    conns.retain(|c: &JoinHandle<()>| !c.is_finished());
                }
            }
        }
    }
    for c in conns {
        let _ = c.await;
    }
}

async fn accept_one(shared: Arc<Shared>, stream: TcpStream) {
    let (rd, wr) = stream.into_split();
    let mut reader = FramedRead::new(rd, FrameCodec);
    let mut writer = FramedWrite::new(wr, FrameCodec);
    let first = tokio::select! {
        _ = shared.cancel.cancelled() => return,
        f = tokio::time::timeout(HANDSHAKE_TIMEOUT, reader.next()) => f,
    };
    let (client_id, bridge) = match first {
        Ok(Some(Ok(Frame::Connect { client_id, bridge }))) => (client_id, bridge),
        Ok(Some(Err(_))) | Ok(Some(Ok(_))) => {
            let _ = writer.send(Frame::ConnAck(Status::ProtocolError)).await;
            return;
        }
        _ => return,
    };
    let peer = if bridge {
        Peer::Bridge(client_id.as_str().into())
    } else {
        Peer::Client(client_id)
    };
    let status = {
        let mut st = shared.lock();
        let dialed_by_us = match &peer {
            Peer::Bridge(b) => st.core.config().bridges.get(b).is_some_and(|d| d.addr.is_some()),
            Peer::Client(_) => false,
        };
        if dialed_by_us {
            Status::Denied
        } else {
            st.core.on_connect(&peer)
        }
    };
    if writer.send(Frame::ConnAck(status)).await.is_err() || status != Status::Ok {
        return;
    }
    session(&shared, peer, reader, writer).await;
}

async fn dial_loop(shared: Arc<Shared>, peer: EntityId, addr: String) {
    let mut backoff = BACKOFF_START;
    loop {
        let attempt = async {
            let stream = TcpStream::connect(&addr).await.ok()?;
            let _ = stream.set_nodelay(true);
            let (rd, wr) = stream.into_split();
            let mut reader = FramedRead::new(rd, FrameCodec);
            let mut writer = FramedWrite::new(wr, FrameCodec);
            let hello = Frame::Connect {
                client_id: shared.name.to_string(),
                bridge: true,
            };
            writer.send(hello).await.ok()?;
            match tokio::time::timeout(HANDSHAKE_TIMEOUT, reader.next()).await {
                Ok(Some(Ok(Frame::ConnAck(Status::Ok)))) => Some((reader, writer)),
                _ => None,
            }
        };
        let connected = tokio::select! {
            _ = shared.cancel.cancelled() => return,
            c = attempt => c,
        };
        if let Some((reader, writer)) = connected {
            let p = Peer::Bridge(peer.clone());
            shared.lock().core.on_connect(&p);
            session(&shared, p, reader, writer).await;
            backoff = BACKOFF_START;
        }
        tokio::select! {
            _ = shared.cancel.cancelled() => return,
            _ = tokio::time::sleep(backoff) => {}
        }
        backoff = (backoff * 2).min(BACKOFF_CAP);
    }
}

async fn write_loop(mut writer: FramedWrite<OwnedWriteHalf, FrameCodec>, mut rx: mpsc::Receiver<Frame>) {
    while let Some(frame) = rx.recv().await {
        if writer.feed(frame).await.is_err() {
            return;
        }
        while let Ok(frame) = rx.try_recv() {
            if writer.feed(frame).await.is_err() {
                return;
            }
        }
        if writer.flush().await.is_err() {
            return;
        }
    }
}

async fn session(
    shared: &Arc<Shared>,
    peer: Peer,
    mut reader: FramedRead<tokio::net::tcp::OwnedReadHalf, FrameCodec>,
    writer: FramedWrite<OwnedWriteHalf, FrameCodec>,
) {
    let conn = shared.next_conn.fetch_add(1, Ordering::Relaxed);
    let (tx, rx) = mpsc::channel(shared.capacity);
    let writer_task = tokio::spawn(write_loop(writer, rx));
    shared.lock().outlets.insert(peer.clone(), Outlet { conn, tx: tx.clone() });
    if let Peer::Bridge(b) = &peer {
        shared.emit(LogLine::Bridge {
            peer: b.to_string(),
            up: true,
        });
    }

    loop {
        let next = tokio::select! {
            _ = shared.cancel.cancelled() => break,
            n = reader.next() => n,
        };
        match next {
            Some(Ok(Frame::Publish { topic, payload })) => shared.publish(&peer, topic, payload),
            Some(Ok(Frame::Subscribe { topic })) => {
                let status = match &peer {
                    Peer::Client(id) => shared.lock().core.on_subscribe(id, &topic),
                    Peer::Bridge(_) => Status::Ok,
                };
                if tx.send(Frame::SubAck(status)).await.is_err() {
                    break;
                }
            }
            Some(Ok(Frame::Ping)) => {
                if tx.send(Frame::PingAck).await.is_err() {
                    break;
                }
            }
            Some(Ok(Frame::PingAck)) | Some(Ok(Frame::SubAck(_))) | Some(Ok(Frame::ConnAck(_))) => {}
            Some(Ok(Frame::Disconnect)) | None => break,
            Some(Ok(Frame::Connect { .. })) => {
                let _ = tx.send(Frame::ConnAck(Status::ProtocolError)).await;
                break;
            }
            Some(Err(e)) => {
                let reply = match e.frame_type() {
                    Some(FrameType::Subscribe) => Frame::SubAck(Status::ProtocolError),
                    _ => Frame::ConnAck(Status::ProtocolError),
                };
                let _ = tx.send(reply).await;
                break;
            }
        }
    }

    {
        let mut st = shared.lock();
        if st.outlets.get(&peer).is_some_and(|o| o.conn == conn) {
            st.outlets.remove(&peer);
            st.core.on_disconnect(&peer);
        }
    }
    drop(tx);
    let mut writer_task = writer_task;
    tokio::select! {
        _ = &mut writer_task => {}
        _ = shared.cancel.cancelled() => writer_task.abort(),
    }
    if let Peer::Bridge(b) = &peer {
        shared.emit(LogLine::Bridge {
            peer: b.to_string(),
            up: false,
        });
    }
}
