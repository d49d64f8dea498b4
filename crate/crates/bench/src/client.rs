//! Async client for the broker wire protocol.

use std::collections::VecDeque;
use std::time::Duration;

use bytes::Bytes;
use ensemble_broker::wire::{Frame, FrameCodec, Status, WireError};
use futures::{SinkExt, StreamExt};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpStream, ToSocketAddrs};
use tokio_util::codec::{FramedRead, FramedWrite};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("connection failed: {0}")]
    Connect(#[source] std::io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("broker answered {0:?}")]
    Refused(Status),
    #[error("connection closed")]
    Closed,
    #[error("unexpected {0:?} frame")]
    Unexpected(Frame),
}

/// A received publication.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub topic: String,
    pub payload: Bytes,
}

pub struct ClientReader {
    reader: FramedRead<OwnedReadHalf, FrameCodec>,
    pending: VecDeque<Delivery>,
}

pub struct ClientWriter {
    writer: FramedWrite<OwnedWriteHalf, FrameCodec>,
}

pub struct Client {
    reader: ClientReader,
    writer: ClientWriter,
}

impl Client {
    /// Connects and completes the handshake as client `id`.
    pub async fn connect(addr: impl ToSocketAddrs, id: &str) -> Result<Client, ClientError> {
        let stream = TcpStream::connect(addr).await.map_err(ClientError::Connect)?;
        let _ = stream.set_nodelay(true);
        let (rd, wr) = stream.into_split();
        let mut client = Client {
            reader: ClientReader {
                reader: FramedRead::new(rd, FrameCodec),
                pending: VecDeque::new(),
            },
            writer: ClientWriter {
                writer: FramedWrite::new(wr, FrameCodec),
            },
        };
        client
            .writer
            .send(Frame::Connect {
                client_id: id.to_owned(),
                bridge: false,
            })
            .await?;
        match client.reader.next_frame().await? {
            Frame::ConnAck(Status::Ok) => Ok(client),
            Frame::ConnAck(s) => Err(ClientError::Refused(s)),
            other => Err(ClientError::Unexpected(other)),
        }
    }

    /// Subscribes and waits for the acknowledgement. Publications that
    /// arrive first are kept for [`recv`](Self::recv).
    pub async fn subscribe(&mut self, topic: &str) -> Result<(), ClientError> {
        self.writer
            .send(Frame::Subscribe {
                topic: topic.to_owned(),
            })
            .await?;
        loop {
            match self.reader.next_frame().await? {
                Frame::SubAck(Status::Ok) => return Ok(()),
                Frame::SubAck(s) => return Err(ClientError::Refused(s)),
                Frame::Publish { topic, payload } => self.reader.pending.push_back(Delivery { topic, payload }),
                Frame::PingAck => {}
                other => return Err(ClientError::Unexpected(other)),
            }
        }
    }

    pub async fn publish(&mut self, topic: &str, payload: impl Into<Bytes>) -> Result<(), ClientError> {
        self.writer.publish(topic, payload).await
    }

    /// Round-trips a ping, which orders after every frame sent before it.
    pub async fn ping(&mut self) -> Result<(), ClientError> {
        self.writer.send(Frame::Ping).await?;
        loop {
            match self.reader.next_frame().await? {
                Frame::PingAck => return Ok(()),
                Frame::Publish { topic, payload } => self.reader.pending.push_back(Delivery { topic, payload }),
                other => return Err(ClientError::Unexpected(other)),
            }
        }
    }

    pub async fn recv(&mut self) -> Result<Delivery, ClientError> {
        self.reader.recv().await
    }

    pub async fn recv_timeout(&mut self, wait: Duration) -> Result<Option<Delivery>, ClientError> {
        self.reader.recv_timeout(wait).await
    }

    pub async fn disconnect(mut self) -> Result<(), ClientError> {
        self.writer.send(Frame::Disconnect).await
    }

    pub fn split(self) -> (ClientReader, ClientWriter) {
        (self.reader, self.writer)
    }
}

impl ClientReader {
    async fn next_frame(&mut self) -> Result<Frame, ClientError> {
        match self.reader.next().await {
            Some(f) => Ok(f?),
            None => Err(ClientError::Closed),
        }
    }

    pub async fn recv(&mut self) -> Result<Delivery, ClientError> {
        if let Some(d) = self.pending.pop_front() {
            return Ok(d);
        }
        loop {
            match self.next_frame().await? {
                Frame::Publish { topic, payload } => return Ok(Delivery { topic, payload }),
                Frame::PingAck | Frame::SubAck(_) => {}
                other => return Err(ClientError::Unexpected(other)),
            }
        }
    }

    /// `Ok(None)` when nothing arrives within `wait`.
    pub async fn recv_timeout(&mut self, wait: Duration) -> Result<Option<Delivery>, ClientError> {
        match tokio::time::timeout(wait, self.recv()).await {
            Ok(r) => r.map(Some),
            Err(_) => Ok(None),
        }
    }
}

impl ClientWriter {
    async fn send(&mut self, frame: Frame) -> Result<(), ClientError> {
        Ok(self.writer.send(frame).await?)
    }

    pub async fn publish(&mut self, topic: &str, payload: impl Into<Bytes>) -> Result<(), ClientError> {
        self.send(Frame::publish(topic, payload)).await
    }

    /// Queues without flushing; pair with [`flush`](Self::flush).
    pub async fn feed(&mut self, topic: &str, payload: Bytes) -> Result<(), ClientError> {
        Ok(self.writer.feed(Frame::publish(topic, payload)).await?)
    }

    pub async fn flush(&mut self) -> Result<(), ClientError> {
        Ok(self.writer.flush().await?)
    }
}
