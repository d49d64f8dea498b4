//! Length-prefixed binary framing, big-endian throughout:
//!
//! ```text
//! [type: u8][flags: u8][length: u32][body: length bytes]
//! Connect    body = [idLen: u16][clientId]
//! Subscribe  body = [topicLen: u16][topic]
//! Publish    body = [topicLen: u16][topic][payload]
//! ConnAck    body = [status: u8]
//! SubAck     body = [status: u8]
//! Ping, PingAck, Disconnect: empty body
//! ```

use bytes::{Buf, BufMut, Bytes, BytesMut};
use tokio_util::codec::{Decoder, Encoder};

pub const HEADER_LEN: usize = 6;
pub const MAX_TOPIC_LEN: usize = u16::MAX as usize;
pub const MAX_PAYLOAD_LEN: usize = (1 << 24) - 1;
/// Largest body any well-formed frame can carry.
pub const MAX_BODY_LEN: usize = 2 + MAX_TOPIC_LEN + MAX_PAYLOAD_LEN;
/// Connect flag marking the dialer as a peer broker rather than a client.
pub const FLAG_BRIDGE: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum FrameType {
    Connect = 1,
    ConnAck = 2,
    Subscribe = 3,
    SubAck = 4,
    Publish = 5,
    Ping = 6,
    PingAck = 7,
    Disconnect = 8,
}

impl FrameType {
    pub fn from_code(code: u8) -> Option<FrameType> {
        Some(match code {
            1 => FrameType::Connect,
            2 => FrameType::ConnAck,
            3 => FrameType::Subscribe,
            4 => FrameType::SubAck,
            5 => FrameType::Publish,
            6 => FrameType::Ping,
            7 => FrameType::PingAck,
            8 => FrameType::Disconnect,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    Denied = 1,
    ProtocolError = 2,
}

impl Status {
    pub fn from_code(code: u8) -> Option<Status> {
        Some(match code {
            0 => Status::Ok,
            1 => Status::Denied,
            2 => Status::ProtocolError,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Connect { client_id: String, bridge: bool },
    ConnAck(Status),
    Subscribe { topic: String },
    SubAck(Status),
    Publish { topic: String, payload: Bytes },
    Ping,
    PingAck,
    Disconnect,
}

impl Frame {
    pub fn frame_type(&self) -> FrameType {
        match self {
            Frame::Connect { .. } => FrameType::Connect,
            Frame::ConnAck(_) => FrameType::ConnAck,
            Frame::Subscribe { .. } => FrameType::Subscribe,
            Frame::SubAck(_) => FrameType::SubAck,
            Frame::Publish { .. } => FrameType::Publish,
            Frame::Ping => FrameType::Ping,
            Frame::PingAck => FrameType::PingAck,
            Frame::Disconnect => FrameType::Disconnect,
        }
    }

    pub fn publish(topic: impl Into<String>, payload: impl Into<Bytes>) -> Frame {
        Frame::Publish {
            topic: topic.into(),
            payload: payload.into(),
        }
    }

    /// Serialises to a fresh buffer.
    pub fn to_bytes(&self) -> Result<Bytes, WireError> {
        let mut buf = BytesMut::new();
        FrameCodec.encode(self.clone(), &mut buf)?;
        Ok(buf.freeze())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("unknown frame type {0}")]
    UnknownType(u8),
    #[error("unknown status code {0}")]
    UnknownStatus(u8),
    #[error("{frame:?} frame malformed: {reason}")]
    Malformed { frame: FrameType, reason: String },
    #[error("frame body of {0} bytes exceeds the maximum")]
    TooLong(usize),
    #[error("topic of {0} bytes exceeds {MAX_TOPIC_LEN}")]
    TopicTooLong(usize),
    #[error("payload of {0} bytes exceeds {MAX_PAYLOAD_LEN}")]
    PayloadTooLong(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl WireError {
    /// The frame type whose decoding failed, when known.
    pub fn frame_type(&self) -> Option<FrameType> {
        match self {
            WireError::Malformed { frame, .. } => Some(*frame),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FrameCodec;

fn malformed(frame: FrameType, reason: impl Into<String>) -> WireError {
    WireError::Malformed {
        frame,
        reason: reason.into(),
    }
}

fn put_string(dst: &mut BytesMut, s: &str) {
    dst.put_u16(s.len() as u16);
    dst.put_slice(s.as_bytes());
}

/// Reads `[len: u16][utf-8 bytes]` off the front of `body`.
fn take_string(frame: FrameType, body: &mut Bytes) -> Result<String, WireError> {
    if body.len() < 2 {
        return Err(malformed(frame, "missing string length"));
    }
    let n = body.get_u16() as usize;
    if body.len() < n {
        return Err(malformed(frame, format!("string length {n} exceeds body")));
    }
    let raw = body.split_to(n);
    String::from_utf8(raw.to_vec()).map_err(|_| malformed(frame, "string is not utf-8"))
}

fn take_status(frame: FrameType, body: &Bytes) -> Result<Status, WireError> {
    match body.as_ref() {
        [code] => Status::from_code(*code).ok_or(WireError::UnknownStatus(*code)),
        _ => Err(malformed(frame, "status body must be one byte")),
    }
}

impl Encoder<Frame> for FrameCodec {
    type Error = WireError;

    fn encode(&mut self, frame: Frame, dst: &mut BytesMut) -> Result<(), WireError> {
        let (flags, body_len) = match &frame {
            Frame::Connect { client_id, bridge } => {
                if client_id.len() > MAX_TOPIC_LEN {
                    return Err(WireError::TopicTooLong(client_id.len()));
                }
                (if *bridge { FLAG_BRIDGE } else { 0 }, 2 + client_id.len())
            }
            Frame::Subscribe { topic } | Frame::Publish { topic, .. } if topic.len() > MAX_TOPIC_LEN => {
                return Err(WireError::TopicTooLong(topic.len()));
            }
            Frame::Publish { payload, .. } if payload.len() > MAX_PAYLOAD_LEN => {
                return Err(WireError::PayloadTooLong(payload.len()));
            }
            Frame::Subscribe { topic } => (0, 2 + topic.len()),
            Frame::Publish { topic, payload } => (0, 2 + topic.len() + payload.len()),
            Frame::ConnAck(_) | Frame::SubAck(_) => (0, 1),
            Frame::Ping | Frame::PingAck | Frame::Disconnect => (0, 0),
        };
        dst.reserve(HEADER_LEN + body_len);
        dst.put_u8(frame.frame_type() as u8);
        dst.put_u8(flags);
        dst.put_u32(body_len as u32);
        match frame {
            Frame::Connect { client_id, .. } => put_string(dst, &client_id),
            Frame::Subscribe { topic } => put_string(dst, &topic),
            Frame::Publish { topic, payload } => {
                put_string(dst, &topic);
                dst.put_slice(&payload);
            }
            Frame::ConnAck(s) | Frame::SubAck(s) => dst.put_u8(s as u8),
            Frame::Ping | Frame::PingAck | Frame::Disconnect => {}
        }
        Ok(())
    }
}

impl Decoder for FrameCodec {
    type Item = Frame;
    type Error = WireError;

    fn decode(&mut self, src: &mut BytesMut) -> Result<Option<Frame>, WireError> {
        if src.len() < HEADER_LEN {
            return Ok(None);
        }
        let code = src[0];
        let flags = src[1];
        let len = u32::from_be_bytes([src[2], src[3], src[4], src[5]]) as usize;
        let ty = FrameType::from_code(code).ok_or(WireError::UnknownType(code))?;
        if len > MAX_BODY_LEN {
            return Err(WireError::TooLong(len));
        }
        if src.len() < HEADER_LEN + len {
            src.reserve(HEADER_LEN + len - src.len());
            return Ok(None);
        }
        src.advance(HEADER_LEN);
        let mut body = src.split_to(len).freeze();
        let frame = match ty {
            FrameType::Connect => {
                let client_id = take_string(ty, &mut body)?;
                if !body.is_empty() {
                    return Err(malformed(ty, "trailing bytes after client id"));
                }
                Frame::Connect {
                    client_id,
                    bridge: flags & FLAG_BRIDGE != 0,
                }
            }
            FrameType::Subscribe => {
                let topic = take_string(ty, &mut body)?;
                if !body.is_empty() {
                    return Err(malformed(ty, "trailing bytes after topic"));
                }
                Frame::Subscribe { topic }
            }
            FrameType::Publish => {
                let topic = take_string(ty, &mut body)?;
                if body.len() > MAX_PAYLOAD_LEN {
                    return Err(WireError::PayloadTooLong(body.len()));
                }
                Frame::Publish { topic, payload: body }
            }
            FrameType::ConnAck => Frame::ConnAck(take_status(ty, &body)?),
            FrameType::SubAck => Frame::SubAck(take_status(ty, &body)?),
            FrameType::Ping | FrameType::PingAck | FrameType::Disconnect => {
                if !body.is_empty() {
                    return Err(malformed(ty, "body must be empty"));
                }
                match ty {
                    FrameType::Ping => Frame::Ping,
                    FrameType::PingAck => Frame::PingAck,
                    _ => Frame::Disconnect,
                }
            }
        };
        Ok(Some(frame))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn decode_all(bytes: &[u8]) -> Result<Vec<Frame>, WireError> {
        let mut buf = BytesMut::from(bytes);
        let mut out = Vec::new();
        while let Some(f) = FrameCodec.decode(&mut buf)? {
            out.push(f);
        }
        assert!(buf.is_empty(), "left {} bytes", buf.len());
        Ok(out)
    }

    #[test]
    fn publish_layout_is_bit_exact() {
        let bytes = Frame::publish("ab", &b"xyz"[..]).to_bytes().unwrap();
        assert_eq!(bytes.as_ref(), &[5, 0, 0, 0, 0, 7, 0, 2, b'a', b'b', b'x', b'y', b'z']);
    }

    #[test]
    fn connect_layout_carries_bridge_flag() {
        let f = Frame::Connect {
            client_id: "H".into(),
            bridge: true,
        };
        assert_eq!(f.to_bytes().unwrap().as_ref(), &[1, 1, 0, 0, 0, 3, 0, 1, b'H']);
    }

    #[test]
    fn small_frames_are_bit_exact() {
        assert_eq!(Frame::ConnAck(Status::Ok).to_bytes().unwrap().as_ref(), &[2, 0, 0, 0, 0, 1, 0]);
        assert_eq!(Frame::SubAck(Status::Denied).to_bytes().unwrap().as_ref(), &[4, 0, 0, 0, 0, 1, 1]);
        assert_eq!(
            Frame::Subscribe { topic: "t".into() }.to_bytes().unwrap().as_ref(),
            &[3, 0, 0, 0, 0, 3, 0, 1, b't']
        );
        assert_eq!(Frame::Ping.to_bytes().unwrap().as_ref(), &[6, 0, 0, 0, 0, 0]);
        assert_eq!(Frame::PingAck.to_bytes().unwrap().as_ref(), &[7, 0, 0, 0, 0, 0]);
        assert_eq!(Frame::Disconnect.to_bytes().unwrap().as_ref(), &[8, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn partial_input_waits_for_more() {
        let bytes = Frame::publish("topic", &b"payload"[..]).to_bytes().unwrap();
        let mut buf = BytesMut::new();
        for (i, b) in bytes.iter().enumerate() {
            buf.put_u8(*b);
            let got = FrameCodec.decode(&mut buf).unwrap();
            assert_eq!(got.is_some(), i + 1 == bytes.len());
        }
    }

    #[test]
    fn topic_length_past_body_is_malformed() {
        let err = decode_all(&[3, 0, 0, 0, 0, 3, 0, 9, b't']).unwrap_err();
        assert_eq!(err.frame_type(), Some(FrameType::Subscribe));
    }

    #[test]
    fn rejects_unknown_type_and_status() {
        assert!(matches!(decode_all(&[9, 0, 0, 0, 0, 0]), Err(WireError::UnknownType(9))));
        assert!(matches!(decode_all(&[2, 0, 0, 0, 0, 1, 7]), Err(WireError::UnknownStatus(7))));
        assert!(decode_all(&[6, 0, 0, 0, 0, 1, 0]).is_err());
    }

    #[test]
    fn rejects_oversized_length_before_buffering() {
        let len = (MAX_BODY_LEN as u32 + 1).to_be_bytes();
        let err = decode_all(&[5, 0, len[0], len[1], len[2], len[3]]).unwrap_err();
        assert!(matches!(err, WireError::TooLong(_)));
    }

    #[test]
    fn encoder_enforces_limits() {
        let long = "x".repeat(MAX_TOPIC_LEN + 1);
        assert!(matches!(
            Frame::Subscribe { topic: long }.to_bytes(),
            Err(WireError::TopicTooLong(_))
        ));
        let big = Bytes::from(vec![0u8; MAX_PAYLOAD_LEN + 1]);
        assert!(matches!(Frame::publish("t", big).to_bytes(), Err(WireError::PayloadTooLong(_))));
    }

    fn arb_frame() -> impl Strategy<Value = Frame> {
        let status = prop_oneof![Just(Status::Ok), Just(Status::Denied), Just(Status::ProtocolError)];
        prop_oneof![
            ("[a-zA-Z0-9/_.]{0,40}", any::<bool>()).prop_map(|(client_id, bridge)| Frame::Connect { client_id, bridge }),
            status.clone().prop_map(Frame::ConnAck),
            "\\PC{0,30}".prop_map(|topic| Frame::Subscribe { topic }),
            status.prop_map(Frame::SubAck),
            ("\\PC{0,30}", proptest::collection::vec(any::<u8>(), 0..300))
                .prop_map(|(t, p)| Frame::publish(t, p)),
            Just(Frame::Ping),
            Just(Frame::PingAck),
            Just(Frame::Disconnect),
        ]
    }

    proptest! {
        #[test]
        fn round_trips(frames in proptest::collection::vec(arb_frame(), 0..8)) {
            let mut buf = BytesMut::new();
            for f in &frames {
                FrameCodec.encode(f.clone(), &mut buf).unwrap();
            }
            prop_assert_eq!(decode_all(&buf).unwrap(), frames);
        }

        #[test]
        fn length_field_matches_body(f in arb_frame()) {
            let bytes = f.to_bytes().unwrap();
            let len = u32::from_be_bytes([bytes[2], bytes[3], bytes[4], bytes[5]]) as usize;
            prop_assert_eq!(len + HEADER_LEN, bytes.len());
        }
    }
}
