//! Framed message format shared with encoder servers.
//!
//! ```text
//! u32 LE total length | JSON header | raw payload (payload_bytes)
//! ```
//!
//! The header is a single JSON object and carries `payload_bytes`; the
//! payload, when present, is little-endian `f32` values in row-major order.
//! `total length = header bytes + payload bytes`.

use std::io::{ErrorKind, Read, Write};

use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u64 = 1;

/// Upper bound on a single frame, to reject corrupt length prefixes early.
pub const MAX_FRAME_BYTES: usize = 1 << 30;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub header: Map<String, Value>,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: &str, id: u64) -> Self {
        let mut header = Map::new();
        header.insert("type".into(), Value::from(kind));
        header.insert("id".into(), Value::from(id));
        Self {
            header,
            payload: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.header.insert(key.into(), value.into());
        self
    }

    pub fn with_payload(mut self, values: &[f64]) -> Self {
        self.payload = encode_f32(values);
        self
    }

    pub fn kind(&self) -> Option<&str> {
        self.header.get("type").and_then(Value::as_str)
    }

    pub fn id(&self) -> Option<u64> {
        self.header.get("id").and_then(Value::as_u64)
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.header.get(key).and_then(Value::as_u64)
    }

    pub fn payload_f64(&self) -> Result<Vec<f64>> {
        decode_f32(&self.payload)
    }

    /// Serializes with `payload_bytes` set from the payload.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = self.header.clone();
        header.insert("payload_bytes".into(), Value::from(self.payload.len()));
        let head =
            serde_json::to_vec(&Value::Object(header)).map_err(|e| Error::Protocol(format!("header encode: {e}")))?;
        let total = head.len() + self.payload.len();
        if total > MAX_FRAME_BYTES {
            return Err(Error::Protocol(format!("frame of {total} bytes exceeds limit")));
        }
        let mut out = Vec::with_capacity(4 + total);
        out.extend_from_slice(&(total as u32).to_le_bytes());
        out.extend_from_slice(&head);
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    /// Parses the body of a frame (everything after the length prefix).
    pub fn from_body(body: &[u8]) -> Result<Self> {
        let mut stream = serde_json::Deserializer::from_slice(body).into_iter::<Value>();
        let header = match stream.next() {
            Some(Ok(Value::Object(map))) => map,
            Some(Ok(_)) => return Err(Error::Protocol("frame header is not a JSON object".into())),
            Some(Err(e)) => return Err(Error::Protocol(format!("frame header: {e}"))),
            None => return Err(Error::Protocol("empty frame".into())),
        };
        let head_len = stream.byte_offset();
        let declared = match header.get("payload_bytes") {
            None => 0,
            Some(v) => v
                .as_u64()
                .ok_or_else(|| Error::Protocol("payload_bytes is not an unsigned integer".into()))?
                as usize,
        };
        if head_len + declared != body.len() {
            return Err(Error::Protocol(format!(
                "frame length {} != header {head_len} + payload_bytes {declared}",
                body.len()
            )));
        }
        Ok(Self {
            header,
            payload: body[head_len..].to_vec(),
        })
    }
}

fn transport(e: std::io::Error, what: &str) -> Error {
    match e.kind() {
        ErrorKind::UnexpectedEof => Error::Transport(format!("connection closed {what}")),
        _ => Error::Transport(format!("{what}: {e}")),
    }
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<()> {
    let bytes = frame.to_bytes()?;
    w.write_all(&bytes).map_err(|e| transport(e, "while writing frame"))?;
    w.flush().map_err(|e| transport(e, "while flushing frame"))
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(|e| transport(e, "before frame"))?;
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(Error::Protocol(format!("frame length {len} exceeds limit")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(|e| transport(e, "mid-frame"))?;
    Frame::from_body(&body)
}

pub fn encode_f32(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

pub fn decode_f32(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Protocol(format!(
            "payload of {} bytes is not f32-aligned",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_length_header_payload() {
        let frame = Frame::new("forward", 7).with_payload(&[1.0, -2.5]);
        let bytes = frame.to_bytes().unwrap();
        let total = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        assert_eq!(total, bytes.len() - 4);
        let head_end = bytes.len() - 8;
        let header: Value = serde_json::from_slice(&bytes[4..head_end]).unwrap();
        assert_eq!(header["payload_bytes"], 8);
        assert_eq!(header["id"], 7);
        assert_eq!(&bytes[head_end..head_end + 4], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[head_end + 4..], &(-2.5f32).to_le_bytes());
    }

    #[test]
    fn wrong_payload_bytes_rejected() {
        let mut bytes = Frame::new("forward", 1).with_payload(&[1.0]).to_bytes().unwrap();
        bytes.pop();
        let len = (bytes.len() - 4) as u32;
        bytes[..4].copy_from_slice(&len.to_le_bytes());
        assert!(matches!(read_frame(&mut bytes.as_slice()), Err(Error::Protocol(_))));
    }

    #[test]
    fn truncated_frame_is_transport_error() {
        let bytes = Frame::new("hello", 1).to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(read_frame(&mut &cut[..]), Err(Error::Transport(_))));
        assert!(matches!(read_frame(&mut &bytes[..2]), Err(Error::Transport(_))));
    }

    #[test]
    fn non_object_header_rejected() {
        assert!(Frame::from_body(b"[1,2]").is_err());
        assert!(Frame::from_body(b"").is_err());
    }

    proptest! {
        #[test]
        fn f32_payload_round_trip(values in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 0..64)) {
            let wide: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
            let frame = Frame::new("features", 3).with_payload(&wide);
            let bytes = frame.to_bytes().unwrap();
            let back = read_frame(&mut bytes.as_slice()).unwrap();
            prop_assert_eq!(back.payload_f64().unwrap(), wide);
            prop_assert_eq!(back.id(), Some(3));
        }
    }
}
