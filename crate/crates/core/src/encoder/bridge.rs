use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::Value;

use super::wire::{read_frame, write_frame, Frame, PROTOCOL_VERSION};
use super::{Encoder, EncoderShape, FeatureBundle};
use crate::error::{Error, Result};
use crate::image::{Image, ImageGrad};
use crate::region::{RegionScorer, RegionSet};

const CONNECT_TIMEOUT: Duration = Duration::from_secs(10);
const IO_TIMEOUT: Duration = Duration::from_secs(300);

/// One connection to an encoder server. Requests are serialized: at most one
/// is in flight at a time.
#[derive(Debug)]
pub struct BridgeClient {
    stream: Mutex<TcpStream>,
    next_id: AtomicU64,
}

impl BridgeClient {
    /// Connects and performs the version handshake.
    pub fn connect(endpoint: &str) -> Result<Self> {
        let addrs: Vec<_> = endpoint
            .to_socket_addrs()
            .map_err(|e| Error::Transport(format!("resolve {endpoint}: {e}")))?
            .collect();
        let mut last = None;
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT) {
                Ok(stream) => {
                    stream.set_nodelay(true).ok();
                    stream.set_read_timeout(Some(IO_TIMEOUT)).ok();
                    stream.set_write_timeout(Some(IO_TIMEOUT)).ok();
                    let client = Self {
                        stream: Mutex::new(stream),
                        next_id: AtomicU64::new(1),
                    };
                    client.hello()?;
                    return Ok(client);
                }
                Err(e) => last = Some(e),
            }
        }
        Err(Error::Transport(match last {
            Some(e) => format!("connect {endpoint}: {e}"),
            None => format!("connect {endpoint}: no addresses"),
        }))
    }

    pub fn request(&self, frame: Frame) -> Result<Frame> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let frame = frame.with("id", id);
        let mut stream = self
            .stream
            .lock()
            .map_err(|_| Error::Transport("connection poisoned by an earlier failure".into()))?;
        write_frame(&mut *stream, &frame)?;
        let reply = read_frame(&mut *stream)?;
        if reply.kind() == Some("error") {
            let msg = reply
                .header
                .get("message")
                .and_then(Value::as_str)
                .unwrap_or("unspecified error");
            return Err(Error::Remote(msg.to_string()));
        }
        if reply.id() != Some(id) {
            return Err(Error::Protocol(format!(
                "reply correlation id {:?} does not match request {id}",
                reply.id()
            )));
        }
        Ok(reply)
    }

    fn expect(reply: &Frame, kind: &str) -> Result<()> {
        if reply.kind() == Some(kind) {
            Ok(())
        } else {
            Err(Error::Protocol(format!(
                "expected `{kind}` reply, got {:?}",
                reply.kind()
            )))
        }
    }

    fn hello(&self) -> Result<()> {
        let reply = self.request(Frame::new("hello", 0).with("version", PROTOCOL_VERSION))?;
        Self::expect(&reply, "hello")?;
        match reply.get_u64("version") {
            Some(PROTOCOL_VERSION) => Ok(()),
            other => Err(Error::Protocol(format!(
                "protocol version mismatch: client {PROTOCOL_VERSION}, server {other:?}"
            ))),
        }
    }

    pub fn describe(&self) -> Result<EncoderShape> {
        let reply = self.request(Frame::new("describe", 0))?;
        Self::expect(&reply, "describe")?;
        let field = |k: &str| {
            reply
                .get_u64(k)
                .filter(|&v| v > 0)
                .map(|v| v as usize)
                .ok_or_else(|| Error::Protocol(format!("describe reply lacks positive `{k}`")))
        };
        Ok(EncoderShape {
            height: field("h")?,
            width: field("w")?,
            tokens: field("m")?,
            dim: field("d")?,
            global_dim: field("d_g")?,
        })
    }
}

/// Encoder served over the bridge protocol.
#[derive(Debug)]
pub struct BridgeEncoder {
    client: BridgeClient,
    shape: EncoderShape,
}

pub fn connect_bridge_encoder(endpoint: &str) -> Result<BridgeEncoder> {
    let client = BridgeClient::connect(endpoint)?;
    let shape = client.describe()?;
    Ok(BridgeEncoder { client, shape })
}

impl BridgeEncoder {
    fn check(&self, img: &Image) -> Result<()> {
        if img.dims() != (self.shape.height, self.shape.width) {
            return Err(Error::shape(format!(
                "bridged encoder expects {}x{}, got {:?}",
                self.shape.height,
                self.shape.width,
                img.dims()
            )));
        }
        Ok(())
    }

    fn image_frame(&self, kind: &str, img: &Image) -> Frame {
        Frame::new(kind, 0)
            .with("h", self.shape.height)
            .with("w", self.shape.width)
            .with_payload(img.data())
    }

    pub fn client(&self) -> &BridgeClient {
        &self.client
    }
}

impl Encoder for BridgeEncoder {
    fn shape(&self) -> EncoderShape {
        self.shape
    }

    fn encode(&self, img: &Image) -> Result<FeatureBundle> {
        self.check(img)?;
        let reply = self.client.request(self.image_frame("forward", img))?;
        BridgeClient::expect(&reply, "features")?;
        let values = reply.payload_f64()?;
        FeatureBundle::unflatten(&values, &self.shape).map_err(|_| {
            Error::Protocol(format!(
                "features payload of {} values disagrees with describe",
                values.len()
            ))
        })
    }

    fn encode_vjp(&self, img: &Image, cot: &FeatureBundle) -> Result<ImageGrad> {
        self.check(img)?;
        let s = &self.shape;
        if cot.global.len() != s.global_dim || (cot.local.rows, cot.local.cols) != (s.tokens, s.dim) {
            return Err(Error::shape("feature cotangent does not match encoder shape"));
        }
        let mut payload = img.data().to_vec();
        payload.extend(cot.flatten());
        let frame = Frame::new("vjp", 0)
            .with("h", s.height)
            .with("w", s.width)
            .with_payload(&payload);
        let reply = self.client.request(frame)?;
        BridgeClient::expect(&reply, "gradient")?;
        let values = reply.payload_f64()?;
        ImageGrad::new(s.height, s.width, values)
            .map_err(|_| Error::Protocol("gradient payload disagrees with describe".into()))
    }
}

/// Region scoring through a bridge connection for the `external` policy.
pub struct BridgeScorer<'a> {
    pub client: &'a BridgeClient,
    pub image: &'a Image,
}

impl RegionScorer for BridgeScorer<'_> {
    fn score(&self, regions: &RegionSet) -> Result<Vec<f64>> {
        let list =
            serde_json::to_value(&regions.regions).map_err(|e| Error::Protocol(format!("region encode: {e}")))?;
        let frame = Frame::new("region_score", 0)
            .with("h", self.image.height())
            .with("w", self.image.width())
            .with("regions", list)
            .with_payload(self.image.data());
        let reply = self.client.request(frame)?;
        BridgeClient::expect(&reply, "scores")?;
        reply
            .header
            .get("scores")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Protocol("scores reply lacks `scores`".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| Error::Protocol("non-numeric score".into())))
            .collect()
    }
}
