//! In-process stand-in for an encoder server, speaking the framed protocol
//! over loopback TCP and serving a toy encoder.

#![allow(dead_code)]

use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use patchfield::encoder::wire::{read_frame, write_frame, Frame, PROTOCOL_VERSION};
use patchfield::encoder::{Encoder, FeatureBundle, ToyEncoder};
use patchfield::image::Image;
use serde_json::Value;

#[derive(Debug, Clone)]
pub struct MockOptions {
    pub version: u64,
    /// Drop the connection when this many forward/vjp requests have been served.
    pub fail_after: Option<usize>,
    /// Fixed region scores; `None` answers `region_score` with an error frame.
    pub scores: Option<Vec<f64>>,
    /// Reply with a correlation id that does not match the request.
    pub wrong_id: bool,
}

impl Default for MockOptions {
    fn default() -> Self {
        Self {
            version: PROTOCOL_VERSION,
            fail_after: None,
            scores: None,
            wrong_id: false,
        }
    }
}

pub struct MockBridge {
    pub endpoint: String,
    pub served: Arc<AtomicUsize>,
}

pub fn spawn(encoder: ToyEncoder, opts: MockOptions) -> MockBridge {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = listener.local_addr().unwrap().to_string();
    let served = Arc::new(AtomicUsize::new(0));
    let encoder = Arc::new(encoder);
    let counter = served.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            let (enc, opts, counter) = (encoder.clone(), opts.clone(), counter.clone());
            thread::spawn(move || serve(stream, &enc, &opts, &counter));
        }
    });
    MockBridge { endpoint, served }
}

fn error_frame(id: u64, message: &str) -> Frame {
    Frame::new("error", id).with("message", message)
}

fn serve(mut stream: TcpStream, enc: &ToyEncoder, opts: &MockOptions, served: &AtomicUsize) {
    let shape = enc.shape();
    let pixels = shape.height * shape.width * 3;
    while let Ok(req) = read_frame(&mut stream) {
        let id = req.id().unwrap_or(0);
        let reply_id = if opts.wrong_id { id + 1000 } else { id };
        let reply = match req.kind() {
            Some("hello") => Frame::new("hello", reply_id).with("version", opts.version),
            Some("describe") => Frame::new("describe", reply_id)
                .with("h", shape.height)
                .with("w", shape.width)
                .with("m", shape.tokens)
                .with("d", shape.dim)
                .with("d_g", shape.global_dim),
            Some(kind @ ("forward" | "vjp")) => {
                if let Some(limit) = opts.fail_after {
                    if served.load(Ordering::SeqCst) >= limit {
                        return;
                    }
                }
                served.fetch_add(1, Ordering::SeqCst);
                let values = req.payload_f64().unwrap();
                if values.len() < pixels {
                    write_frame(&mut stream, &error_frame(reply_id, "payload too short")).ok();
                    continue;
                }
                let img = Image::from_clamped(shape.height, shape.width, values[..pixels].to_vec()).unwrap();
                if kind == "forward" {
                    let f = enc.encode(&img).unwrap();
                    Frame::new("features", reply_id).with_payload(&f.flatten())
                } else {
                    match FeatureBundle::unflatten(&values[pixels..], &shape) {
                        Ok(cot) => {
                            let g = enc.encode_vjp(&img, &cot).unwrap();
                            Frame::new("gradient", reply_id).with_payload(&g.data)
                        }
                        Err(e) => error_frame(reply_id, &e.to_string()),
                    }
                }
            }
            Some("region_score") => match &opts.scores {
                Some(scores) => {
                    let n = req.header.get("regions").and_then(Value::as_array).map_or(0, Vec::len);
                    Frame::new("scores", reply_id).with("scores", scores[..n.min(scores.len())].to_vec())
                }
                None => error_frame(reply_id, "region scoring not supported"),
            },
            other => error_frame(reply_id, &format!("unknown request {other:?}")),
        };
        if write_frame(&mut stream, &reply).is_err() {
            return;
        }
    }
}
