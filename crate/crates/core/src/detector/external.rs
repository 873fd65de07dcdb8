//! Client for an out-of-process grounded detector.
//!
//! Wire format: one UTF-8 JSON object per line.
//!
//! ```text
//! -> {"id": 1, "prompt": "apple", "threshold": 0.55,
//!     "image": {"width": 128, "height": 128, "encoding": "rgb8.base64", "data": "..."}}
//! <- {"id": 1, "detections": [{"bbox": [x0, y0, x1, y1], "score": 0.9, "phrase": "apple"}]}
//! ```
//!
//! Boxes are normalized to [0, 1]. Unknown response fields are ignored and
//! the response `id` must echo the request. The same messages can be sent as
//! the body of an HTTP `POST /detect`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{BBox, Detection};
use crate::camera::Frame;
use crate::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);
pub const IMAGE_ENCODING: &str = "rgb8.base64";

#[derive(Debug, Serialize, Deserialize)]
pub struct WireImage {
    pub width: usize,
    pub height: usize,
    pub encoding: String,
    pub data: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: u64,
    pub prompt: String,
    pub threshold: f64,
    pub image: WireImage,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireDetection {
    pub bbox: [f64; 4],
    pub score: f64,
    pub phrase: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: u64,
    pub detections: Vec<WireDetection>,
}

impl From<&Detection> for WireDetection {
    fn from(d: &Detection) -> Self {
        WireDetection {
            bbox: d.bbox.to_array(),
            score: d.score,
            phrase: d.phrase.clone(),
        }
    }
}

pub fn encode_request(id: u64, frame: &Frame, prompt: &str, threshold: f64) -> String {
    let req = WireRequest {
        id,
        prompt: prompt.to_string(),
        threshold,
        image: WireImage {
            width: frame.width,
            height: frame.height,
            encoding: IMAGE_ENCODING.to_string(),
            data: B64.encode(frame.to_rgb8()),
        },
    };
    serde_json::to_string(&req).expect("request serializes")
}

/// Server-side half: parse a request line back into its frame.
pub fn decode_request(line: &str) -> Result<(WireRequest, Frame)> {
    let req: WireRequest =
        serde_json::from_str(line).map_err(|e| Error::ProtocolError(format!("request: {e}")))?;
    if req.image.encoding != IMAGE_ENCODING {
        return Err(Error::ProtocolError(format!(
            "unsupported image encoding `{}`",
            req.image.encoding
        )));
    }
    let bytes = B64
        .decode(&req.image.data)
        .map_err(|e| Error::ProtocolError(format!("image data: {e}")))?;
    let frame = Frame::from_rgb8(req.image.width, req.image.height, &bytes)
        .map_err(|e| Error::ProtocolError(e.to_string()))?;
    Ok((req, frame))
}

pub fn encode_response(id: u64, detections: &[Detection]) -> String {
    let resp = WireResponse {
        id,
        detections: detections.iter().map(WireDetection::from).collect(),
    };
    serde_json::to_string(&resp).expect("response serializes")
}

fn parse_response(body: &str) -> Result<WireResponse> {
    serde_json::from_str(body.trim()).map_err(|e| Error::ProtocolError(format!("response: {e}")))
}

fn into_detections(resp: WireResponse) -> Result<Vec<Detection>> {
    resp.detections
        .into_iter()
        .map(|w| {
            let [x0, y0, x1, y1] = w.bbox;
            let bbox = BBox::new(x0, y0, x1, y1).map_err(|e| Error::ProtocolError(e.to_string()))?;
            if !(0.0..=1.0).contains(&w.score) {
                return Err(Error::ProtocolError(format!("score {} outside [0, 1]", w.score)));
            }
            if w.phrase.is_empty() {
                return Err(Error::ProtocolError("empty phrase".into()));
            }
            Ok(Detection {
                bbox,
                score: w.score,
                phrase: w.phrase,
            })
        })
        .collect()
}

/// Decode a response body, requiring the id to echo `expected_id`.
pub fn decode_response(body: &str, expected_id: u64) -> Result<Vec<Detection>> {
    let resp = parse_response(body)?;
    if resp.id != expected_id {
        return Err(Error::ProtocolError(format!(
            "response id {} does not echo request id {expected_id}",
            resp.id
        )));
    }
    into_detections(resp)
}

/// Anything that can answer a (frame, prompt) detection query.
pub trait DetectorClient: Send {
    fn detect(&mut self, frame: &Frame, prompt: &str, threshold: f64) -> Result<Vec<Detection>>;
}

/// Detector running as a child process, spoken to over stdin/stdout.
pub struct ProcessDetector {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    timeout: Duration,
}

impl ProcessDetector {
    /// Spawn `command` through `sh -c`.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::DetectorUnavailable(format!("spawning `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(ProcessDetector {
            child,
            stdin,
            lines: rx,
            next_id: 1,
            timeout,
        })
    }
}

impl DetectorClient for ProcessDetector {
    fn detect(&mut self, frame: &Frame, prompt: &str, threshold: f64) -> Result<Vec<Detection>> {
        let id = self.next_id;
        self.next_id += 1;
        let mut line = encode_request(id, frame, prompt, threshold);
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Error::DetectorUnavailable(format!("writing request: {e}")))?;
        loop {
            let reply = match self.lines.recv_timeout(self.timeout) {
                Ok(Ok(reply)) => reply,
                Ok(Err(e)) => return Err(Error::DetectorUnavailable(format!("reading reply: {e}"))),
                Err(RecvTimeoutError::Timeout) => return Err(Error::Timeout(self.timeout)),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::DetectorUnavailable("detector process closed its output".into()))
                }
            };
            if reply.trim().is_empty() {
                continue;
            }
            let resp = parse_response(&reply)?;
            // Late answers to requests that already timed out.
            if resp.id < id {
                continue;
            }
            if resp.id != id {
                return Err(Error::ProtocolError(format!(
                    "response id {} does not echo request id {id}",
                    resp.id
                )));
            }
            return into_detections(resp);
        }
    }
}

impl Drop for ProcessDetector {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Detector behind `POST {base_url}/detect`.
pub struct HttpDetector {
    url: String,
    agent: ureq::Agent,
    next_id: u64,
    timeout: Duration,
}

impl HttpDetector {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        HttpDetector {
            url: format!("{}/detect", base_url.trim_end_matches('/')),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            next_id: 1,
            timeout,
        }
    }
}

impl DetectorClient for HttpDetector {
    fn detect(&mut self, frame: &Frame, prompt: &str, threshold: f64) -> Result<Vec<Detection>> {
        let id = self.next_id;
        self.next_id += 1;
        let body = encode_request(id, frame, prompt, threshold);
        let resp = self
            .agent
            .post(&self.url)
            .set("Content-Type", "application/json")
            .send_string(&body);
        let resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Transport(t)) if t.kind() == ureq::ErrorKind::Io => {
                let msg = t.to_string();
                if msg.contains("timed out") || msg.contains("WouldBlock") {
                    return Err(Error::Timeout(self.timeout));
                }
                return Err(Error::DetectorUnavailable(msg));
            }
            Err(e) => return Err(Error::DetectorUnavailable(e.to_string())),
        };
        let text = resp
            .into_string()
            .map_err(|e| Error::ProtocolError(format!("reading body: {e}")))?;
        decode_response(&text, id)
    }
}
