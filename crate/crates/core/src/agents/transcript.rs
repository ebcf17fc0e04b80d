// SPDX-License-Identifier: Apache-2.0

//! Canned chat-completion server for offline runs.
//!
//! A transcript maps request digests (hex SHA-256 of the request body) to
//! replies. Substring rules and a default reply cover requests that were not
//! recorded verbatim.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::llm::ChatRequest;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockReply {
    pub reply: String,
    #[serde(default)]
    pub delay_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRule {
    /// Matches when the raw request body contains this text.
    pub contains: String,
    #[serde(flatten)]
    pub reply: MockReply,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    #[serde(default)]
    pub entries: BTreeMap<String, MockReply>,
    #[serde(default)]
    pub rules: Vec<TranscriptRule>,
    #[serde(default)]
    pub default: Option<MockReply>,
}

impl Transcript {
    pub fn with_default(reply: impl Into<String>, delay_ms: u64) -> Self {
        Transcript { default: Some(MockReply { reply: reply.into(), delay_ms }), ..Default::default() }
    }

    pub fn lookup(&self, body: &[u8]) -> Option<&MockReply> {
        let digest = hex::encode(Sha256::digest(body));
        if let Some(r) = self.entries.get(&digest) {
            return Some(r);
        }
        let text = String::from_utf8_lossy(body);
        self.rules
            .iter()
            .find(|r| text.contains(&r.contains))
            .map(|r| &r.reply)
            .or(self.default.as_ref())
    }

    pub fn load(path: &std::path::Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Digest under which a request is looked up in a transcript.
pub fn request_digest(req: &ChatRequest) -> String {
    hex::encode(Sha256::digest(req.to_body()))
}

/// HTTP server answering from a transcript on a loopback port. Stops when
/// dropped.
pub struct MockServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    requests: Arc<AtomicUsize>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(transcript: Transcript) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let requests = Arc::new(AtomicUsize::new(0));
        let transcript = Arc::new(transcript);
        let handle = {
            let stop = Arc::clone(&stop);
            let requests = Arc::clone(&requests);
            thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(conn) = conn else { continue };
                    let transcript = Arc::clone(&transcript);
                    let requests = Arc::clone(&requests);
                    thread::spawn(move || {
                        if let Err(e) = serve(conn, &transcript, &requests) {
                            log::debug!("mock server connection: {e}");
                        }
                    });
                }
            })
        };
        Ok(MockServer { addr, stop, requests, handle: Some(handle) })
    }

    pub fn url(&self) -> String {
        format!("http://{}/api/chat", self.addr)
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(conn: TcpStream, transcript: &Transcript, requests: &AtomicUsize) -> std::io::Result<()> {
    let mut reader = BufReader::new(conn.try_clone()?);
    let mut content_length = 0usize;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body)?;
    requests.fetch_add(1, Ordering::SeqCst);

    let (status, payload) = match transcript.lookup(&body) {
        Some(r) => {
            thread::sleep(Duration::from_millis(r.delay_ms));
            ("200 OK", serde_json::json!({"message": {"role": "assistant", "content": r.reply}}))
        }
        None => ("404 Not Found", serde_json::json!({"error": "no transcript entry for request"})),
    };
    let payload = payload.to_string();
    let mut out = conn;
    write!(
        out,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_prefers_digest_then_rules_then_default() {
        let body = b"{\"a\":1}";
        let mut t = Transcript::with_default("fallback", 0);
        t.rules.push(TranscriptRule {
            contains: "\"a\"".into(),
            reply: MockReply { reply: "rule".into(), delay_ms: 0 },
        });
        assert_eq!(t.lookup(body).unwrap().reply, "rule");
        t.entries.insert(hex::encode(Sha256::digest(body)), MockReply { reply: "exact".into(), delay_ms: 0 });
        assert_eq!(t.lookup(body).unwrap().reply, "exact");
        assert_eq!(t.lookup(b"other").unwrap().reply, "fallback");
    }
}
