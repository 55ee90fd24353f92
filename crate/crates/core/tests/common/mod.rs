#![allow(dead_code)]

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread;

#[derive(Debug, Clone)]
pub struct Recorded {
    pub method: String,
    pub path: String,
    /// Lower-cased names.
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl Recorded {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k == &name.to_ascii_lowercase())
            .map(|(_, v)| v.as_str())
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).expect("request body is JSON")
    }
}

/// One-connection-per-request HTTP server answering with canned
/// `(status, body)` pairs in order, then shutting down.
pub struct MockServer {
    pub url: String,
    requests: Arc<Mutex<Vec<Recorded>>>,
    handle: Option<thread::JoinHandle<()>>,
}

impl MockServer {
    pub fn start(responses: Vec<(u16, String)>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        let handle = thread::spawn(move || {
            for (status, body) in responses {
                let Ok((stream, _)) = listener.accept() else {
                    return;
                };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let Some(req) = read_request(&mut reader) else {
                    return;
                };
                log.lock().unwrap().push(req);
                let mut stream = stream;
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.flush();
            }
        });
        Self {
            url,
            requests,
            handle: Some(handle),
        }
    }

    /// Waits for the canned responses to be used up.
    pub fn finish(mut self) -> Vec<Recorded> {
        if let Some(h) = self.handle.take() {
            h.join().unwrap();
        }
        self.requests.lock().unwrap().clone()
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.requests.lock().unwrap().clone()
    }
}

fn read_request(reader: &mut impl BufRead) -> Option<Recorded> {
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let mut headers = Vec::new();
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (k, v) = h.split_once(':')?;
        headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
    }
    let find = |name: &str| {
        headers
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.clone())
    };
    let mut body = Vec::new();
    if let Some(len) = find("content-length") {
        body.resize(len.parse().ok()?, 0);
        reader.read_exact(&mut body).ok()?;
    } else if find("transfer-encoding").is_some_and(|v| v.contains("chunked")) {
        loop {
            let mut size = String::new();
            reader.read_line(&mut size).ok()?;
            let n = usize::from_str_radix(size.trim(), 16).ok()?;
            let mut chunk = vec![0; n + 2];
            reader.read_exact(&mut chunk).ok()?;
            if n == 0 {
                break;
            }
            body.extend_from_slice(&chunk[..n]);
        }
    }
    Some(Recorded {
        method,
        path,
        headers,
        body,
    })
}

pub fn fixture(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// A chat-completions body whose single choice carries `content`.
pub fn chat_reply(content: &str, finish_reason: &str) -> String {
    serde_json::json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": finish_reason}]
    })
    .to_string()
}

pub mod worlds {
    use std::collections::BTreeSet;
    use std::ops::Range;
    use std::sync::Mutex;

    use trackprune::backend::BackendError;
    use trackprune::perception::{Placement, Shape, SimObject, SimWorld};
    use trackprune::reasoner::{ChatRequest, Reasoner};

    pub const W: u32 = 64;
    pub const H: u32 = 48;

    /// A rectangle 8 px tall in horizontal lane `lane`, drifting right by
    /// one pixel per frame while `frames` lasts.
    pub fn object(
        id: u32,
        labels: &[&str],
        appearance: &str,
        lane: u32,
        frames: Range<usize>,
        duration: usize,
    ) -> SimObject {
        let placements = (0..duration)
            .map(|t| {
                frames.contains(&t).then(|| {
                    let x0 = 2 + (t as u32 % 30);
                    Placement {
                        shape: Shape::Rect,
                        x0,
                        y0: lane * 10 + 1,
                        x1: x0 + 10,
                        y1: lane * 10 + 8,
                    }
                })
            })
            .collect();
        SimObject {
            object_id: id,
            concept_labels: labels
                .iter()
                .map(|s| s.to_string())
                .collect::<BTreeSet<_>>(),
            color: [40 * id as u8, 200, 255 - 30 * id as u8],
            appearance: appearance.to_string(),
            placements,
        }
    }

    pub fn world(video_id: &str, duration: usize, objects: Vec<SimObject>) -> SimWorld {
        SimWorld {
            video_id: video_id.into(),
            width: W,
            height: H,
            duration,
            background: [20, 20, 20],
            objects,
            seed: 0,
        }
    }

    /// Keeps every request that passes through.
    pub struct Recording<R> {
        pub inner: R,
        pub log: Mutex<Vec<ChatRequest>>,
    }

    impl<R> Recording<R> {
        pub fn new(inner: R) -> Self {
            Self {
                inner,
                log: Mutex::new(Vec::new()),
            }
        }

        pub fn requests(&self) -> Vec<ChatRequest> {
            self.log.lock().unwrap().clone()
        }
    }

    impl<R: Reasoner> Reasoner for Recording<R> {
        fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
            self.log.lock().unwrap().push(request.clone());
            self.inner.complete(request)
        }
    }
}
