//! Minimal in-memory S3-compatible endpoint for tests and local runs.
//!
//! Speaks exactly the REST subset the persistent tier uses (PUT/GET/
//! DELETE/HEAD object, single-page ListObjectsV2), validates the pinned
//! request signature, and can inject failure statuses for retry tests.
//! Objects live in process memory: the server "survives" cluster
//! teardown for as long as the process does, which is what the storage
//! acceptance tests need. Not a production object store.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use super::{s3, sha256_hex};

struct ServerState {
    access_key: String,
    secret: String,
    buckets: Mutex<HashMap<String, BTreeMap<String, Vec<u8>>>>,
    fault_queue: Mutex<VecDeque<u16>>,
    requests: AtomicU64,
}

/// A running endpoint bound to a loopback port.
pub struct MemServer {
    addr: SocketAddr,
    state: Arc<ServerState>,
    shutdown: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl MemServer {
    pub fn start(
        access_key: &str,
        secret: &str,
        buckets: &[&str],
    ) -> std::io::Result<MemServer> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let state = Arc::new(ServerState {
            access_key: access_key.to_string(),
            secret: secret.to_string(),
            buckets: Mutex::new(
                buckets
                    .iter()
                    .map(|b| (b.to_string(), BTreeMap::new()))
                    .collect(),
            ),
            fault_queue: Mutex::new(VecDeque::new()),
            requests: AtomicU64::new(0),
        });
        let shutdown = Arc::new(AtomicBool::new(false));
        let accept_state = Arc::clone(&state);
        let accept_shutdown = Arc::clone(&shutdown);
        let accept_thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if accept_shutdown.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let state = Arc::clone(&accept_state);
                std::thread::spawn(move || {
                    let _ = handle_connection(stream, &state);
                });
            }
        });
        Ok(MemServer {
            addr,
            state,
            shutdown,
            accept_thread: Some(accept_thread),
        })
    }

    /// Client endpoint URL for one bucket.
    pub fn endpoint(&self, bucket: &str) -> String {
        format!("http://{}/{bucket}", self.addr)
    }

    /// Queue failure statuses; each of the next requests consumes one.
    pub fn inject_failures(&self, statuses: &[u16]) {
        self.state
            .fault_queue
            .lock()
            .unwrap()
            .extend(statuses.iter().copied());
    }

    pub fn request_count(&self) -> u64 {
        self.state.requests.load(Ordering::SeqCst)
    }

    pub fn object_count(&self, bucket: &str) -> usize {
        self.state
            .buckets
            .lock()
            .unwrap()
            .get(bucket)
            .map_or(0, BTreeMap::len)
    }
}

impl Drop for MemServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr); // unblock accept
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

fn handle_connection(stream: TcpStream, state: &ServerState) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    if reader.read_line(&mut request_line)? == 0 {
        return Ok(()); // shutdown poke
    }
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let target = parts.next().unwrap_or("").to_string();

    let mut headers: HashMap<String, String> = HashMap::new();
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
        }
    }
    let content_length: usize = headers
        .get("content-length")
        .and_then(|v| v.parse().ok())
        .unwrap_or(0);
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;

    state.requests.fetch_add(1, Ordering::SeqCst);
    let response = route(state, &method, &target, &headers, &body);
    write_response(stream, &method, response)
}

struct Response {
    status: u16,
    body: Vec<u8>,
}

fn error_xml(code: &str, message: &str) -> Vec<u8> {
    format!("<?xml version=\"1.0\"?><Error><Code>{code}</Code><Message>{message}</Message></Error>")
        .into_bytes()
}

fn route(
    state: &ServerState,
    method: &str,
    target: &str,
    headers: &HashMap<String, String>,
    body: &[u8],
) -> Response {
    if let Some(status) = state.fault_queue.lock().unwrap().pop_front() {
        return Response {
            status,
            body: error_xml("InjectedFault", "injected failure"),
        };
    }

    // signature check over the exact canonical form the client signs
    let date = headers.get("x-rf-date").cloned().unwrap_or_default();
    let content_sha = headers
        .get("x-rf-content-sha256")
        .cloned()
        .unwrap_or_default();
    let auth = headers.get("authorization").cloned().unwrap_or_default();
    let expected_auth = format!(
        "RFS1 {}:{}",
        state.access_key,
        s3::sign(
            &state.secret,
            &s3::string_to_sign(method, target, &date, &content_sha),
        )
    );
    if auth != expected_auth || content_sha != sha256_hex(body) {
        return Response {
            status: 403,
            body: error_xml("AccessDenied", "signature mismatch"),
        };
    }

    let (path, query) = match target.split_once('?') {
        Some((p, q)) => (p, Some(q)),
        None => (target, None),
    };
    let mut segments = path.splitn(3, '/');
    let _ = segments.next(); // leading empty
    let bucket = segments.next().unwrap_or("");
    let key = segments.next().unwrap_or("");

    let mut buckets = state.buckets.lock().unwrap();
    let Some(objects) = buckets.get_mut(bucket) else {
        return Response {
            status: 404,
            body: error_xml("NoSuchBucket", bucket),
        };
    };

    match (method, key.is_empty(), query) {
        ("GET", true, Some(q)) if q.contains("list-type=2") => {
            let prefix = q
                .split('&')
                .find_map(|kv| kv.strip_prefix("prefix="))
                .unwrap_or("");
            let mut xml = String::from("<?xml version=\"1.0\"?><ListBucketResult>");
            for k in objects.keys().filter(|k| k.starts_with(prefix)) {
                xml.push_str("<Contents><Key>");
                xml.push_str(k);
                xml.push_str("</Key></Contents>");
            }
            xml.push_str("<IsTruncated>false</IsTruncated></ListBucketResult>");
            Response {
                status: 200,
                body: xml.into_bytes(),
            }
        }
        ("PUT", false, _) => {
            objects.insert(key.to_string(), body.to_vec());
            Response {
                status: 200,
                body: Vec::new(),
            }
        }
        ("GET", false, _) => match objects.get(key) {
            Some(bytes) => Response {
                status: 200,
                body: bytes.clone(),
            },
            None => Response {
                status: 404,
                body: error_xml("NoSuchKey", key),
            },
        },
        ("HEAD", false, _) => Response {
            status: if objects.contains_key(key) { 200 } else { 404 },
            body: Vec::new(),
        },
        ("DELETE", false, _) => {
            objects.remove(key);
            Response {
                status: 204,
                body: Vec::new(),
            }
        }
        _ => Response {
            status: 400,
            body: error_xml("BadRequest", "unsupported request"),
        },
    }
}

fn write_response(mut stream: TcpStream, method: &str, resp: Response) -> std::io::Result<()> {
    let reason = match resp.status {
        200 => "OK",
        204 => "No Content",
        400 => "Bad Request",
        403 => "Forbidden",
        404 => "Not Found",
        _ => "Error",
    };
    // HEAD advertises zero length instead of a body
    let len = if method == "HEAD" { 0 } else { resp.body.len() };
    write!(
        stream,
        "HTTP/1.1 {} {reason}\r\ncontent-length: {len}\r\ncontent-type: application/xml\r\nconnection: close\r\n\r\n",
        resp.status
    )?;
    if method != "HEAD" {
        stream.write_all(&resp.body)?;
    }
    stream.flush()
}
