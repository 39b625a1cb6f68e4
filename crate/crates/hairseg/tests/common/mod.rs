#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use hairseg::io;
use hairseg_core::pseudogen::RgbImage;
use hairseg_core::rng::StreamRng;
use rand::{Rng, SeedableRng};

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hairseg"));
    cmd.env_remove("HAIRSEG_SEGMENT_URL").env("HAIRSEG_LOG", "error");
    cmd
}

pub fn hairseg(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn hairseg")
}

pub fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or("");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

/// Skin-toned patches with mild speckle, written as `patch_<k>.png`.
pub fn write_patches(dir: &Path, count: usize, size: usize, seed: u64) -> Vec<PathBuf> {
    let mut rng = StreamRng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let base = [rng.gen_range(170..215u8), rng.gen_range(120..160u8), rng.gen_range(105..140u8)];
            let pixels = (0..size * size)
                .map(|_| base.map(|v| v.saturating_add(rng.gen_range(0..10))))
                .collect();
            let img = RgbImage::from_pixels(size, size, pixels).unwrap();
            let path = dir.join(format!("patch_{k}.png"));
            io::atomic_write(&path, &io::encode_rgb_png(&img)).unwrap();
            path
        })
        .collect()
}

/// Every regular file under `dir` with its bytes, sorted by relative path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_path_buf();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub struct HttpRequest {
    pub method: String,
    pub path: String,
    pub body: Vec<u8>,
}

pub enum Reply {
    /// Drop the connection without answering.
    Hangup,
    Status(u16, String),
}

/// Answers connections in order with `handler(call_number, request)`.
pub struct TestServer {
    pub url: String,
    pub calls: Arc<AtomicUsize>,
    _thread: JoinHandle<()>,
}

fn read_request(stream: &mut TcpStream) -> Option<HttpRequest> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let mut length = 0usize;
    let mut chunked = false;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (name, value) = h.split_once(':')?;
        match name.trim().to_ascii_lowercase().as_str() {
            "content-length" => length = value.trim().parse().ok()?,
            "transfer-encoding" => chunked = value.to_ascii_lowercase().contains("chunked"),
            _ => {}
        }
    }
    let mut body = Vec::new();
    if chunked {
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
    } else {
        body.resize(length, 0);
        reader.read_exact(&mut body).ok()?;
    }
    Some(HttpRequest { method, path, body })
}

impl TestServer {
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(usize, &HttpRequest) -> Reply + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = calls.clone();
        let thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let Some(req) = read_request(&mut stream) else { continue };
                let n = counter.fetch_add(1, Ordering::SeqCst);
                match handler(n, &req) {
                    Reply::Hangup => drop(stream),
                    Reply::Status(code, body) => {
                        let head = format!(
                            "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                            body.len()
                        );
                        let _ = stream.write_all(head.as_bytes());
                        let _ = stream.write_all(body.as_bytes());
                        let _ = stream.flush();
                    }
                }
            }
        });
        Self {
            url,
            calls,
            _thread: thread,
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}
