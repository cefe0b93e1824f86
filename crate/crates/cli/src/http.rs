//! Minimal HTTP/1.1 for the cockpit port: static files, the heat-map CSV and a
//! WebSocket upgrade check. Every response closes the connection.

use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::path::{Component, Path, PathBuf};

const MAX_HEAD: usize = 16 * 1024;

/// Request line and headers of an HTTP request.
#[derive(Clone, Debug, PartialEq)]
pub struct RequestHead {
    pub method: String,
    pub path: String,
    pub headers: Vec<(String, String)>,
    /// Bytes up to and including the blank line.
    pub len: usize,
}

impl RequestHead {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn is_websocket_upgrade(&self) -> bool {
        self.header("upgrade").is_some_and(|v| v.eq_ignore_ascii_case("websocket"))
    }
}

pub fn parse_head(bytes: &[u8]) -> Option<Result<RequestHead, String>> {
    let end = bytes.windows(4).position(|w| w == b"\r\n\r\n")? + 4;
    let text = match std::str::from_utf8(&bytes[..end]) {
        Ok(t) => t,
        Err(_) => return Some(Err("request head is not UTF-8".into())),
    };
    let mut lines = text.split("\r\n");
    let mut parts = lines.next().unwrap_or("").split(' ');
    let (Some(method), Some(path), Some(version)) = (parts.next(), parts.next(), parts.next()) else {
        return Some(Err("malformed request line".into()));
    };
    if !version.starts_with("HTTP/1.") {
        return Some(Err("unsupported HTTP version".into()));
    }
    let headers = lines
        .filter(|l| !l.is_empty())
        .filter_map(|l| l.split_once(':'))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();
    Some(Ok(RequestHead {
        method: method.to_string(),
        path: path.to_string(),
        headers,
        len: end,
    }))
}

/// Reads the request head without consuming it, so a WebSocket handshake can
/// still read it from the socket afterwards.
pub fn peek_head(stream: &TcpStream) -> io::Result<RequestHead> {
    let mut buf = vec![0u8; MAX_HEAD];
    let mut last = 0;
    loop {
        let n = stream.peek(&mut buf)?;
        if n == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed before a request"));
        }
        if let Some(head) = parse_head(&buf[..n]) {
            return head.map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e));
        }
        if n == MAX_HEAD {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "request head too large"));
        }
        if n == last {
            std::thread::sleep(std::time::Duration::from_millis(2));
        }
        last = n;
    }
}

pub fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" | "htm" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript; charset=utf-8",
        "css" => "text/css; charset=utf-8",
        "json" | "map" => "application/json",
        "csv" => "text/csv; charset=utf-8",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "ico" => "image/x-icon",
        "wasm" => "application/wasm",
        "txt" => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

/// File under `root` named by a URL path; `None` for paths that leave the root.
pub fn resolve_static(root: &Path, url_path: &str) -> Option<PathBuf> {
    let path = url_path.split(['?', '#']).next().unwrap_or("");
    let rel = Path::new(path.trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) || path.contains('\\') {
        return None;
    }
    let mut full = root.join(rel);
    if path.ends_with('/') || path.is_empty() || full.is_dir() {
        full = full.join("index.html");
    }
    Some(full)
}

pub struct Response {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl Response {
    pub fn ok(content_type: &'static str, body: Vec<u8>) -> Self {
        Self { status: 200, content_type, body }
    }

    pub fn text(status: u16, body: &str) -> Self {
        Self {
            status,
            content_type: "text/plain; charset=utf-8",
            body: body.as_bytes().to_vec(),
        }
    }

    pub fn write_to(&self, out: &mut impl Write, include_body: bool) -> io::Result<()> {
        let reason = match self.status {
            200 => "OK",
            400 => "Bad Request",
            404 => "Not Found",
            405 => "Method Not Allowed",
            _ => "Error",
        };
        write!(
            out,
            "HTTP/1.1 {} {reason}\r\nContent-Type: {}\r\nContent-Length: {}\r\nCache-Control: no-store\r\nConnection: close\r\n\r\n",
            self.status,
            self.content_type,
            self.body.len()
        )?;
        if include_body {
            out.write_all(&self.body)?;
        }
        out.flush()
    }
}

/// Where the cockpit's static files and the heat map come from.
#[derive(Clone, Debug, Default)]
pub struct StaticSite {
    pub root: Option<PathBuf>,
    pub heatmap: Option<PathBuf>,
}

pub const HEATMAP_URL: &str = "/heatmap.csv";

const FALLBACK_INDEX: &str = "<!doctype html><title>ctbot</title>\
<p>No cockpit bundle configured (pass <code>--cockpit-dir</code>). \
The WebSocket endpoint is on this port.</p>\n";

impl StaticSite {
    pub fn respond(&self, head: &RequestHead) -> Response {
        if head.method != "GET" && head.method != "HEAD" {
            return Response::text(405, "only GET and HEAD are supported\n");
        }
        let path = head.path.split(['?', '#']).next().unwrap_or("");
        if path == HEATMAP_URL {
            return match &self.heatmap {
                Some(p) => read_file(p),
                None => Response::text(404, "no heat map configured\n"),
            };
        }
        match &self.root {
            Some(root) => match resolve_static(root, path) {
                Some(file) => read_file(&file),
                None => Response::text(400, "bad path\n"),
            },
            None if path == "/" || path == "/index.html" => {
                Response::ok("text/html; charset=utf-8", FALLBACK_INDEX.as_bytes().to_vec())
            }
            None => Response::text(404, "not found\n"),
        }
    }

    /// Consumes the request head from `stream` and answers it.
    pub fn serve(&self, mut stream: TcpStream, head: &RequestHead) -> io::Result<()> {
        let mut discard = vec![0u8; head.len];
        stream.read_exact(&mut discard)?;
        self.respond(head).write_to(&mut stream, head.method != "HEAD")
    }
}

fn read_file(path: &Path) -> Response {
    match std::fs::read(path) {
        Ok(body) => Response::ok(content_type(path), body),
        Err(_) => Response::text(404, "not found\n"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(raw: &str) -> RequestHead {
        parse_head(raw.as_bytes()).unwrap().unwrap()
    }

    #[test]
    fn head_parsing() {
        assert!(parse_head(b"GET / HTTP/1.1\r\nHost: x\r\n").is_none());
        let h = head("GET /ws HTTP/1.1\r\nHost: x\r\nUpgrade: WebSocket\r\nConnection: Upgrade\r\n\r\nrest");
        assert_eq!(h.path, "/ws");
        assert_eq!(h.len, 70);
        assert!(h.is_websocket_upgrade());
        assert!(!head("GET / HTTP/1.1\r\n\r\n").is_websocket_upgrade());
        assert!(parse_head(b"NONSENSE\r\n\r\n").unwrap().is_err());
    }

    #[test]
    fn static_paths_stay_under_the_root() {
        let root = Path::new("/srv/cockpit");
        assert_eq!(resolve_static(root, "/app.js?v=2").unwrap(), root.join("app.js"));
        assert_eq!(resolve_static(root, "/").unwrap(), root.join("index.html"));
        assert!(resolve_static(root, "/../etc/passwd").is_none());
        assert!(resolve_static(root, "/a/../../b").is_none());
        assert!(resolve_static(root, "/a\\..\\b").is_none());
    }

    #[test]
    fn site_routes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("index.html"), "<h1>cockpit</h1>").unwrap();
        std::fs::write(dir.path().join("h.csv"), "x,y,z,count,percentage\n").unwrap();
        let site = StaticSite {
            root: Some(dir.path().to_path_buf()),
            heatmap: Some(dir.path().join("h.csv")),
        };
        let r = site.respond(&head("GET / HTTP/1.1\r\n\r\n"));
        assert_eq!((r.status, r.body.as_slice()), (200, b"<h1>cockpit</h1>".as_slice()));
        let r = site.respond(&head("GET /heatmap.csv HTTP/1.1\r\n\r\n"));
        assert_eq!(r.content_type, "text/csv; charset=utf-8");
        assert_eq!(site.respond(&head("GET /nope.js HTTP/1.1\r\n\r\n")).status, 404);
        assert_eq!(site.respond(&head("POST / HTTP/1.1\r\n\r\n")).status, 405);
        let bare = StaticSite::default();
        assert_eq!(bare.respond(&head("GET / HTTP/1.1\r\n\r\n")).status, 200);
        assert_eq!(bare.respond(&head("GET /heatmap.csv HTTP/1.1\r\n\r\n")).status, 404);
    }
}
