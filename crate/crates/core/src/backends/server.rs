//! Serves any [`Backend`] over the JSON wire protocol.
//!
//! Used by `serve-mock` to put fixture answers behind real HTTP, and by the
//! tests that exercise [`super::HttpBackend`] end to end.

use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use log::debug;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tiny_http::{Header, Method, Request, Response, Server};

use super::{Backend, BackendError, ChatReply, ChatRequest, EmbedRequest, TagRequest};

pub struct ServerHandle {
    server: Arc<Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server is shut down from elsewhere.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds `addr` (use port 0 for an ephemeral port) and answers requests on
/// `workers` threads.
pub fn serve(backend: Arc<dyn Backend>, addr: &str, workers: usize) -> io::Result<ServerHandle> {
    let server = Server::http(addr).map_err(|e| io::Error::other(e.to_string()))?;
    let addr = server.server_addr().to_ip().ok_or_else(|| io::Error::other("server is not bound to an ip address"))?;
    let server = Arc::new(server);
    let workers = (0..workers.max(1))
        .map(|_| {
            let server = Arc::clone(&server);
            let backend = Arc::clone(&backend);
            std::thread::spawn(move || {
                while let Ok(req) = server.recv() {
                    handle(&*backend, req);
                }
            })
        })
        .collect();
    Ok(ServerHandle { server, addr, workers })
}

fn handle(backend: &dyn Backend, mut req: Request) {
    let mut body = String::new();
    let (status, payload) = if let Err(e) = req.as_reader().read_to_string(&mut body) {
        (400, error_body(&format!("reading body: {e}")))
    } else {
        route(backend, req.method(), req.url(), &body)
    };
    debug!("{} {} -> {status}", req.method(), req.url());
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    let _ = req.respond(Response::from_string(payload).with_status_code(status).with_header(header));
}

fn route(backend: &dyn Backend, method: &Method, url: &str, body: &str) -> (u16, String) {
    let path = url.split('?').next().unwrap_or(url);
    match (method, path) {
        (Method::Get, "/ready") => (200, r#"{"ready":true}"#.to_string()),
        (Method::Post, "/chat") => call(body, |r: ChatRequest| {
            backend.chat(&r).map(|c| ChatReply { text: c.text, latency_ms: Some(c.latency_ms) })
        }),
        (Method::Post, "/embed") => call(body, |r: EmbedRequest| backend.embed(&r)),
        (Method::Post, "/tag") => call(body, |r: TagRequest| backend.tag(&r)),
        _ => (404, error_body(&format!("no route for {method} {path}"))),
    }
}

fn call<Req, Resp>(body: &str, f: impl FnOnce(Req) -> Result<Resp, BackendError>) -> (u16, String)
where
    Req: DeserializeOwned,
    Resp: Serialize,
{
    let req: Req = match serde_json::from_str(body) {
        Ok(r) => r,
        Err(e) => return (400, error_body(&format!("invalid request: {e}"))),
    };
    match f(req) {
        Ok(resp) => (200, serde_json::to_string(&resp).expect("response serializes")),
        Err(e) => (status_for(&e), error_body(&e.to_string())),
    }
}

fn status_for(e: &BackendError) -> u16 {
    match e {
        BackendError::Precondition(_) => 400,
        BackendError::MissingFixture(_) => 404,
        BackendError::Timeout(_) => 504,
        BackendError::Unavailable(_) => 503,
        BackendError::Protocol { .. } | BackendError::Http { .. } => 502,
        _ => 500,
    }
}

fn error_body(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}
