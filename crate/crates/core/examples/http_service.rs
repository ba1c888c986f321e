//! Start the session API on a local port and drive it with a few requests.
//!
//! cargo run --release --example http_service

use std::sync::Arc;

use coadapt::service::{router, AppState};
use coadapt::session::{initial_heads, Engine, SessionConfig};
use coadapt::rl::TrainConfig;
use serde_json::{json, Value};
use std::io::{Read, Write};

fn request(addr: std::net::SocketAddr, method: &str, path: &str, body: Option<Value>) -> Value {
    let body = body.map(|b| b.to_string()).unwrap_or_default();
    let mut stream = std::net::TcpStream::connect(addr).expect("server is up");
    let req = format!(
        "{method} {path} HTTP/1.1\r\nhost: localhost\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(req.as_bytes()).expect("write");
    let mut raw = String::new();
    stream.read_to_string(&mut raw).expect("read");
    let (head, payload) = raw.split_once("\r\n\r\n").expect("http response");
    println!("{method} {path} -> {}", head.lines().next().unwrap_or(""));
    serde_json::from_str(payload).unwrap_or(Value::Null)
}

fn main() {
    let engine = Engine::default()
        .with_session(SessionConfig { refine: false, ..SessionConfig::default() })
        .expect("valid config");
    let policy = initial_heads(&TrainConfig::default(), 34).0;
    let app = Arc::new(AppState::new(engine, policy));
    let rt = tokio::runtime::Runtime::new().expect("runtime");
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).expect("bind");
    let addr = listener.local_addr().expect("addr");
    rt.spawn(async move { axum::serve(listener, router(app)).await });

    let s = request(addr, "POST", "/api/sessions", Some(json!({"prompt": "a quiet harbor", "target": "a quiet harbor with sails at dusk"})));
    let id = s["id"].as_str().expect("id").to_owned();
    println!("  round {} score {:.4}", s["round"], s["clip_score"].as_f64().unwrap_or(0.0));

    let sug = request(addr, "GET", &format!("/api/sessions/{id}/suggestions"), None);
    println!("  probabilities {}", sug["probabilities"]);
    let first = sug["suggestions"][0]["edit"].clone();
    println!("  applying {first}");

    let s = request(addr, "POST", &format!("/api/sessions/{id}/edits"), Some(json!({"edit": first, "use_injection": true})));
    println!("  round {} status {} rewards {}", s["round"], s["status"], s["rewards"]);
    let s = request(addr, "POST", &format!("/api/sessions/{id}/accept"), None);
    println!("  status {}", s["status"]);
    request(addr, "POST", &format!("/api/sessions/{id}/accept"), None);
}
