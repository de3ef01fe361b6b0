use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, Command, Stdio};

use futures::{SinkExt, StreamExt};
use iart_core::session::read_log;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

struct Server {
    child: Child,
    addr: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn serve(extra: &[&str], data_dir: &Path) -> Server {
    let mut child = Command::new(env!("CARGO_BIN_EXE_iart"))
        .args(["serve", "--port", "0"])
        .args(extra)
        .env("IART_DATA_DIR", data_dir)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
    let v: Value = serde_json::from_str(&line).expect("listening line");
    Server {
        child,
        addr: v["listening"].as_str().unwrap().to_string(),
    }
}

fn http_get(addr: &str, path: &str) -> String {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    out
}

type Socket = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn connect(addr: &str) -> Socket {
    tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap().0
}

async fn send(ws: &mut Socket, v: Value) {
    ws.send(Message::Text(v.to_string())).await.unwrap();
}

async fn recv(ws: &mut Socket) -> Value {
    loop {
        match ws.next().await.expect("open socket").unwrap() {
            Message::Text(t) => return serde_json::from_str(&t).unwrap(),
            Message::Close(_) => panic!("closed"),
            _ => {}
        }
    }
}

#[tokio::test]
async fn lockstep_session_over_the_socket() {
    let dir = tempfile::tempdir().unwrap();
    let server = serve(&["--lockstep"], dir.path());
    let mut ws = connect(&server.addr).await;

    send(&mut ws, json!({"type": "pointer", "x": [0.0, 0.0]})).await;
    assert_eq!(recv(&mut ws).await["type"], "error");
    send(&mut ws, json!({"type": "warp"})).await;
    assert_eq!(recv(&mut ws).await["kind"], "protocol");
    send(&mut ws, json!({"type": "start", "mode": "realtime", "curve": "helix"})).await;
    assert!(recv(&mut ws).await["message"].as_str().unwrap().contains("model"));

    send(&mut ws, json!({"type": "start", "mode": "demonstrate", "curve": "circle", "duration": 2.0, "seed": 4})).await;
    let ready = recv(&mut ws).await;
    assert_eq!(ready["type"], "ready");
    let mut last_t = -1.0;
    let mut assist = Vec::new();
    for k in 0..60 {
        if k == 20 || k == 40 {
            send(&mut ws, json!({"type": "toggle_assist"})).await;
        }
        let a = 0.001 * k as f64;
        send(&mut ws, json!({"type": "pointer", "x": [0.05 * a.cos(), 0.05 * a.sin()]})).await;
        let tick = recv(&mut ws).await;
        assert_eq!(tick["type"], "tick");
        assert_eq!(tick["tick"], k);
        let t = tick["t"].as_f64().unwrap();
        assert!(t > last_t);
        last_t = t;
        assert_eq!(tick["curve"], ready["curve"]);
        assist.push(tick["assist"].as_u64().unwrap());
    }
    assert!(assist[..20].iter().all(|a| *a == 0));
    assert!(assist[20..40].iter().all(|a| *a == 1));
    assert!(assist[40..].iter().all(|a| *a == 0));

    let end = recv(&mut ws).await;
    assert_eq!(end["type"], "session_end");
    assert_eq!(end["summary"]["n_ticks"], 60);
    assert_eq!(end["summary"]["switches"], 2);
    let log = read_log(end["summary"]["log_path"].as_str().unwrap()).unwrap();
    assert!(log.header.created_at.is_none());
    assert_eq!(log.len(), 60);
    assert!(log.ticks[0].x.x > 0.0);
}

#[tokio::test]
async fn timed_session_ticks_at_30_hz_and_survives_disconnect() {
    let dir = tempfile::tempdir().unwrap();
    let server = serve(&[], dir.path());
    let mut ws = connect(&server.addr).await;
    send(&mut ws, json!({"type": "start", "mode": "demonstrate", "duration": 1.0})).await;
    assert_eq!(recv(&mut ws).await["type"], "ready");
    let started = std::time::Instant::now();
    let mut ts = Vec::new();
    let end = loop {
        let m = recv(&mut ws).await;
        if m["type"] == "tick" {
            ts.push(m["t"].as_f64().unwrap());
        } else {
            break m;
        }
    };
    let elapsed = started.elapsed().as_secs_f64();
    assert!((0.8..3.0).contains(&elapsed), "{elapsed}");
    assert_eq!(end["summary"]["n_ticks"], 30);
    assert!(ts.windows(2).all(|w| w[1] > w[0]));
    assert!(ts.len() <= 30);

    // a client that leaves mid-session still gets its partial log persisted
    send(&mut ws, json!({"type": "start", "mode": "demonstrate", "duration": 60.0})).await;
    let id = recv(&mut ws).await["session"].as_str().unwrap().to_string();
    recv(&mut ws).await;
    drop(ws);
    let path = dir.path().join(format!("live-{id}.jsonl"));
    for _ in 0..50 {
        if path.exists() {
            break;
        }
        tokio::time::sleep(std::time::Duration::from_millis(50)).await;
    }
    let log = read_log(&path).unwrap();
    assert!(!log.is_empty() && log.len() < 1800);
}

#[test]
fn static_files_are_served_at_the_root() {
    let dir = tempfile::tempdir().unwrap();
    let server = serve(&[], dir.path());
    let page = http_get(&server.addr, "/");
    assert!(page.starts_with("HTTP/1.1 200"), "{page}");
    assert!(page.contains("/ws"));

    let bundle = dir.path().join("bundle");
    std::fs::create_dir(&bundle).unwrap();
    std::fs::write(bundle.join("index.html"), "<p>client</p>").unwrap();
    std::fs::write(bundle.join("app.js"), "console.log(1)").unwrap();
    let server = serve(&["--static", bundle.to_str().unwrap()], dir.path());
    assert!(http_get(&server.addr, "/").ends_with("<p>client</p>"));
    let js = http_get(&server.addr, "/app.js");
    assert!(js.contains("javascript"));
    assert!(http_get(&server.addr, "/missing.css").starts_with("HTTP/1.1 404"));
}
