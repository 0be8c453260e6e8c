//! `/encode` client against an in-process mock sidecar.

use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use agent_discovery::embed::{EmbedError, Embedder, EmbedderConfig, HashEmbedder, RemoteEncoder, MAX_REMOTE_BATCH};
use serde_json::{json, Value};

#[derive(Clone, Copy)]
enum Behaviour {
    /// Answers with the hash embedding of each text.
    Echo { dim: usize },
    /// First request at `first` dims, later ones at `later`.
    DriftingDim { first: usize, later: usize },
    Reject,
}

struct Mock {
    url: String,
    batches: Arc<Mutex<Vec<usize>>>,
}

fn start(behaviour: Behaviour) -> Mock {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let batches = Arc::new(Mutex::new(Vec::new()));
    let seen = batches.clone();
    thread::spawn(move || {
        for mut req in server.incoming_requests() {
            assert_eq!(req.url(), "/encode");
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            let texts: Vec<String> = serde_json::from_str::<Value>(&body).unwrap()["texts"]
                .as_array()
                .unwrap()
                .iter()
                .map(|t| t.as_str().unwrap().to_string())
                .collect();
            let call = {
                let mut b = seen.lock().unwrap();
                b.push(texts.len());
                b.len()
            };
            let (status, payload) = match behaviour {
                Behaviour::Reject => (503, json!({"error": "model not loaded"})),
                Behaviour::Echo { dim } => (200, encode(&texts, dim)),
                Behaviour::DriftingDim { first, later } => {
                    (200, encode(&texts, if call == 1 { first } else { later }))
                }
            };
            let resp = tiny_http::Response::from_string(payload.to_string())
                .with_status_code(status)
                .with_header("Content-Type: application/json".parse::<tiny_http::Header>().unwrap());
            let _ = req.respond(resp);
        }
    });
    Mock { url, batches }
}

fn encode(texts: &[String], dim: usize) -> Value {
    let h = HashEmbedder::new(dim).unwrap();
    let vectors: Vec<Vec<f64>> = texts.iter().map(|t| h.embed(t).unwrap().into_values()).collect();
    json!({"vectors": vectors, "dim": dim, "model": "mock"})
}

#[test]
fn thousand_texts_are_chunked_and_ordered() {
    let mock = start(Behaviour::Echo { dim: 16 });
    let enc = RemoteEncoder::new(&mock.url);
    let texts: Vec<String> = (0..1000).map(|i| format!("skill number {i} planning")).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let out = enc.embed_batch(&refs).unwrap();

    let batches = mock.batches.lock().unwrap().clone();
    assert_eq!(batches.len(), 1000usize.div_ceil(MAX_REMOTE_BATCH));
    assert!(batches.iter().all(|&n| n <= MAX_REMOTE_BATCH));
    assert_eq!(batches.iter().sum::<usize>(), 1000);

    let h = HashEmbedder::new(16).unwrap();
    assert_eq!(out.len(), 1000);
    for (t, v) in texts.iter().zip(&out) {
        // Re-normalization on receipt may move the last bit.
        for (a, b) in v.values().iter().zip(h.embed(t).unwrap().values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(v.provider_id(), "remote:mock");
    }
    assert_eq!(enc.dim(), Some(16));
}

#[test]
fn dimension_change_after_pinning_is_an_error() {
    let mock = start(Behaviour::DriftingDim { first: 16, later: 24 });
    let enc = RemoteEncoder::new(&mock.url);
    enc.embed_batch(&["first call"]).unwrap();
    assert!(matches!(
        enc.embed_batch(&["second call"]),
        Err(EmbedError::DimensionMismatch { expected: 16, got: 24 })
    ));
}

#[test]
fn non_success_status_is_rejected_without_retry() {
    let mock = start(Behaviour::Reject);
    let enc = RemoteEncoder::new(&mock.url);
    match enc.embed_batch(&["anything"]) {
        Err(EmbedError::RemoteRejected { status, message }) => {
            assert_eq!(status, 503);
            assert_eq!(message, "model not loaded");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(mock.batches.lock().unwrap().len(), 1);
}

#[test]
fn unreachable_sidecar_is_unavailable() {
    // Bind then drop to obtain a port nobody listens on.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let embedder = Embedder::from_config(&EmbedderConfig::remote(format!("127.0.0.1:{port}"))).unwrap();
    assert!(matches!(
        embedder.embed_text("route planning"),
        Err(EmbedError::RemoteUnavailable(_))
    ));
}

#[test]
fn embedder_front_end_uses_remote() {
    let mock = start(Behaviour::Echo { dim: 32 });
    let embedder = Embedder::from_config(&EmbedderConfig::remote(mock.url.clone())).unwrap();
    assert_eq!(embedder.dim(), None);
    let v = embedder.embed_text("image captioning").unwrap();
    assert_eq!(v.dim(), 32);
    assert_eq!(embedder.dim(), Some(32));
    assert!(matches!(embedder.embed_text("   "), Err(EmbedError::EmptyText)));
}
