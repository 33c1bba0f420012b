//! Client-side contract tests against an in-process stub bridge.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::Engine;
use conceptcf::arithmetic::linearity_probe;
use conceptcf::providers::{
    generate_world, EmbeddingProvider, InMemoryImages, RemoteOptions, RemoteProvider,
    SyntheticProvider, WorldConfig,
};
use conceptcf::Error;
use serde_json::{json, Value};

#[derive(Default)]
struct Log {
    requests: Vec<(String, Value)>,
}

struct Stub {
    endpoint: String,
    log: Arc<Mutex<Log>>,
    failures: Arc<Mutex<VecDeque<u16>>>,
}

/// Serves the bridge protocol from a synthetic provider. Queued status codes
/// are returned (one per request) before normal service resumes.
fn spawn_stub(provider: SyntheticProvider, model_id: &'static str) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}", listener.local_addr().unwrap());
    let log = Arc::new(Mutex::new(Log::default()));
    let failures = Arc::new(Mutex::new(VecDeque::new()));
    let provider = Arc::new(provider);
    let (l, f) = (log.clone(), failures.clone());
    std::thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let (p, l, f) = (provider.clone(), l.clone(), f.clone());
            std::thread::spawn(move || serve(stream, &p, model_id, &l, &f));
        }
    });
    Stub {
        endpoint,
        log,
        failures,
    }
}

fn serve(
    stream: TcpStream,
    p: &SyntheticProvider,
    model_id: &str,
    log: &Mutex<Log>,
    failures: &Mutex<VecDeque<u16>>,
) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut out = stream;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let mut parts = line.split_whitespace();
        let method = parts.next().unwrap_or_default().to_owned();
        let path = parts.next().unwrap_or_default().to_owned();
        let mut length = 0usize;
        loop {
            let mut h = String::new();
            reader.read_line(&mut h).unwrap();
            let h = h.trim_end();
            if h.is_empty() {
                break;
            }
            if let Some((k, v)) = h.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    length = v.trim().parse().unwrap();
                }
            }
        }
        let mut body = vec![0u8; length];
        reader.read_exact(&mut body).unwrap();
        let request: Value = if body.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&body).unwrap()
        };
        log.lock()
            .unwrap()
            .requests
            .push((path.clone(), request.clone()));

        let (status, response) = match failures.lock().unwrap().pop_front() {
            Some(code) => (code, json!({ "error": "scripted" })),
            None => route(&method, &path, &request, p, model_id),
        };
        let text = response.to_string();
        let reason = if status == 200 { "OK" } else { "Error" };
        write!(
            out,
            "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{text}",
            text.len()
        )
        .unwrap();
        out.flush().unwrap();
    }
}

fn image_id(request: &Value) -> String {
    let b = base64::engine::general_purpose::STANDARD
        .decode(request["image"].as_str().unwrap())
        .unwrap();
    String::from_utf8(b).unwrap()
}

fn route(
    method: &str,
    path: &str,
    request: &Value,
    p: &SyntheticProvider,
    model_id: &str,
) -> (u16, Value) {
    let envelope = |payload: Value| json!({ "model_id": model_id, "dimension": p.dimension(), "payload": payload, "latency_ms": 1 });
    match (method, path) {
        ("GET", "/healthz") => (
            200,
            json!({ "model_id": model_id, "dimension": p.dimension() }),
        ),
        ("POST", "/embed_text") => {
            let vectors: Vec<Vec<f64>> = request["texts"]
                .as_array()
                .unwrap()
                .iter()
                .map(|t| {
                    p.embed_text(t.as_str().unwrap())
                        .unwrap()
                        .as_slice()
                        .to_vec()
                })
                .collect();
            (200, envelope(json!({ "vectors": vectors })))
        }
        ("POST", "/embed_image") => {
            let v = p.embed_image(&image_id(request)).unwrap();
            (200, envelope(json!({ "vector": v.as_slice() })))
        }
        ("POST", "/tags") => {
            // Raw casing and blanks exercise client-side canonicalization.
            let mut tags: Vec<String> = p
                .detect_tags(&image_id(request))
                .unwrap()
                .iter()
                .map(|t| t.to_uppercase())
                .collect();
            tags.push(" ".into());
            (200, envelope(json!({ "tags": tags })))
        }
        ("POST", "/describe_and_extract") => {
            let id = image_id(request);
            let tags = p.detect_tags(&id).unwrap();
            let description = format!(
                "{}: {}",
                request["instruction"].as_str().unwrap(),
                tags.join(" and ")
            );
            (
                200,
                envelope(json!({ "description": description, "tags": tags })),
            )
        }
        _ => (404, json!({ "error": "not found" })),
    }
}

fn fast() -> RemoteOptions {
    RemoteOptions {
        timeout: Duration::from_secs(5),
        ..RemoteOptions::default()
    }
}

fn text_requests(stub: &Stub) -> Vec<Value> {
    stub.log
        .lock()
        .unwrap()
        .requests
        .iter()
        .filter(|(p, _)| p == "/embed_text")
        .map(|(_, v)| v["texts"].clone())
        .collect()
}

#[test]
fn connect_reads_health() {
    let stub = spawn_stub(SyntheticProvider::new(16, 3), "stub-model");
    let r = RemoteProvider::connect(&stub.endpoint, fast()).unwrap();
    assert_eq!(r.model_id(), "stub-model");
    assert_eq!(r.dimension(), 16);
}

#[test]
fn text_embeddings_match_the_backend_in_order() {
    let backend = SyntheticProvider::new(12, 4);
    let stub = spawn_stub(backend.clone(), "m");
    let r = RemoteProvider::connect(&stub.endpoint, fast()).unwrap();
    let texts: Vec<String> = ["zebra", "apple", "dog, cat", "mango"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let got = r.embed_texts(&texts).unwrap();
    for (t, v) in texts.iter().zip(&got) {
        assert_eq!(v, &backend.embed_text(t).unwrap());
    }
}

#[test]
fn texts_are_canonicalized_deduplicated_and_cached() {
    let stub = spawn_stub(SyntheticProvider::new(8, 5), "m");
    let r = RemoteProvider::connect(&stub.endpoint, fast()).unwrap();
    let out = r
        .embed_texts(&["Dog".to_string(), "dog".to_string()])
        .unwrap();
    assert_eq!(out[0], out[1]);
    assert_eq!(text_requests(&stub), vec![json!(["dog"])]);
    r.embed_text("DOG").unwrap();
    assert_eq!(text_requests(&stub).len(), 1);
}

#[test]
fn large_requests_are_batched() {
    let stub = spawn_stub(SyntheticProvider::new(8, 6), "m");
    let opts = RemoteOptions {
        batch_size: 4,
        max_in_flight: 2,
        ..fast()
    };
    let r = RemoteProvider::connect(&stub.endpoint, opts).unwrap();
    let texts: Vec<String> = (0..10).map(|i| format!("thing {i}")).collect();
    let got = r.embed_texts(&texts).unwrap();
    let backend = SyntheticProvider::new(8, 6);
    for (t, v) in texts.iter().zip(&got) {
        assert_eq!(v, &backend.embed_text(t).unwrap());
    }
    let sizes: Vec<usize> = text_requests(&stub)
        .iter()
        .map(|t| t.as_array().unwrap().len())
        .collect();
    assert_eq!(sizes.iter().sum::<usize>(), 10);
    assert!(sizes.iter().all(|&s| s <= 4));
}

#[test]
fn transient_failures_are_retried() {
    let stub = spawn_stub(SyntheticProvider::new(8, 7), "m");
    let r = RemoteProvider::connect(&stub.endpoint, fast()).unwrap();
    stub.failures.lock().unwrap().extend([503, 429]);
    assert!(r.embed_text("river").is_ok());
    assert_eq!(text_requests(&stub).len(), 3);
}

#[test]
fn retries_are_bounded() {
    let stub = spawn_stub(SyntheticProvider::new(8, 7), "m");
    let r = RemoteProvider::connect(&stub.endpoint, fast()).unwrap();
    stub.failures.lock().unwrap().extend([500, 502, 503, 504]);
    match r.embed_text("river") {
        Err(Error::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected transport error, got {other:?}"),
    }
}

#[test]
fn client_errors_fail_immediately() {
    let stub = spawn_stub(SyntheticProvider::new(8, 8), "m");
    let r = RemoteProvider::connect(&stub.endpoint, fast()).unwrap();
    stub.failures.lock().unwrap().push_back(400);
    match r.embed_text("river") {
        Err(Error::Transport { attempts, message }) => {
            assert_eq!(attempts, 1);
            assert!(message.contains("400"));
        }
        other => panic!("expected transport error, got {other:?}"),
    }
    assert_eq!(text_requests(&stub).len(), 1);
}

#[test]
fn unreachable_bridge_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let err = RemoteProvider::connect(&format!("http://127.0.0.1:{port}"), fast()).unwrap_err();
    assert!(matches!(err, Error::Transport { .. }));
}

fn world_with_images() -> (
    Arc<conceptcf::DatasetManifest>,
    SyntheticProvider,
    Arc<InMemoryImages>,
) {
    let manifest = Arc::new(
        generate_world(&WorldConfig {
            images: 6,
            dimension: 10,
            ..WorldConfig::default()
        })
        .unwrap(),
    );
    let backend = SyntheticProvider::new(10, 7)
        .with_manifest(manifest.clone())
        .unwrap();
    let images = manifest
        .records
        .iter()
        .map(|r| (r.id.clone(), r.id.as_bytes().to_vec()))
        .collect::<HashMap<_, _>>();
    (manifest, backend, Arc::new(InMemoryImages(images)))
}

#[test]
fn image_endpoints_round_trip() {
    let (manifest, backend, images) = world_with_images();
    let stub = spawn_stub(backend.clone(), "m");
    let r = RemoteProvider::connect(&stub.endpoint, fast())
        .unwrap()
        .with_images(images);
    for rec in &manifest.records {
        let v = r.embed_image(&rec.id).unwrap();
        assert_eq!(v.as_slice().len(), r.dimension());
        assert_eq!(v, backend.embed_image(&rec.id).unwrap());
        assert_eq!(r.detect_tags(&rec.id).unwrap(), rec.detected_tags);
        let (description, tags) = r.describe_and_extract(&rec.id).unwrap();
        assert_eq!(tags, rec.detected_tags);
        assert!(!description.is_empty());
    }
}

#[test]
fn describe_without_images_is_a_config_error() {
    let stub = spawn_stub(SyntheticProvider::new(8, 9), "m");
    let r = RemoteProvider::connect(&stub.endpoint, fast()).unwrap();
    assert!(matches!(r.describe_and_extract("x"), Err(Error::Config(_))));
}

#[test]
fn manifest_fallback_serves_images_locally() {
    let (manifest, backend, _) = world_with_images();
    let stub = spawn_stub(backend, "m");
    let r = RemoteProvider::connect(&stub.endpoint, fast())
        .unwrap()
        .with_manifest(manifest.clone());
    let rec = &manifest.records[0];
    assert_eq!(r.embed_image(&rec.id).unwrap(), rec.embedding);
    assert_eq!(r.detect_tags(&rec.id).unwrap(), rec.detected_tags);
}

#[test]
fn linearity_holds_through_the_bridge() {
    let stub = spawn_stub(SyntheticProvider::new(32, 10), "m");
    let r = RemoteProvider::connect(&stub.endpoint, fast()).unwrap();
    let items: Vec<Vec<String>> = vec![
        vec!["dog".into(), "leash".into()],
        vec!["car".into(), "road".into(), "sign".into()],
    ];
    let report = linearity_probe(&r, &items).unwrap();
    assert!((report.mean - 1.0).abs() < 1e-9);
}
