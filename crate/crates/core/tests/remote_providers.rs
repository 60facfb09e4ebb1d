use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use embedcal::calibrator::{ClassId, Label, LabelSet};
use embedcal::providers::{
    CachedEmbedder, Embedder, EmbeddingCache, GenerationRequest, Generator, PromptTemplate, RemoteConfig,
    RemoteEmbedder, RemoteGenerator,
};
use embedcal::Error;
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Seen {
    body: Value,
    auth: Option<String>,
}

type Responder = dyn Fn(usize, &Value) -> (u16, Value) + Send + Sync;

/// Minimal HTTP/1.1 server answering each request with `respond(index, body)`.
fn serve(respond: Arc<Responder>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let log = Arc::clone(&log);
            let respond = Arc::clone(&respond);
            thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                let mut auth = None;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap() == 0 {
                        return;
                    }
                    let line = line.trim_end();
                    if line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        auth = Some(line["authorization:".len()..].trim().to_string());
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let body: Value = serde_json::from_slice(&body).unwrap();
                let index = {
                    let mut l = log.lock().unwrap();
                    l.push(Seen { body: body.clone(), auth });
                    l.len() - 1
                };
                let (status, reply) = respond(index, &body);
                let text = reply.to_string();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{text}",
                    text.len()
                )
                .unwrap();
            });
        }
    });
    (url, seen)
}

fn config(url: &str) -> RemoteConfig {
    RemoteConfig {
        backoff_ms: 1,
        ..RemoteConfig::new(url, "test-model")
    }
}

/// Embeds text `s` as `[len(s), first byte]`.
fn embedding_reply(body: &Value) -> Value {
    let items = body["input"].as_array().unwrap();
    let data: Vec<Value> = items
        .iter()
        .enumerate()
        .rev()
        .map(|(i, s)| {
            let s = s.as_str().unwrap();
            json!({"index": i, "embedding": [s.len() as f64, f64::from(s.as_bytes()[0])]})
        })
        .collect();
    json!({ "data": data })
}

#[test]
fn batches_are_reassembled_in_request_order() {
    let (url, seen) = serve(Arc::new(|_, b| (200, embedding_reply(b))));
    let mut emb = RemoteEmbedder::new(config(&url), 2).with_batch_size(3);
    let items: Vec<String> = (0..10).map(|i| format!("{}{}", char::from(b'a' + i), "x".repeat(i as usize))).collect();
    let out = emb.embed_batch(&items).unwrap();
    for (i, v) in out.iter().enumerate() {
        assert_eq!(v, &vec![(i + 1) as f64, f64::from(b'a' + i as u8)]);
    }
    assert_eq!(emb.requests(), 4);
    let seen = seen.lock().unwrap();
    assert!(seen.iter().all(|s| s.body["model"] == "test-model"));
}

#[test]
fn token_comes_from_environment() {
    let (url, seen) = serve(Arc::new(|_, b| (200, embedding_reply(b))));
    // SAFETY: this variable name is used by no other test.
    unsafe { std::env::set_var("EMBEDCAL_TEST_TOKEN", "s3cret") };
    let mut cfg = config(&url);
    cfg.api_key_env = Some("EMBEDCAL_TEST_TOKEN".into());
    RemoteEmbedder::new(cfg, 2).embed("hello").unwrap();
    assert_eq!(seen.lock().unwrap()[0].auth.as_deref(), Some("Bearer s3cret"));

    let mut missing = config(&url);
    missing.api_key_env = Some("EMBEDCAL_TEST_TOKEN_MISSING".into());
    let err = RemoteEmbedder::new(missing, 2).embed("hello").unwrap_err();
    assert!(matches!(err, Error::Remote(_)));
}

#[test]
fn transient_failures_are_retried() {
    let (url, seen) = serve(Arc::new(|i, b| if i < 2 { (503, json!({})) } else { (200, embedding_reply(b)) }));
    let v = RemoteEmbedder::new(config(&url), 2).embed("abc").unwrap();
    assert_eq!(v, vec![3.0, f64::from(b'a')]);
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn retries_are_bounded_and_client_errors_fail_fast() {
    let (url, seen) = serve(Arc::new(|_, _| (500, json!({}))));
    let mut cfg = config(&url);
    cfg.max_retries = 2;
    let err = RemoteEmbedder::new(cfg, 2).embed("abc").unwrap_err();
    assert!(err.is_provider_failure());
    assert_eq!(seen.lock().unwrap().len(), 3);

    let (url, seen) = serve(Arc::new(|_, _| (400, json!({"error": "bad"}))));
    assert!(RemoteEmbedder::new(config(&url), 2).embed("abc").is_err());
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn wrong_dimension_is_rejected() {
    let (url, _) = serve(Arc::new(|_, b| (200, embedding_reply(b))));
    let err = RemoteEmbedder::new(config(&url), 3).embed("abc").unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { expected: 3, got: 2 } | Error::Remote(_)), "{err}");
}

#[test]
fn cache_makes_reruns_offline() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let (url, seen) = serve(Arc::new(|_, b| (200, embedding_reply(b))));
    let items = vec!["one".to_string(), "two".to_string(), "one".to_string()];
    let first = {
        let cache = EmbeddingCache::open(&path, "test-model").unwrap();
        let mut emb = CachedEmbedder::new(RemoteEmbedder::new(config(&url), 2), cache);
        let out = emb.embed_batch(&items).unwrap();
        assert_eq!(out[0], out[2]);
        out
    };
    let calls = seen.lock().unwrap().len();
    let cache = EmbeddingCache::open(&path, "test-model").unwrap();
    let mut emb = CachedEmbedder::new(RemoteEmbedder::new(config("http://127.0.0.1:9/unreachable"), 2), cache);
    assert_eq!(emb.embed_batch(&items).unwrap(), first);
    assert_eq!(emb.inner().requests(), 0);
    assert_eq!(seen.lock().unwrap().len(), calls);
}

fn labels() -> LabelSet {
    LabelSet::new(vec![
        Label {
            class: ClassId(1),
            name: "billing".into(),
            description: "questions about invoices".into(),
            embedding: vec![1.0, 0.0],
        },
        Label {
            class: ClassId(2),
            name: "weather".into(),
            description: "forecasts".into(),
            embedding: vec![0.0, 1.0],
        },
    ])
    .unwrap()
}

struct LengthEmbedder;

impl Embedder for LengthEmbedder {
    fn dim(&self) -> usize {
        2
    }

    fn embed_batch(&mut self, items: &[String]) -> embedcal::Result<Vec<Vec<f64>>> {
        Ok(items.iter().map(|s| vec![s.len() as f64, 1.0]).collect())
    }
}

#[test]
fn generator_renders_prompt_and_truncates() {
    let (url, seen) = serve(Arc::new(|_, _| {
        (200, json!({"choices": [{"message": {"content": "first\n\n  second  \nthird\nfourth\n"}}]}))
    }));
    let mut g = RemoteGenerator::new(config(&url), PromptTemplate::rule_violation(), 0.7, labels(), Box::new(LengthEmbedder))
        .with_existing(ClassId(1), vec!["how much is my bill".into()]);
    let out = g.generate(GenerationRequest { class: ClassId(1), count: 3, round: 1 }).unwrap();
    assert_eq!(out, vec![vec![5.0, 1.0], vec![6.0, 1.0], vec![5.0, 1.0]]);
    let body = seen.lock().unwrap()[0].body.clone();
    assert_eq!(body["temperature"], 0.7);
    let prompt = body["messages"][0]["content"].as_str().unwrap();
    assert!(prompt.contains("billing: questions about invoices"));
    assert!(prompt.contains("generate 3 **diverse**"));
    assert!(prompt.contains("how much is my bill"));

    // generated items are shown as existing examples next time
    g.generate(GenerationRequest { class: ClassId(1), count: 1, round: 2 }).unwrap();
    let prompt = seen.lock().unwrap()[1].body["messages"][0]["content"].as_str().unwrap().to_string();
    assert!(prompt.contains("second"));
}

#[test]
fn generator_short_reply_is_an_error() {
    let (url, _) = serve(Arc::new(|_, _| (200, json!({"choices": [{"message": {"content": "only one"}}]}))));
    let mut g = RemoteGenerator::new(config(&url), PromptTemplate::rule_violation(), 1.0, labels(), Box::new(LengthEmbedder));
    let err = g.generate(GenerationRequest { class: ClassId(2), count: 2, round: 1 }).unwrap_err();
    assert!(err.is_provider_failure(), "{err}");
}
