#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use conextract::corpus::{load_split, Entry, LoadOptions};
use conextract::gateway::{hashing_embedding, pseudo_tokenize};
use conextract::harness::ExperimentConfig;
use serde_json::{json, Value};

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("data")
}

pub fn tiny_test() -> PathBuf {
    data_dir().join("tiny_test.jsonl")
}

pub fn tiny_train() -> PathBuf {
    data_dir().join("tiny_train.jsonl")
}

/// Config for an LLM run over the tiny fixtures with the given backend.
pub fn llm_config(backend: Value, template: &str, out: &Path) -> ExperimentConfig {
    let value = json!({
        "dataset": {
            "name": "tiny",
            "train_path": tiny_train(),
            "test_path": tiny_test(),
        },
        "method": "llm",
        "llm": {
            "model_id": "mock-model",
            "backend": backend,
            "template_name": template,
        },
        "io": { "output_dir": out },
    });
    ExperimentConfig::from_json(&value.to_string()).expect("valid test config")
}

pub fn mock_config(kind: &str, template: &str, out: &Path) -> ExperimentConfig {
    llm_config(json!({ "kind": kind }), template, out)
}

pub fn baseline_config(method: &str, out: &Path) -> ExperimentConfig {
    let value = json!({
        "dataset": {
            "name": "tiny",
            "train_path": tiny_train(),
            "test_path": tiny_test(),
        },
        "method": method,
        "io": { "output_dir": out },
    });
    ExperimentConfig::from_json(&value.to_string()).expect("valid test config")
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// A local OpenAI-compatible server answering chat requests with the gold
/// keyphrases of the document found in the last user message, with
/// per-token logprobs, and embedding requests with hashed vectors.
pub struct StubServer {
    pub url: String,
    pub chat_calls: Arc<AtomicUsize>,
    pub embed_calls: Arc<AtomicUsize>,
}

pub fn gold_stub(dataset: &Path) -> StubServer {
    let entries = load_split(dataset, &LoadOptions::default())
        .expect("fixture loads")
        .entries;
    let entries = Arc::new(entries);
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
    let url = format!("http://{}", listener.local_addr().expect("addr"));
    let chat_calls = Arc::new(AtomicUsize::new(0));
    let embed_calls = Arc::new(AtomicUsize::new(0));
    let (chat, embed) = (chat_calls.clone(), embed_calls.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let (entries, chat, embed) = (entries.clone(), chat.clone(), embed.clone());
            thread::spawn(move || serve(stream, &entries, &chat, &embed));
        }
    });
    StubServer {
        url,
        chat_calls,
        embed_calls,
    }
}

fn serve(mut stream: TcpStream, entries: &[Entry], chat: &AtomicUsize, embed: &AtomicUsize) {
    let mut reader = BufReader::new(stream.try_clone().expect("clone"));
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).is_err() {
        return;
    }
    let mut length = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            length = v.trim().parse().unwrap_or(0);
        }
    }
    let mut payload = vec![0; length];
    if reader.read_exact(&mut payload).is_err() {
        return;
    }
    let body: Value = serde_json::from_slice(&payload).unwrap_or(Value::Null);
    let (status, reply) = if request_line.contains("/v1/chat/completions") {
        chat.fetch_add(1, Ordering::SeqCst);
        chat_reply(&body, entries)
    } else if request_line.contains("/v1/embeddings") {
        embed.fetch_add(1, Ordering::SeqCst);
        embed_reply(&body)
    } else {
        (404, json!({"error": "not found"}))
    };
    let text = reply.to_string();
    let response = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    );
    let _ = stream.write_all(response.as_bytes());
}

fn chat_reply(body: &Value, entries: &[Entry]) -> (u16, Value) {
    let last = body["messages"]
        .as_array()
        .and_then(|m| m.last())
        .and_then(|m| m["content"].as_str())
        .unwrap_or_default();
    let target = entries
        .iter()
        .filter(|e| last.contains(&e.document.text))
        .max_by_key(|e| e.document.text.len());
    let Some(target) = target else {
        return (400, json!({"error": "unknown document"}));
    };
    let text = target.gold.keyphrases.join(", ");
    let tokens: Vec<Value> = pseudo_tokenize(&text)
        .into_iter()
        .enumerate()
        .map(|(i, t)| json!({"token": t, "logprob": -0.05 * (1 + i % 7) as f64}))
        .collect();
    (
        200,
        json!({
            "id": "stub",
            "object": "chat.completion",
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": text},
                "logprobs": {"content": tokens},
                "finish_reason": "stop",
            }],
        }),
    )
}

fn embed_reply(body: &Value) -> (u16, Value) {
    let model = body["model"].as_str().unwrap_or_default();
    let inputs: Vec<&str> = body["input"]
        .as_array()
        .map(|a| a.iter().filter_map(Value::as_str).collect())
        .unwrap_or_default();
    let data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| json!({"index": i, "embedding": hashing_embedding(t, model).values}))
        .collect();
    (200, json!({"data": data}))
}
