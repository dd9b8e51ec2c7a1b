//! HTTP backends against a local scripted server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use ace_core::clock::SystemClock;
use ace_core::embeddings::{cosine, Embedder, HttpEmbedder, HttpEmbedderConfig};
use ace_core::llm::{ChatRequest, Gateway, GatewayError, HttpChatBackend, HttpChatConfig, Message, Role};
use ace_core::retry::{HttpError, RetryPolicy};

struct Seen {
    path: String,
    auth: Option<String>,
    body: serde_json::Value,
}

/// Serves one scripted `(status, body)` per connection, then stops.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = std::thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
            let (mut len, mut auth) = (0usize, None);
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                let (k, v) = h.split_once(':').unwrap();
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => len = v.trim().parse().unwrap(),
                    "authorization" => auth = Some(v.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                path,
                auth,
                body: serde_json::from_slice(&buf).unwrap(),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (base, seen, handle)
}

fn fast_retry(max_retries: u32) -> RetryPolicy {
    RetryPolicy {
        max_retries,
        base_delay: Duration::from_millis(5),
        max_delay: Duration::from_millis(20),
    }
}

fn chat(base: &str, retries: u32) -> Gateway {
    let backend = HttpChatBackend::new(HttpChatConfig {
        base_url: format!("{base}/v1/"),
        model: "test-model".into(),
        api_key: Some("sk-test".into()),
        timeout: Duration::from_secs(5),
        retry: fast_retry(retries),
    })
    .unwrap();
    Gateway::new(Arc::new(backend), Arc::new(SystemClock::new()))
}

fn request() -> ChatRequest {
    ChatRequest::new("generator", vec![Message::new(Role::User, "hello")])
}

const OK_CHAT: &str = r#"{"choices":[{"message":{"role":"assistant","content":"FINAL ANSWER: 4"}}],"usage":{"prompt_tokens":12,"completion_tokens":5}}"#;

#[test]
fn chat_retries_transient_failures_then_succeeds() {
    let (base, seen, h) = serve(vec![
        (429, "{}".into()),
        (503, "{}".into()),
        (200, OK_CHAT.into()),
    ]);
    let gw = chat(&base, 3);
    let resp = gw.complete(&request()).unwrap();
    h.join().unwrap();
    assert_eq!(resp.content, "FINAL ANSWER: 4");
    assert_eq!((resp.usage.input_tokens, resp.usage.output_tokens), (12, 5));

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer sk-test"));
    assert_eq!(seen[0].body["model"], "test-model");
    assert_eq!(seen[0].body["messages"][0]["role"], "user");
    assert_eq!(seen[0].body["messages"][0]["content"], "hello");
    // One logical call in the ledger, however many attempts it took.
    assert_eq!(gw.ledger().tag("generator").calls, 1);
    assert_eq!(gw.ledger().tag("generator").input_tokens, 12);
}

#[test]
fn chat_gives_up_after_max_retries() {
    let (base, seen, h) = serve(vec![(500, "boom".into()); 3]);
    let gw = chat(&base, 2);
    let err = gw.complete(&request()).unwrap_err();
    h.join().unwrap();
    match err {
        GatewayError::Http(HttpError::Status { status, attempts, ref body }) => {
            assert_eq!((status, attempts), (500, 3));
            assert_eq!(body, "boom");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 3);
    let t = gw.ledger().tag("generator");
    assert_eq!((t.calls, t.errors, t.input_tokens), (1, 1, 0));
    assert!(gw.requests()[0].error.is_some());
}

#[test]
fn client_errors_are_not_retried() {
    let (base, seen, h) = serve(vec![(400, r#"{"error":"bad"}"#.into())]);
    let err = chat(&base, 3).complete(&request()).unwrap_err();
    h.join().unwrap();
    assert!(matches!(err, GatewayError::Http(HttpError::Status { status: 400, attempts: 1, .. })));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn malformed_success_body_is_a_decode_error() {
    let (base, _, h) = serve(vec![(200, "not json".into())]);
    let err = chat(&base, 0).complete(&request()).unwrap_err();
    h.join().unwrap();
    assert!(matches!(err, GatewayError::Http(HttpError::Decode(_))));
}

#[test]
fn connection_refused_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = chat(&format!("http://127.0.0.1:{port}"), 1).complete(&request()).unwrap_err();
    assert!(matches!(err, GatewayError::Http(HttpError::Transport { attempts: 2, .. })), "{err:?}");
}

#[test]
fn embeddings_endpoint() {
    let body = r#"{"data":[{"index":1,"embedding":[0.0,2.0]},{"index":0,"embedding":[3.0,4.0]}]}"#;
    let (base, seen, h) = serve(vec![(502, "{}".into()), (200, body.into())]);
    let e = HttpEmbedder::new(HttpEmbedderConfig {
        base_url: base,
        model: "embed-small".into(),
        api_key: None,
        timeout: Duration::from_secs(5),
        retry: fast_retry(1),
    })
    .unwrap();
    let v = e.embed_many(&["a", "b"]).unwrap();
    h.join().unwrap();
    assert_eq!(v.len(), 2);
    // Results come back in index order, not response order.
    assert_eq!(v[0].values(), &[3.0, 4.0]);
    assert!((cosine(&v[1], &v[1]).unwrap() - 1.0).abs() < 1e-12);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[1].path, "/embeddings");
    assert_eq!(seen[1].body["model"], "embed-small");
    assert_eq!(seen[1].body["input"], serde_json::json!(["a", "b"]));
    assert!(seen[1].auth.is_none());
}
