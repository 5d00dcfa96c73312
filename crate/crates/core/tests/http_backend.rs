use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use apeer::llm::{ChatBackend, ChatMessage, HttpBackend, LlmClient, LlmRequest, RetryPolicy, API_KEY_ENV};
use apeer::Error;

struct Seen {
    auth: Option<String>,
    path: String,
    body: serde_json::Value,
}

/// Answers each connection with the next scripted (status, body) pair.
fn serve(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in script {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or_default().to_string();
            let (mut len, mut auth) = (0usize, None);
            loop {
                line.clear();
                reader.read_line(&mut line).unwrap();
                let header = line.trim_end();
                if header.is_empty() {
                    break;
                }
                let (name, value) = header.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => len = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                auth,
                path,
                body: serde_json::from_slice(&buf).unwrap(),
            });
            let mut stream = stream;
            let reply = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn completion(text: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 12, "completion_tokens": 3}
    })
    .to_string()
}

fn request() -> LlmRequest {
    LlmRequest::new("gpt-test", vec![ChatMessage::system("rank"), ChatMessage::user("[1] a\n[2] b")])
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 3,
        initial_backoff_ms: 5,
        max_backoff_ms: 20,
    }
}

#[test]
fn posts_openai_style_request() {
    let (url, seen) = serve(vec![(200, completion("[2] > [1]"))]);
    let backend = HttpBackend::new(&url, "sk-test", Duration::from_secs(5)).unwrap();
    let resp = backend.chat(&request()).unwrap();
    assert_eq!(resp.text, "[2] > [1]");
    assert_eq!((resp.usage.prompt_tokens, resp.usage.completion_tokens), (12, 3));
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer sk-test"));
    let body = &seen[0].body;
    assert_eq!(body["model"], "gpt-test");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "[1] a\n[2] b");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 1024);
}

#[test]
fn rate_limit_is_retried() {
    let (url, seen) = serve(vec![
        (429, r#"{"error":"slow down"}"#.into()),
        (503, "unavailable".into()),
        (200, completion("[1] > [2]")),
    ]);
    let client = LlmClient::new(Arc::new(HttpBackend::new(&url, "k", Duration::from_secs(5)).unwrap())).with_retry(fast_retry());
    assert_eq!(client.complete(&request()).unwrap().text, "[1] > [2]");
    assert_eq!(client.stats().retries(), 2);
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn retries_exhausted_become_transport_error() {
    let (url, _) = serve(vec![(500, "a".into()), (500, "b".into()), (500, "c".into())]);
    let client = LlmClient::new(Arc::new(HttpBackend::new(&url, "k", Duration::from_secs(5)).unwrap())).with_retry(fast_retry());
    assert!(matches!(client.complete(&request()), Err(Error::Transport(_))));
}

#[test]
fn unauthorized_fails_without_retry() {
    let (url, seen) = serve(vec![(401, r#"{"error":"bad key"}"#.into()), (200, completion("never"))]);
    let client = LlmClient::new(Arc::new(HttpBackend::new(&url, "k", Duration::from_secs(5)).unwrap())).with_retry(fast_retry());
    match client.complete(&request()) {
        Err(Error::Api { status, body }) => {
            assert_eq!(status, 401);
            assert!(body.contains("bad key"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn garbage_body_is_an_api_error() {
    let (url, _) = serve(vec![(200, "<html>oops</html>".into())]);
    let backend = HttpBackend::new(&url, "k", Duration::from_secs(5)).unwrap();
    assert!(matches!(backend.chat(&request()), Err(Error::Api { status: 200, .. })));
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = HttpBackend::new(format!("http://127.0.0.1:{port}"), "k", Duration::from_secs(2)).unwrap();
    assert!(matches!(backend.chat(&request()), Err(Error::Transport(_))));
}

#[test]
fn key_comes_from_the_environment() {
    std::env::remove_var(API_KEY_ENV);
    assert!(matches!(
        HttpBackend::from_env("http://localhost:1", Duration::from_secs(1)),
        Err(Error::MissingEnv(API_KEY_ENV))
    ));
    std::env::set_var(API_KEY_ENV, "");
    assert!(HttpBackend::from_env("http://localhost:1", Duration::from_secs(1)).is_err());
    std::env::set_var(API_KEY_ENV, "sk-env");
    assert!(HttpBackend::from_env("http://localhost:1", Duration::from_secs(1)).is_ok());
    std::env::remove_var(API_KEY_ENV);
}
