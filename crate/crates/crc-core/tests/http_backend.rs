//! HTTP backend tests against a minimal in-process server.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crc_core::backend::{Backend, BackendConfig, BackendError, BackendKind, WireProtocol};

type Recorded = Arc<Mutex<Vec<String>>>;

/// Serve `responses` one connection at a time, recording request bodies
/// and headers. Each entry is (status, body).
fn spawn_server(responses: Vec<(u16, String)>) -> (String, Recorded, Recorded) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
    let endpoint = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let seen_clone = Arc::clone(&seen);
    let seen_headers = Arc::new(Mutex::new(Vec::new()));
    let headers_clone = Arc::clone(&seen_headers);

    thread::spawn(move || {
        for (status, body) in responses {
            let Ok((mut stream, _)) = listener.accept() else {
                return;
            };
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            let header_end = loop {
                match stream.read(&mut chunk) {
                    Ok(0) => break None,
                    Ok(n) => {
                        buf.extend_from_slice(&chunk[..n]);
                        if let Some(pos) = find_subslice(&buf, b"\r\n\r\n") {
                            break Some(pos + 4);
                        }
                    }
                    Err(_) => break None,
                }
            };
            let Some(header_end) = header_end else { continue };
            let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
            headers_clone.lock().unwrap().push(headers.clone());
            let content_length = headers
                .lines()
                .find_map(|l| {
                    let (name, value) = l.split_once(':')?;
                    name.eq_ignore_ascii_case("content-length")
                        .then(|| value.trim().parse::<usize>().ok())?
                })
                .unwrap_or(0);
            while buf.len() < header_end + content_length {
                match stream.read(&mut chunk) {
                    Ok(0) => break,
                    Ok(n) => buf.extend_from_slice(&chunk[..n]),
                    Err(_) => break,
                }
            }
            let body_bytes = &buf[header_end..(header_end + content_length).min(buf.len())];
            seen_clone
                .lock()
                .unwrap()
                .push(String::from_utf8_lossy(body_bytes).to_string());

            let reason = if status == 200 { "OK" } else { "ERR" };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len(),
            );
            let _ = stream.write_all(response.as_bytes());
        }
    });

    (endpoint, seen, seen_headers)
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn chat_body(content: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}}]
    })
    .to_string()
}

fn fast_config(endpoint: &str) -> BackendConfig {
    let mut config = BackendConfig::http(endpoint, "test-model");
    config.max_retries = 2;
    config.initial_backoff = Duration::from_millis(1);
    config.timeout = Duration::from_secs(5);
    config
}

#[test]
fn chat_completion_round_trip() {
    let (endpoint, seen, _) = spawn_server(vec![(200, chat_body("Have you seen it?"))]);
    let backend = Backend::new(fast_config(&endpoint)).unwrap();
    let record = backend.generate("recommend a movie").unwrap();
    assert_eq!(record.output, "Have you seen it?");
    assert_eq!(record.attempt_count, 1);

    let bodies = seen.lock().unwrap();
    let request: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(request["model"], "test-model");
    assert_eq!(request["temperature"], 0);
    assert_eq!(request["max_tokens"], 80);
    assert_eq!(request["messages"][0]["content"], "recommend a movie");
}

#[test]
fn transient_failure_is_retried() {
    let (endpoint, _, _) = spawn_server(vec![
        (500, "oops".to_string()),
        (200, chat_body("second try")),
    ]);
    let backend = Backend::new(fast_config(&endpoint)).unwrap();
    let record = backend.generate("p").unwrap();
    assert_eq!(record.output, "second try");
    assert_eq!(record.attempt_count, 2);
}

#[test]
fn unreachable_endpoint_exhausts_retries() {
    // Bind then drop to get a port with nothing listening.
    let port = {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap().port()
    };
    let config = fast_config(&format!("http://127.0.0.1:{port}/v1/chat/completions"));
    let backend = Backend::new(config).unwrap();
    match backend.generate("p") {
        Err(BackendError::Network { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected network error, got {other:?}"),
    }
}

#[test]
fn client_errors_fail_without_retry() {
    let (endpoint, seen, _) = spawn_server(vec![(400, "bad request".to_string())]);
    let backend = Backend::new(fast_config(&endpoint)).unwrap();
    match backend.generate("p") {
        Err(BackendError::HttpStatus { status: 400, .. }) => {}
        other => panic!("expected status error, got {other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn completions_wire_variant() {
    let body = serde_json::json!({"choices": [{"text": "raw completion"}]}).to_string();
    let (endpoint, seen, _) = spawn_server(vec![(200, body)]);
    let mut config = fast_config(&endpoint);
    if let BackendKind::Http(params) = &mut config.kind {
        params.wire = WireProtocol::Completions;
    }
    let backend = Backend::new(config).unwrap();
    assert_eq!(backend.generate("p").unwrap().output, "raw completion");

    let bodies = seen.lock().unwrap();
    let request: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(request["prompt"], "p");
}

#[test]
fn credential_env_var_feeds_the_auth_header() {
    let (endpoint, _, headers) = spawn_server(vec![(200, chat_body("ok"))]);
    let mut config = fast_config(&endpoint);
    if let BackendKind::Http(params) = &mut config.kind {
        params.api_key_env = Some("CRC_TEST_KEY_PRESENT".to_string());
    }
    std::env::set_var("CRC_TEST_KEY_PRESENT", "secret-token");
    let backend = Backend::new(config).unwrap();
    backend.generate("p").unwrap();
    let recorded = headers.lock().unwrap();
    assert!(
        recorded[0].to_lowercase().contains("authorization: bearer secret-token"),
        "auth header missing: {}",
        recorded[0]
    );

    // Missing variable: fail fast, no request issued.
    let (endpoint, seen, _) = spawn_server(vec![(200, chat_body("never"))]);
    let mut config = fast_config(&endpoint);
    if let BackendKind::Http(params) = &mut config.kind {
        params.api_key_env = Some("CRC_TEST_KEY_ABSENT".to_string());
    }
    let backend = Backend::new(config).unwrap();
    match backend.generate("p") {
        Err(BackendError::MissingCredential(name)) => {
            assert_eq!(name, "CRC_TEST_KEY_ABSENT")
        }
        other => panic!("expected missing credential, got {other:?}"),
    }
    assert!(seen.lock().unwrap().is_empty());
}

#[test]
fn malformed_service_response_is_fatal() {
    let (endpoint, _, _) = spawn_server(vec![(200, "{\"unexpected\": true}".to_string())]);
    let backend = Backend::new(fast_config(&endpoint)).unwrap();
    assert!(matches!(
        backend.generate("p"),
        Err(BackendError::MalformedResponse(_))
    ));
}
