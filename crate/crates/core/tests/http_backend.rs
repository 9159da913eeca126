use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use ocr_reflect::backend::{
    encode_image_path, BackendError, CallKind, CallTag, GenerationParams, HttpBackend, HttpBackendConfig, ImageSource,
    Message, ModelBackend, ModelRequest,
};
use serde_json::{json, Value};

#[derive(Clone)]
struct Stub {
    hits: Arc<AtomicUsize>,
    fail_first: usize,
    fail_status: StatusCode,
    bodies: Arc<std::sync::Mutex<Vec<Value>>>,
    headers: Arc<std::sync::Mutex<Vec<HeaderMap>>>,
}

async fn completions(State(stub): State<Stub>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, String) {
    let n = stub.hits.fetch_add(1, Ordering::SeqCst);
    stub.bodies.lock().unwrap().push(body);
    stub.headers.lock().unwrap().push(headers);
    if n < stub.fail_first {
        return (stub.fail_status, "try again".into());
    }
    let ok = json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": "ANSWER: 42"}}]});
    (StatusCode::OK, ok.to_string())
}

async fn serve(fail_first: usize, fail_status: StatusCode) -> (String, Stub) {
    let stub = Stub {
        hits: Arc::new(AtomicUsize::new(0)),
        fail_first,
        fail_status,
        bodies: Arc::default(),
        headers: Arc::default(),
    };
    let app = Router::new().route("/v1/chat/completions", post(completions)).with_state(stub.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1"), stub)
}

fn backend(base_url: String, max_retries: u32) -> HttpBackend {
    HttpBackend::new(HttpBackendConfig {
        base_url,
        model: "stub-model".into(),
        api_key: Some("secret-token".into()),
        timeout: Duration::from_secs(5),
        max_retries,
        backoff_base: Duration::from_millis(5),
        backoff_cap: Duration::from_millis(20),
        max_in_flight: 2,
    })
    .unwrap()
}

fn request() -> ModelRequest {
    let pixel = encode_image_path(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pixel.png")).unwrap();
    ModelRequest {
        image: Arc::new(ImageSource::Inline(pixel)),
        messages: vec![Message::system("be careful"), Message::user("what is written?")],
        params: GenerationParams::default(),
        tag: CallTag { sample_id: "s1".into(), kind: CallKind::Initial, iteration: 0 },
    }
}

#[tokio::test]
async fn succeeds_after_two_server_errors() {
    let (url, stub) = serve(2, StatusCode::INTERNAL_SERVER_ERROR).await;
    let out = backend(url, 3).generate(&request()).await.unwrap();
    assert_eq!(out.text, "ANSWER: 42");
    assert_eq!(out.retries, 2);
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn wire_format_is_chat_completions_with_image_part() {
    let (url, stub) = serve(0, StatusCode::OK).await;
    backend(url, 0).generate(&request()).await.unwrap();
    let body = stub.bodies.lock().unwrap()[0].clone();
    assert_eq!(body["model"], "stub-model");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["seed"], 0);
    assert_eq!(body["messages"][0], json!({"role": "system", "content": "be careful"}));
    let parts = body["messages"][1]["content"].as_array().unwrap();
    assert!(parts[0]["image_url"]["url"].as_str().unwrap().starts_with("data:image/png;base64,"));
    assert_eq!(parts[1], json!({"type": "text", "text": "what is written?"}));
    let auth = stub.headers.lock().unwrap()[0]["authorization"].to_str().unwrap().to_string();
    assert_eq!(auth, "Bearer secret-token");
}

#[tokio::test]
async fn exhausted_retries_surface_http_error() {
    let (url, stub) = serve(usize::MAX, StatusCode::TOO_MANY_REQUESTS).await;
    let err = backend(url, 2).generate(&request()).await.unwrap_err();
    assert!(matches!(err, BackendError::Http { status: 429, attempts: 3, .. }), "{err}");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let (url, stub) = serve(usize::MAX, StatusCode::BAD_REQUEST).await;
    let err = backend(url, 3).generate(&request()).await.unwrap_err();
    assert!(matches!(err, BackendError::Http { status: 400, attempts: 1, .. }), "{err}");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn empty_request_never_reaches_network() {
    let (url, stub) = serve(0, StatusCode::OK).await;
    let mut req = request();
    req.messages.clear();
    let err = backend(url, 3).generate(&req).await.unwrap_err();
    assert!(matches!(err, BackendError::InvalidRequest(_)));
    assert_eq!(stub.hits.load(Ordering::SeqCst), 0);
}

#[tokio::test]
async fn unreachable_server_is_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    drop(listener);
    let err = backend(url, 1).generate(&request()).await.unwrap_err();
    assert!(matches!(err, BackendError::Transport { attempts: 2, .. }), "{err}");
}
