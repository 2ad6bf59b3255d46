mod common;

use std::sync::{Arc, Mutex};
use std::time::Duration;

use coa_core::backends::server::serve;
use coa_core::backends::{
    Backend, BackendError, ChatApi, ChatMeta, ChatRequest, EmbedInput, EmbedRequest, Endpoints, FixtureFile,
    HttpBackend, ImageData, MockBackend, RetryPolicy, TagRequest,
};
use coa_core::chain::{ChainConfig, ChainMode, ChainRunner};
use coa_core::ActionKind;
use common::{dog_scene, fixture_file, write_records, Scene};

fn fast_retry() -> RetryPolicy {
    RetryPolicy { attempts: 2, initial_backoff: Duration::from_millis(10), timeout: Duration::from_secs(5) }
}

fn mock_with_tables(scenes: &[Scene]) -> Arc<MockBackend> {
    let mut file = fixture_file(scenes, 12);
    let d = scenes[0].digest();
    file.embed_text.insert("This image contains dog".into(), vec![1.0, 0.0, 0.0]);
    file.embed_image.insert(d.clone(), vec![0.5, 0.5, 0.0]);
    file.tag.insert(d, [("dog".to_string(), 0.9), ("unicorn".to_string(), 0.1)].into_iter().collect());
    Arc::new(MockBackend::new(file).unwrap())
}

fn chat_req(scene: &Scene, action: ActionKind) -> ChatRequest {
    ChatRequest {
        model: "m".into(),
        prompt: "p".into(),
        image: Some(ImageData::new(scene.bytes.clone(), "image/png")),
        max_tokens: 16,
        temperature: 0.0,
        seed: Some(0),
        meta: Some(ChatMeta { action, subject: None }),
    }
}

#[test]
fn wire_round_trip_through_server() {
    let scene = dog_scene(0);
    let mock = mock_with_tables(std::slice::from_ref(&scene));
    let server = serve(mock.clone(), "127.0.0.1:0", 2).unwrap();
    let http = HttpBackend::new(Endpoints::sidecar(&server.base_url()), fast_retry()).unwrap();

    let reply = http.chat(&chat_req(&scene, ActionKind::Caption)).unwrap();
    assert_eq!(reply.text, scene.caption);
    assert_eq!(reply.latency_ms, 12);
    assert!(!reply.cache_hit);

    let text =
        EmbedRequest { model: "clip".into(), input: EmbedInput::Text { text: "This image contains dog".into() } };
    let a = http.embed(&text).unwrap();
    assert_eq!(a.vector, [1.0, 0.0, 0.0]);
    assert_eq!(a.dim, 3);
    assert_eq!(http.embed(&text).unwrap(), a);
    let img = ImageData::new(scene.bytes.clone(), "image/png");
    let v =
        http.embed(&EmbedRequest { model: "clip".into(), input: EmbedInput::Image { image: img.clone() } }).unwrap();
    assert_eq!(v.vector, [0.5, 0.5, 0.0]);

    let tag = TagRequest { model: "ram".into(), image: img.clone(), labels: vec!["dog".into(), "unicorn".into()] };
    assert_eq!(http.tag(&tag).unwrap().confidences, [0.9, 0.1]);

    let before = mock.calls();
    let empty = TagRequest { labels: vec![], ..tag };
    assert!(matches!(http.tag(&empty), Err(BackendError::Precondition(_))));
    assert_eq!(mock.calls(), before);

    match http.chat(&chat_req(&scene, ActionKind::Relationship)) {
        Ok(r) => assert_eq!(r.text, scene.relationship),
        Err(e) => panic!("{e}"),
    }
    let unknown = Scene { bytes: b"other".to_vec(), ..dog_scene(1) };
    match http.chat(&chat_req(&unknown, ActionKind::Caption)) {
        Err(BackendError::Http { status: 404, body }) => assert!(body.contains("no fixture")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn ready_endpoint_and_bad_bodies() {
    let server = serve(mock_with_tables(&[dog_scene(0)]), "127.0.0.1:0", 1).unwrap();
    let client = reqwest::blocking::Client::new();
    let ready = client.get(format!("{}/ready", server.base_url())).send().unwrap();
    assert_eq!(ready.status().as_u16(), 200);
    let bad = client.post(format!("{}/chat", server.base_url())).body("{").send().unwrap();
    assert_eq!(bad.status().as_u16(), 400);
    let missing = client.post(format!("{}/nope", server.base_url())).body("{}").send().unwrap();
    assert_eq!(missing.status().as_u16(), 404);
}

#[test]
fn chain_over_http_matches_direct_mock() {
    let scenes: Vec<Scene> = (0..3).map(dog_scene).collect();
    let dir = tempfile::tempdir().unwrap();
    let records = write_records(dir.path(), &scenes);
    let mock = Arc::new(MockBackend::new(fixture_file(&scenes, 3)).unwrap());
    let server = serve(mock.clone(), "127.0.0.1:0", 4).unwrap();
    let http = HttpBackend::new(Endpoints::sidecar(&server.base_url()), fast_retry()).unwrap();

    let cfg = ChainConfig { mode: ChainMode::full(), parallelism: 3, ..ChainConfig::default() };
    let over_http = ChainRunner::new(cfg.clone(), http).unwrap().run_batch(&records);
    let direct =
        ChainRunner::new(cfg, MockBackend::new(fixture_file(&scenes, 3)).unwrap()).unwrap().run_batch(&records);
    assert!(over_http.is_success());
    assert_eq!(over_http.states, direct.states);
}

#[test]
fn unreachable_endpoint_fails_images_not_the_run() {
    // bind and drop to get a port nobody listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let http = HttpBackend::new(Endpoints::sidecar(&format!("http://127.0.0.1:{port}")), fast_retry()).unwrap();
    let scenes: Vec<Scene> = (0..2).map(dog_scene).collect();
    let dir = tempfile::tempdir().unwrap();
    let records = write_records(dir.path(), &scenes);
    let out = ChainRunner::new(ChainConfig::default(), http).unwrap().run_batch(&records);
    assert!(out.states.is_empty());
    assert_eq!(out.failures.len(), 2);
    assert!(out.failures.iter().all(|f| f.error.contains("unavailable")), "{:?}", out.failures);
}

#[test]
fn server_errors_are_retried_then_surface() {
    let scene = dog_scene(0);
    let mut file = FixtureFile::default();
    file.chat.push(coa_core::backends::ChatFixture::fail(&scene.digest(), ActionKind::Caption, "warming up"));
    let mock = Arc::new(MockBackend::new(file).unwrap());
    let server = serve(mock.clone(), "127.0.0.1:0", 1).unwrap();
    let http = HttpBackend::new(Endpoints::sidecar(&server.base_url()), fast_retry()).unwrap();
    match http.chat(&chat_req(&scene, ActionKind::Caption)) {
        Err(BackendError::Http { status: 503, .. }) => {}
        other => panic!("{other:?}"),
    }
    assert_eq!(mock.chat_calls(), 2);
}

type Seen = Arc<Mutex<Vec<(String, Option<String>)>>>;

/// Answers every request with `body` and records what it received.
fn canned_server(body: &'static str) -> (String, Seen, std::thread::JoinHandle<()>) {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = std::thread::spawn(move || {
        if let Ok(mut req) = server.recv() {
            let mut text = String::new();
            req.as_reader().read_to_string(&mut text).unwrap();
            let auth = req.headers().iter().find(|h| h.field.equiv("Authorization")).map(|h| h.value.to_string());
            log.lock().unwrap().push((text, auth));
            req.respond(tiny_http::Response::from_string(body)).unwrap();
        }
    });
    (url, seen, handle)
}

#[test]
fn openai_adapter_and_bearer_token() {
    let (url, seen, handle) = canned_server(r#"{"choices":[{"message":{"role":"assistant","content":"a dog"}}]}"#);
    let endpoints = Endpoints {
        chat: Some(format!("{url}/v1/chat/completions")),
        chat_api: Some(ChatApi::Openai),
        api_token: Some("sekrit".into()),
        ..Endpoints::default()
    };
    let http = HttpBackend::new(endpoints, fast_retry()).unwrap();
    let scene = dog_scene(0);
    let reply = http.chat(&chat_req(&scene, ActionKind::Caption)).unwrap();
    assert_eq!(reply.text, "a dog");
    assert!(reply.latency_ms >= 1);
    handle.join().unwrap();

    let (body, auth) = seen.lock().unwrap()[0].clone();
    assert_eq!(auth.as_deref(), Some("Bearer sekrit"));
    let v: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["model"], "m");
    assert_eq!(v["messages"][0]["content"][0]["text"], "p");
    let uri = v["messages"][0]["content"][1]["image_url"]["url"].as_str().unwrap();
    assert!(uri.starts_with("data:image/png;base64,"));
}

#[test]
fn malformed_responses_are_protocol_errors() {
    for body in [r#"{"vector":[1.0,2.0],"dim":3}"#, "not json"] {
        let (url, _, handle) = canned_server(body);
        let http = HttpBackend::new(Endpoints { embed: Some(url), ..Endpoints::default() }, fast_retry()).unwrap();
        let req = EmbedRequest { model: "m".into(), input: EmbedInput::Text { text: "x".into() } };
        match http.embed(&req) {
            Err(BackendError::Protocol { raw, .. }) => assert_eq!(raw, body),
            other => panic!("{other:?}"),
        }
        handle.join().unwrap();
    }
    let (url, _, handle) = canned_server(r#"{"confidences":[0.5]}"#);
    let http = HttpBackend::new(Endpoints { tag: Some(url), ..Endpoints::default() }, fast_retry()).unwrap();
    let img = ImageData::new(b"x".to_vec(), "image/png");
    let req = TagRequest { model: "m".into(), image: img, labels: vec!["a".into(), "b".into()] };
    assert!(matches!(http.tag(&req), Err(BackendError::Protocol { .. })));
    handle.join().unwrap();
}
