use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use proactive_switch::corpus::{DomainLabel, Mode, Turn};
use proactive_switch::pipeline::{SessionState, StepOutput};
use proactive_switch::tie::{TieOutput, TransitionInfo};
use proactive_switch::tsg::ResponseMode;
use proactive_switch_service::{router, AppState, ChatEngine, ChatReply, Health, SessionView};
use serde_json::{json, Value};
use tower::ServiceExt;

/// Transitions to `train` when the user mentions a train; sleeps on "slow".
struct Scripted;

impl ChatEngine for Scripted {
    fn step(&self, state: &mut SessionState, text: &str) -> proactive_switch::Result<StepOutput> {
        if text.contains("slow") {
            std::thread::sleep(Duration::from_millis(300));
        }
        state.history.push(Turn::user(text, state.mode));
        let fire = state.mode == Mode::Chitchat && text.contains("train");
        let info = if fire { TransitionInfo::domain(DomainLabel::Train) } else { TransitionInfo::unk() };
        let mut probs = vec![0.0; 5];
        probs[info.domain.index()] = 1.0;
        let tie = (state.mode == Mode::Chitchat).then(|| TieOutput {
            info: info.clone(),
            domain_probs: probs,
            slot_probs: vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            tags: vec![],
            path_score: 0.0,
            consistent: true,
            flags: vec![],
        });
        let sentence = fire.then(|| "Do you need a train ticket?".to_string());
        state.history.push(Turn::system("I see.", Mode::Chitchat, None));
        if fire {
            state.transitioned = true;
            state.mode = Mode::Task;
        }
        Ok(StepOutput {
            response: "I see.".into(),
            transition_sentence: sentence,
            prompt: fire.then(|| "[TRANSITION] ( domain = train )".into()),
            info,
            tie,
            mode: if fire { ResponseMode::Transition } else { ResponseMode::Chitchat },
            turn_index: state.history.len() - 1,
        })
    }

    fn hashes(&self) -> BTreeMap<String, String> {
        BTreeMap::from([("tie".to_string(), "abc".to_string())])
    }
}

fn app(loaded: bool) -> (AppState, axum::Router) {
    let engine: Option<Arc<dyn ChatEngine>> = loaded.then(|| Arc::new(Scripted) as Arc<dyn ChatEngine>);
    let state = AppState::new(engine, Duration::from_secs(60));
    (state.clone(), router(state, &[]))
}

async fn call(r: &axum::Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = r.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn msg(id: &str, text: &str) -> String {
    json!({ "session_id": id, "text": text }).to_string()
}

#[tokio::test]
async fn first_message_is_unk() {
    let (_, r) = app(true);
    let (s, v) = call(&r, "POST", "/api/chat", Some(&msg("s1", "hi"))).await;
    assert_eq!(s, StatusCode::OK);
    let reply: ChatReply = serde_json::from_value(v).unwrap();
    assert_eq!(reply.info.domain, DomainLabel::Unk);
    assert!(reply.transition_sentence.is_none());
    let diag = reply.diagnostics.unwrap();
    assert_eq!(diag.domain.len(), 5);
    assert!((diag.domain.values().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[tokio::test]
async fn transition_reply_and_session_view() {
    let (_, r) = app(true);
    call(&r, "POST", "/api/chat", Some(&msg("s2", "hello"))).await;
    let (_, v) = call(&r, "POST", "/api/chat", Some(&msg("s2", "I need a train to school"))).await;
    let reply: ChatReply = serde_json::from_value(v).unwrap();
    assert!(reply.transition_sentence.unwrap().contains("train"));
    assert_eq!(reply.mode, ResponseMode::Transition);
    let (s, v) = call(&r, "GET", "/api/session/s2", None).await;
    assert_eq!(s, StatusCode::OK);
    let view: SessionView = serde_json::from_value(v).unwrap();
    assert_eq!(view.history.len(), 4);
    assert!(view.transitioned);
}

#[tokio::test]
async fn malformed_bodies_are_400() {
    let (_, r) = app(true);
    for body in ["{not json", r#"{"text":"hi"}"#, r#"{"session_id":"","text":"hi"}"#, r#"{"session_id":"x","text":"  "}"#] {
        let (s, v) = call(&r, "POST", "/api/chat", Some(body)).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
        assert!(v["error"].is_string());
    }
}

#[tokio::test]
async fn delete_then_get_is_404() {
    let (_, r) = app(true);
    call(&r, "POST", "/api/chat", Some(&msg("s3", "hi"))).await;
    assert_eq!(call(&r, "DELETE", "/api/session/s3", None).await.0, StatusCode::NO_CONTENT);
    assert_eq!(call(&r, "GET", "/api/session/s3", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&r, "DELETE", "/api/session/s3", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn not_loaded_is_503() {
    let (state, r) = app(false);
    assert_eq!(call(&r, "GET", "/api/health", None).await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(call(&r, "POST", "/api/chat", Some(&msg("s", "hi"))).await.0, StatusCode::SERVICE_UNAVAILABLE);
    state.set_engine(Arc::new(Scripted));
    let (s, v) = call(&r, "GET", "/api/health", None).await;
    assert_eq!(s, StatusCode::OK);
    let h: Health = serde_json::from_value(v).unwrap();
    assert_eq!(h.hashes["tie"], "abc");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_same_session_is_409() {
    let (_, r) = app(true);
    let slow = {
        let r = r.clone();
        tokio::spawn(async move { call(&r, "POST", "/api/chat", Some(&msg("s4", "slow one"))).await })
    };
    tokio::time::sleep(Duration::from_millis(100)).await;
    let (s, _) = call(&r, "POST", "/api/chat", Some(&msg("s4", "second"))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (other, _) = call(&r, "POST", "/api/chat", Some(&msg("s5", "elsewhere"))).await;
    assert_eq!(other, StatusCode::OK);
    assert_eq!(slow.await.unwrap().0, StatusCode::OK);
    let (_, v) = call(&r, "GET", "/api/session/s4", None).await;
    assert_eq!(v["history"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn idle_sessions_expire() {
    let state = AppState::new(Some(Arc::new(Scripted)), Duration::from_millis(50));
    let r = router(state.clone(), &["http://localhost:5173".to_string()]);
    call(&r, "POST", "/api/chat", Some(&msg("s6", "hi"))).await;
    assert_eq!(state.session_count(), 1);
    tokio::time::sleep(Duration::from_millis(80)).await;
    assert_eq!(call(&r, "GET", "/api/session/s6", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(state.session_count(), 0);
}
