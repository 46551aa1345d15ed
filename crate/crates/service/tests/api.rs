mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use common::*;
use nativeness::analysis::AnalysisResult;
use nativeness::audio::AudioClip;
use nativeness_service::sessions::SessionRecord;

fn assert_error(status: StatusCode, body: &serde_json::Value, want_status: StatusCode, code: &str) {
    assert_eq!(status, want_status, "{body}");
    assert_eq!(body["code"], code, "{body}");
    assert!(body["message"].as_str().is_some_and(|m| !m.is_empty()));
    assert_eq!(body.as_object().unwrap().len(), 2, "error body is exactly {{code, message}}");
}

#[tokio::test]
async fn analyze_then_history_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), Some(small_container()));

    let (s, fresh) = get_json(&app, "/api/session/alice").await;
    assert_eq!(s, StatusCode::OK);
    let fresh: SessionRecord = serde_json::from_value(fresh).unwrap();
    assert!(fresh.results.is_empty() && fresh.sentence_id.is_none());

    let (s, body) = post_audio(&app, "alice", "s1", wav(&voice(3))).await;
    assert_eq!(s, StatusCode::OK, "{body}");
    let result: AnalysisResult = serde_json::from_value(body).unwrap();
    result.validate().unwrap();
    assert_eq!(result.sentence_id, "s1");
    assert!(result.timestamp.is_some());
    assert_eq!(result.waveform_preview.len(), 1000);

    let (_, h) = get_json(&app, "/api/session/alice").await;
    let h: SessionRecord = serde_json::from_value(h).unwrap();
    assert_eq!(h.results, vec![result]);
    assert_eq!(h.sentence_id.as_deref(), Some("s1"));
}

#[tokio::test]
async fn history_keeps_submission_order() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), Some(small_container()));
    let mut ids = Vec::new();
    for seed in [4, 5, 6] {
        let (s, body) = post_audio(&app, "bob", "s2", wav(&voice(seed))).await;
        assert_eq!(s, StatusCode::OK);
        ids.push(body["result_id"].as_str().unwrap().to_string());
    }
    let (_, h) = get_json(&app, "/api/session/bob").await;
    let h: SessionRecord = serde_json::from_value(h).unwrap();
    let got: Vec<String> = h.results.iter().map(|r| r.result_id.clone()).collect();
    assert_eq!(got, ids);
    let ts: Vec<u64> = h.results.iter().map(|r| r.timestamp.unwrap()).collect();
    assert!(ts.windows(2).all(|w| w[0] < w[1]));
}

#[tokio::test]
async fn same_audio_twice_gives_same_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), Some(small_container()));
    let bytes = wav(&voice(7));
    let (_, a) = post_audio(&app, "c", "s1", bytes.clone()).await;
    let (_, b) = post_audio(&app, "c", "s1", bytes).await;
    let a: AnalysisResult = serde_json::from_value(a).unwrap();
    let b: AnalysisResult = serde_json::from_value(b).unwrap();
    assert_eq!(a.analysis(), b.analysis());
    assert_ne!(a.result_id, b.result_id);
    assert!(a.timestamp.unwrap() < b.timestamp.unwrap());
}

#[tokio::test]
async fn silent_input_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), Some(small_container()));
    let zeros = AudioClip::new(vec![0.0; 64_000], 16_000);
    let (s, body) = post_audio(&app, "d", "s1", wav(&zeros)).await;
    assert_error(s, &body, StatusCode::BAD_REQUEST, "silent_input");
    let (_, h) = get_json(&app, "/api/session/d").await;
    assert_eq!(h["results"].as_array().unwrap().len(), 0);
}

#[tokio::test]
async fn request_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), Some(small_container()));

    let (s, body) = post_audio(&app, "e", "nope", wav(&voice(1))).await;
    assert_error(s, &body, StatusCode::NOT_FOUND, "unknown_sentence");

    let (s, body) = post_audio(&app, "e", "s1", b"RIFF garbage".to_vec()).await;
    assert_error(s, &body, StatusCode::BAD_REQUEST, "undecodable_audio");

    let (s, body) = post_audio(&app, "e", "s1", Vec::new()).await;
    assert_error(s, &body, StatusCode::BAD_REQUEST, "undecodable_audio");

    let req = Request::post("/api/analyze?sentence_id=s1").body(Body::from(wav(&voice(1)))).unwrap();
    let (s, b) = call(&app, req).await;
    assert_error(s, &serde_json::from_slice(&b).unwrap(), StatusCode::BAD_REQUEST, "bad_request");

    let (s, body) = post_audio(&app, "bad%2Fid", "s1", wav(&voice(1))).await;
    assert_error(s, &body, StatusCode::BAD_REQUEST, "bad_request");

    let (s, body) = post_audio(&app, "e", "s1", vec![0u8; 5 * 1024 * 1024]).await;
    assert_error(s, &body, StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large");

    post_audio(&app, "f", "s1", wav(&voice(1))).await;
    let (s, body) = post_audio(&app, "f", "s2", wav(&voice(1))).await;
    assert_error(s, &body, StatusCode::CONFLICT, "session_sentence_mismatch");
}

#[tokio::test]
async fn model_not_loaded_is_503() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), None);
    let (s, body) = post_audio(&app, "g", "s1", wav(&voice(1))).await;
    assert_error(s, &body, StatusCode::SERVICE_UNAVAILABLE, "model_not_loaded");
    let (s, health) = get_json(&app, "/api/health").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(health["model_loaded"], false);
    // catalog endpoints work without a model
    let (s, _) = get_json(&app, "/api/sentences").await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn sentences_and_model_audio() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), Some(small_container()));
    let (s, body) = get_json(&app, "/api/sentences").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["schema_version"], 1);
    let list = body["sentences"].as_array().unwrap();
    assert_eq!(list.len(), 2);
    assert_eq!(list[0]["model_audio_url"], "/api/model_audio/s1");
    assert!(list[1]["model_audio_url"].is_null());
    let text = body.to_string();
    assert!(!text.contains(".wav") && !text.contains(dir.path().to_str().unwrap()));

    let resp = call(&app, Request::get("/api/model_audio/s1").body(Body::empty()).unwrap()).await;
    assert_eq!(resp.0, StatusCode::OK);
    assert_eq!(&resp.1[..4], b"RIFF");

    let (s, body) = get_json(&app, "/api/model_audio/zzz").await;
    assert_error(s, &body, StatusCode::NOT_FOUND, "unknown_sentence");
    let (s, body) = get_json(&app, "/api/model_audio/s2").await;
    assert_error(s, &body, StatusCode::NOT_FOUND, "no_model_audio");
}

#[tokio::test]
async fn results_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let first = {
        let app = app(dir.path(), Some(small_container()));
        let (_, body) = post_audio(&app, "h", "s1", wav(&voice(2))).await;
        body
    };
    let app = app(dir.path(), Some(small_container()));
    let (_, h) = get_json(&app, "/api/session/h").await;
    assert_eq!(h["results"][0], first);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_appends_to_one_session() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), Some(small_container()));
    let mut tasks = Vec::new();
    for seed in 0..6 {
        let app = app.clone();
        tasks.push(tokio::spawn(async move { post_audio(&app, "k", "s1", wav(&voice(seed))).await }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap().0, StatusCode::OK);
    }
    let (_, h) = get_json(&app, "/api/session/k").await;
    let h: SessionRecord = serde_json::from_value(h).unwrap();
    assert_eq!(h.results.len(), 6);
    assert!(h.results.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
}
