#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use nativeness::analysis::{untrained_container, Analyzer};
use nativeness::audio::{encode_wav_pcm16, AudioClip};
use nativeness::differ::DiffConfig;
use nativeness::encoder::{EncoderConfig, LoadedEncoder};
use nativeness::manifest::Label;
use nativeness::metric::EmbeddingConfig;
use nativeness::model::ModelContainer;
use nativeness::scorer::ClassifierConfig;
use nativeness::synth::{synthesize, Speaker, SynthConfig};
use nativeness_service::api::{router, AppState};
use nativeness_service::catalog::Catalog;
use nativeness_service::sessions::SessionStore;
use tower::ServiceExt;

pub fn small_container() -> ModelContainer {
    let enc = LoadedEncoder::load(&EncoderConfig {
        feature_dim: 8,
        ..EncoderConfig::default()
    })
    .unwrap();
    let cls = ClassifierConfig {
        recurrent_hidden_dim: 4,
        attention_hidden_dim: 3,
        ..ClassifierConfig::default()
    };
    let emb = EmbeddingConfig {
        recurrent_hidden_dim: 4,
        projection_hidden_dim: 8,
        ..EmbeddingConfig::default()
    };
    untrained_container(&enc, &cls, &emb, 1).unwrap()
}

pub fn app(dir: &Path, container: Option<ModelContainer>) -> Router {
    let analyzer = container.map(|c| Arc::new(Analyzer::from_container(c, DiffConfig::default()).unwrap()));
    let catalog_path = dir.join("sentences.json");
    if !catalog_path.exists() {
        std::fs::write(
            &catalog_path,
            r#"{"sentences":[{"sentence_id":"s1","text":"She sells sea shells.","model_audio":"s1.wav"},{"sentence_id":"s2","text":"Thank you."}]}"#,
        )
        .unwrap();
        std::fs::write(dir.join("s1.wav"), wav(&voice(1))).unwrap();
    }
    let state = AppState {
        analyzer,
        store: Arc::new(SessionStore::open(&dir.join("sessions.redb")).unwrap()),
        catalog: Arc::new(Catalog::load(&catalog_path).unwrap()),
    };
    router(state, 4 * 1024 * 1024, None)
}

pub fn voice(seed: u64) -> AudioClip {
    let speaker = Speaker {
        id: "v".into(),
        label: Label::NonNative,
        f0: 150.0,
    };
    synthesize(&speaker, &SynthConfig::default(), seed).clip
}

pub fn wav(clip: &AudioClip) -> Vec<u8> {
    encode_wav_pcm16(clip).unwrap()
}

pub async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body)
}

pub async fn post_audio(app: &Router, session: &str, sentence: &str, bytes: Vec<u8>) -> (StatusCode, serde_json::Value) {
    let req = Request::post(format!("/api/analyze?session_id={session}&sentence_id={sentence}"))
        .header("content-type", "audio/wav")
        .body(Body::from(bytes))
        .unwrap();
    let (s, b) = call(app, req).await;
    (s, serde_json::from_slice(&b).unwrap())
}

pub async fn get_json(app: &Router, uri: &str) -> (StatusCode, serde_json::Value) {
    let (s, b) = call(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap())
}
