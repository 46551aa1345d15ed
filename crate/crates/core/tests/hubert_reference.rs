//! Compares the safetensors encoder against hidden states produced by the
//! `transformers` implementation for two tiny random checkpoints (see
//! `fixtures/hubert/generate.py`).

use std::path::PathBuf;

use nativeness::audio::{AudioClip, CANONICAL_LEN, CANONICAL_RATE};
use nativeness::encoder::{Backend, EncoderConfig, Hubert, LoadedEncoder};
use serde::Deserialize;

#[derive(Deserialize)]
struct Expected {
    hidden_states: Vec<Vec<Vec<f32>>>,
    last_hidden_state: Vec<Vec<f32>>,
}

fn fixture(variant: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/hubert")
        .join(variant)
}

fn read<T: serde::de::DeserializeOwned>(path: PathBuf) -> T {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn check_variant(variant: &str) {
    let dir = fixture(variant);
    let model = Hubert::load(&dir).unwrap();
    let input: Vec<f32> = read(dir.join("input.json"));
    let expected: Expected = read(dir.join("expected.json"));
    let states = model.hidden_states(&input).unwrap();
    assert_eq!(states.len(), expected.hidden_states.len());
    let mut worst = 0.0f32;
    for (got, want) in states.iter().zip(&expected.hidden_states) {
        assert_eq!(got.nrows(), want.len());
        for (row, want_row) in got.rows().into_iter().zip(want) {
            for (a, b) in row.iter().zip(want_row) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    assert!(worst < 1e-4, "{variant}: max abs deviation {worst}");

    let seq = model.encode(&input, None).unwrap();
    assert_eq!(seq.frames.nrows(), expected.last_hidden_state.len());
    assert!((seq.frame_stride_s - 0.02).abs() < 1e-12);
    assert_eq!(model.receptive_field(), 400);
}

#[test]
fn base_layout_matches_reference() {
    check_variant("base");
}

#[test]
fn stable_layer_norm_layout_matches_reference() {
    check_variant("large");
}

#[test]
fn loads_through_encoder_config() {
    let cfg = EncoderConfig {
        backend: Backend::PretrainedSsl,
        feature_dim: 16,
        checkpoint: Some(fixture("base")),
        layer: Some(1),
        ..EncoderConfig::default()
    };
    let enc = LoadedEncoder::load(&cfg).unwrap();
    let clip = AudioClip::new(
        (0..CANONICAL_LEN).map(|i| ((i as f32) * 0.01).sin() * 0.3).collect(),
        CANONICAL_RATE,
    );
    let a = enc.encode(&clip).unwrap();
    // (64000 - 400) / 320 + 1
    assert_eq!(a.frames.dim(), (199, 16));
    let b = enc.encode(&clip).unwrap();
    assert_eq!(a, b);
    let chunks = enc.encode_chunked(&clip).unwrap();
    assert_eq!(chunks.chunks.dim(), (39, 80));

    let wrong_dim = EncoderConfig {
        feature_dim: 768,
        ..cfg.clone()
    };
    assert!(LoadedEncoder::load(&wrong_dim).is_err());
    let bad_layer = EncoderConfig {
        layer: Some(9),
        ..cfg
    };
    assert!(LoadedEncoder::load(&bad_layer).is_err());
}

#[test]
fn corrupt_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixture("base").join("config.json"), dir.path().join("config.json")).unwrap();
    std::fs::write(dir.path().join("model.safetensors"), b"\x10\x00\x00garbage").unwrap();
    let err = Hubert::load(dir.path()).err().unwrap();
    assert!(err.to_string().contains("corrupt"), "{err}");

    std::fs::remove_file(dir.path().join("model.safetensors")).unwrap();
    assert!(Hubert::load(dir.path()).is_err());
}
