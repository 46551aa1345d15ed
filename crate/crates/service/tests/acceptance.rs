//! Acceptance gate. Runs every headline criterion at its stated tolerance and
//! prints one PASS/FAIL line each; exits nonzero if any fails.
//!
//! `cargo test -p nativeness-service --test acceptance`

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use axum::http::StatusCode;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nativeness::analysis::AnalysisResult;
use nativeness::audio::{encode_wav_pcm16, normalize, AudioClip};
use nativeness::dataset::LabeledClip;
use nativeness::differ::{extract_segments, flagged_chunks, standardize, DiffConfig};
use nativeness::encoder::{EncoderConfig, LoadedEncoder, ENERGY_FLOOR};
use nativeness::manifest::{Label, Split};
use nativeness::metric::{evaluate_metric, train_metric, triplet_loss, MetricTrainConfig};
use nativeness::model::{MetricEntry, ModelContainer, ScorerEntry};
use nativeness::nn::ParamBlocks;
use nativeness::scorer::{
    attention_weights, calibrated_probabilities, classify_matrix, evaluate, expected_calibration_error,
    fit_temperature, focal_loss, loss_and_grad, pool, AttentionVector, ClassifierConfig, ClassifierParams,
    TrainConfig, ECE_BINS,
};
use nativeness::synth::{generate, SynthConfig};
use nativeness_service::sessions::SessionRecord;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(
        elapsed.as_secs_f64() < limit_s,
        format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64()),
    )
}

struct Gate {
    failures: usize,
}

impl Gate {
    fn run(&mut self, name: &str, f: impl FnOnce() -> Check) {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}  [{detail}; {secs:.1} s]"),
            Err(detail) => {
                self.failures += 1;
                println!("FAIL  {name}  [{detail}; {secs:.1} s]");
            }
        }
    }
}

fn random_matrix(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
}

/// Attention-only parameters with `W_A1` `a × h`.
fn attention_params(h: usize, a: usize, rng: &mut ChaCha8Rng) -> ClassifierParams {
    let cfg = ClassifierConfig {
        recurrent_hidden_dim: h,
        attention_hidden_dim: a,
        bidirectional: false,
        dropout_p: 0.0,
    };
    let mut p = ClassifierParams::zeros(1, &cfg);
    p.w_a1 = random_matrix(a, h, 2.0, rng);
    p.w_a2 = random_matrix(1, a, 2.0, rng);
    p
}

fn attention_oracle() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut worst_sum = 0.0f64;
    for _ in 0..1000 {
        let (tn, h, a) = (rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=8));
        let p = attention_params(h, a, &mut rng);
        let hs = random_matrix(tn, h, 2.0, &mut rng);
        let alpha = attention_weights(hs.view(), &p).map_err(|e| e.to_string())?;
        let scores: Vec<f64> = (0..tn)
            .map(|s| {
                let mut e = 0.0;
                for j in 0..a {
                    let mut pre = 0.0;
                    for k in 0..h {
                        pre += p.w_a1[[j, k]] * hs[[s, k]];
                    }
                    e += p.w_a2[[0, j]] * pre.tanh();
                }
                e
            })
            .collect();
        let denom: f64 = scores.iter().map(|e| e.exp()).sum();
        for (s, e) in scores.iter().enumerate() {
            worst = worst.max((alpha.weights[s] - e.exp() / denom).abs());
        }
        worst_sum = worst_sum.max((alpha.weights.iter().sum::<f64>() - 1.0).abs());
    }
    ensure(worst < 1e-6, format!("max |α − scalar| = {worst:e}"))?;
    ensure(worst_sum < 1e-6, format!("max |Σα − 1| = {worst_sum:e}"))?;
    within(t.elapsed(), 10.0)?;
    Ok(format!("1000 draws, max |α − scalar| = {worst:.1e}, max |Σα − 1| = {worst_sum:.1e}"))
}

fn pooling_oracle() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (tn, h) = (rng.random_range(1..=12), rng.random_range(1..=10));
        let hs = random_matrix(tn, h, 3.0, &mut rng);
        let raw: Vec<f64> = (0..tn).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let alpha = AttentionVector {
            weights: raw.iter().map(|v| v / total).collect(),
        };
        let c = pool(hs.view(), &alpha);
        for k in 0..h {
            let mut sum = 0.0;
            for s in 0..tn {
                sum += alpha.weights[s] * hs[[s, k]];
            }
            worst = worst.max((c[k] - sum).abs());
        }
    }
    ensure(worst < 1e-6, format!("max deviation {worst:e}"))?;
    within(t.elapsed(), 10.0)?;
    Ok(format!("1000 draws, max deviation {worst:.1e}"))
}

fn triplet_suite() -> Check {
    ensure(triplet_loss(1.0, 3.0, 1.0) == 0.0, "d_ap=1, d_an=3, m=1 should be 0")?;
    ensure(triplet_loss(0.7, 0.7, 0.0) == 0.0, "d_ap=d_an, m=0 should be 0")?;
    ensure(triplet_loss(2.0, 1.0, 0.5) == 1.5, "d_ap=2, d_an=1, m=0.5 should be 1.5")?;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut zeros = 0;
    for i in 0..10_000 {
        let d_ap: f64 = rng.random_range(0.0..4.0);
        let d_an: f64 = if i % 10 == 0 { d_ap } else { rng.random_range(0.0..4.0) };
        let m: f64 = if i % 10 == 0 { 0.0 } else { rng.random_range(0.0..2.0) };
        let l = triplet_loss(d_ap, d_an, m);
        ensure(l >= 0.0, format!("negative loss at ({d_ap}, {d_an}, {m})"))?;
        ensure(
            (l == 0.0) == (d_an >= d_ap + m),
            format!("zero-iff violated at ({d_ap}, {d_an}, {m}): loss {l}"),
        )?;
        zeros += (l == 0.0) as usize;
    }
    Ok(format!("3 exact cases, 10000 draws ({zeros} at zero)"))
}

fn focal_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let p0: f64 = rng.random_range(1e-9..1.0);
        let probs = [p0, 1.0 - p0];
        let label = if rng.random_bool(0.5) { Label::Native } else { Label::NonNative };
        let ce = -probs[label.index()].ln();
        worst = worst.max((focal_loss(probs, label, 0.0) - ce).abs());
    }
    ensure(worst <= 1e-9, format!("max |FL_0 − CE| = {worst:e}"))?;
    for gamma in [0.0, 0.5, 1.0, 2.0, 5.0] {
        ensure(focal_loss([1.0, 0.0], Label::Native, gamma) == 0.0, format!("p_label = 1, γ = {gamma}"))?;
        ensure(focal_loss([0.0, 1.0], Label::NonNative, gamma) == 0.0, format!("p_label = 1, γ = {gamma}"))?;
    }
    Ok(format!("10000 draws, max |FL_0 − CE| = {worst:.1e}; p_label = 1 gives 0"))
}

fn gradient_check() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let cfg = ClassifierConfig {
        recurrent_hidden_dim: 4,
        attention_hidden_dim: 6,
        bidirectional: true,
        dropout_p: 0.0,
    };
    let mut p = ClassifierParams::new(6, &cfg, &mut rng).map_err(|e| e.to_string())?;
    p.w_s.mapv_inplace(|v| v * 6.0);
    let x = random_matrix(4, 6, 1.5, &mut rng);
    let gamma = 2.0;
    let loss = |q: &ClassifierParams, label: Label| focal_loss(classify_matrix(x.view(), q).unwrap().probabilities, label, gamma);
    let mut worst = (0.0f64, String::new());
    let eps = 1e-6;
    for label in Label::ALL {
        let mut grads = p.zeros_like();
        loss_and_grad(x.view(), label, &p, gamma, None, &mut grads);
        let analytic: Vec<(String, Vec<f64>)> = grads
            .blocks()
            .into_iter()
            .map(|(n, b)| (n, b.iter().copied().collect()))
            .collect();
        for (bi, (name, block)) in analytic.iter().enumerate() {
            let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
            for (idx, &a) in block.iter().enumerate() {
                let mut probe = p.clone();
                *probe.blocks_mut()[bi].iter_mut().nth(idx).unwrap() += eps;
                let up = loss(&probe, label);
                *probe.blocks_mut()[bi].iter_mut().nth(idx).unwrap() -= 2.0 * eps;
                let down = loss(&probe, label);
                let n = (up - down) / (2.0 * eps);
                diff += (n - a) * (n - a);
                na += a * a;
                nn += n * n;
            }
            let rel = diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-12);
            if rel > worst.0 {
                worst = (rel, format!("{name} ({label:?})"));
            }
        }
    }
    ensure(worst.0 < 1e-4, format!("relative error {:.2e} in {}", worst.0, worst.1))?;
    within(t.elapsed(), 60.0)?;
    Ok(format!(
        "T′ = 4, input 6, hidden 8, {} blocks; worst relative error {:.1e} in {}",
        p.blocks().len(),
        worst.0,
        worst.1
    ))
}

struct Corpus {
    train: Vec<LabeledClip>,
    validation: Vec<LabeledClip>,
    test: Vec<LabeledClip>,
}

fn corpus() -> Corpus {
    let items = generate(&SynthConfig::default()).unwrap();
    let split = |s: Split| -> Vec<LabeledClip> {
        items
            .iter()
            .filter(|(r, _)| r.split == s)
            .map(|(r, u)| LabeledClip {
                record: r.clone(),
                clip: normalize(&u.clip).unwrap(),
            })
            .collect()
    };
    Corpus {
        train: split(Split::Train),
        validation: split(Split::Validation),
        test: split(Split::Test),
    }
}

/// Nearest class centroid on time-averaged, z-scored encoder features.
/// Frames that are pure zero padding (every band at the energy floor) are
/// left out of the average, otherwise it mostly measures clip length.
fn centroid_accuracy(c: &Corpus, enc: &LoadedEncoder) -> f64 {
    let floor = ENERGY_FLOOR.ln();
    let mean_frame = |clip: &AudioClip| -> Array1<f64> {
        let f = enc.encode(clip).unwrap().frames;
        let voiced: Vec<_> = f.rows().into_iter().filter(|r| r.iter().any(|&v| v != floor)).collect();
        voiced.iter().fold(Array1::<f64>::zeros(f.ncols()), |acc, r| acc + r) / voiced.len() as f64
    };
    let train: Vec<(Array1<f64>, Label)> = c.train.iter().map(|x| (mean_frame(&x.clip), x.label())).collect();
    let dim = train[0].0.len();
    let n = train.len() as f64;
    let mu = train.iter().fold(Array1::<f64>::zeros(dim), |acc, (v, _)| acc + v) / n;
    let sd = (train.iter().fold(Array1::zeros(dim), |acc: Array1<f64>, (v, _)| acc + (v - &mu).mapv(|d| d * d)) / n)
        .mapv(|v| v.sqrt().max(1e-9));
    let z = |v: &Array1<f64>| (v - &mu) / &sd;
    let centroid = |l: Label| {
        let members: Vec<Array1<f64>> = train.iter().filter(|(_, y)| *y == l).map(|(v, _)| z(v)).collect();
        members.iter().fold(Array1::zeros(dim), |acc, v| acc + v) / members.len() as f64
    };
    let (cn, cnn) = (centroid(Label::Native), centroid(Label::NonNative));
    let dist = |a: &Array1<f64>, b: &Array1<f64>| (a - b).mapv(|d| d * d).sum();
    let correct = c
        .test
        .iter()
        .filter(|x| {
            let v = z(&mean_frame(&x.clip));
            let guess = if dist(&v, &cn) <= dist(&v, &cnn) { Label::Native } else { Label::NonNative };
            guess == x.label()
        })
        .count();
    correct as f64 / c.test.len() as f64
}

fn scorer_convergence(c: &Corpus, enc: &LoadedEncoder, trained: &mut Option<ScorerEntry>) -> Check {
    let counts = (c.train.len(), c.validation.len(), c.test.len());
    ensure(counts == (200, 50, 50), format!("corpus split sizes {counts:?}"))?;
    let oracle = centroid_accuracy(c, enc);
    ensure(oracle >= 0.95, format!("centroid oracle accuracy {oracle:.3} < 0.95; corpus not separable"))?;
    let t = Instant::now();
    let cfg = TrainConfig::default();
    let (model, log) = nativeness::scorer::train(&c.train, &c.validation, enc, &cfg).map_err(|e| e.to_string())?;
    let eval = evaluate(&model, &c.test, enc, cfg.focal_gamma, 1.0).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    *trained = Some(ScorerEntry {
        model,
        config: cfg.clone(),
        log: log.clone(),
    });
    let detail = format!(
        "oracle {oracle:.3}, test accuracy {:.3} after {} epochs (best {})",
        eval.accuracy,
        log.epochs.len(),
        log.best_epoch
    );
    ensure(log.epochs.len() <= 30, format!("{detail}; more than 30 epochs"))?;
    ensure(eval.accuracy >= 0.95, detail.clone())?;
    within(elapsed, 600.0)?;
    Ok(detail)
}

fn calibration_recovery() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut logits = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..20_000 {
        let margin: f64 = rng.random_range(-4.0..4.0);
        let z = [margin / 2.0, -margin / 2.0];
        let p_native = calibrated_probabilities(z, 1.0)[0];
        labels.push(if rng.random_bool(p_native) { Label::Native } else { Label::NonNative });
        logits.push([3.0 * z[0], 3.0 * z[1]]);
    }
    let fit = fit_temperature(&logits, &labels).map_err(|e| e.to_string())?;
    let ece = |temp: f64| {
        let probs: Vec<[f64; 2]> = logits.iter().map(|z| calibrated_probabilities(*z, temp)).collect();
        expected_calibration_error(&probs, &labels, ECE_BINS)
    };
    let (before, after) = (ece(1.0), ece(fit.temperature));
    let detail = format!("T = {:.3}, ECE {before:.4} → {after:.4}", fit.temperature);
    ensure((2.4..=3.6).contains(&fit.temperature), detail.clone())?;
    ensure(after < before, detail.clone())?;
    within(t.elapsed(), 30.0)?;
    Ok(detail)
}

fn metric_learning(c: &Corpus, enc: &LoadedEncoder, trained: &mut Option<MetricEntry>) -> Check {
    let t = Instant::now();
    let cfg = MetricTrainConfig::default();
    let (model, log) = train_metric(&c.train, &c.validation, enc, &cfg).map_err(|e| e.to_string())?;
    let eval = evaluate_metric(&model, &c.test, enc, 1000, 99).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    *trained = Some(MetricEntry {
        model,
        config: cfg,
        log,
    });
    let detail = format!(
        "held-out satisfaction {:.3} over {} triplets, intra {:.3} vs cross {:.3}",
        eval.satisfaction, eval.triplets, eval.mean_intra_non_native, eval.mean_cross_class
    );
    ensure(eval.satisfaction >= 0.9, detail.clone())?;
    ensure(eval.mean_intra_non_native < eval.mean_cross_class, detail.clone())?;
    within(elapsed, 600.0)?;
    Ok(detail)
}

fn covered_chunks(alpha: &AttentionVector, threshold: f64) -> BTreeSet<usize> {
    let cfg = DiffConfig {
        z_threshold: threshold,
        ..DiffConfig::default()
    };
    extract_segments(alpha, 1.0, &cfg, Label::NonNative, 0.0)
        .iter()
        .flat_map(|s| s.start_s as usize..s.end_s as usize)
        .collect()
}

fn difference_mapping() -> Check {
    let cfg = DiffConfig::default();
    let mut spikes = 0;
    for n in 3..=16 {
        for i in 0..n {
            for stride in [0.02, 0.1, 0.25] {
                let mut w = vec![1.0; n];
                w[i] = 10.0;
                let total: f64 = w.iter().sum();
                let alpha = AttentionVector {
                    weights: w.iter().map(|v| v / total).collect(),
                };
                let segs = extract_segments(&alpha, stride, &cfg, Label::NonNative, 0.0);
                ensure(segs.len() == 1, format!("spike at {i} of {n}: {segs:?}"))?;
                let s = segs[0];
                ensure(
                    s.start_s == i as f64 * stride && s.end_s == (i + 1) as f64 * stride && s.intensity == 1.0,
                    format!("spike at {i} of {n}, stride {stride}: {s:?}"),
                )?;
                spikes += 1;
            }
        }
    }
    for n in 1..=32 {
        let alpha = AttentionVector {
            weights: vec![1.0 / n as f64; n],
        };
        ensure(
            extract_segments(&alpha, 0.1, &cfg, Label::NonNative, 0.0).is_empty(),
            format!("uniform α of length {n} produced segments"),
        )?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let thresholds = [-1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 3.0];
    for draw in 0..100 {
        let n = rng.random_range(4..=40);
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let alpha = AttentionVector {
            weights: raw.iter().map(|v| v / total).collect(),
        };
        let z = standardize(&alpha, cfg.min_std);
        for pair in thresholds.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            let flag_lo: BTreeSet<usize> = flagged_chunks(&z, lo).into_iter().collect();
            let flag_hi: BTreeSet<usize> = flagged_chunks(&z, hi).into_iter().collect();
            ensure(flag_hi.is_subset(&flag_lo), format!("draw {draw}: flagged set grew from {lo} to {hi}"))?;
            ensure(
                covered_chunks(&alpha, hi).is_subset(&covered_chunks(&alpha, lo)),
                format!("draw {draw}: shaded span grew from {lo} to {hi}"),
            )?;
        }
    }
    Ok(format!("{spikes} spike cases exact, 32 uniform cases empty, 100 draws monotone over {} thresholds", thresholds.len()))
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nativeness"));
    c.env_remove("NATIVENESS_CHECKPOINT").env("RUST_LOG", "warn");
    c
}

fn run_ok(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = bin().args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn pipeline_determinism(container: &ModelContainer, fixture: &AudioClip) -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let ckpt = root.join("model.json");
    container.save(&ckpt).map_err(|e| e.to_string())?;
    let clip = root.join("fixture.wav");
    std::fs::write(&clip, encode_wav_pcm16(fixture).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let args = ["analyze-file", s(&clip), "--checkpoint", s(&ckpt), "--sentence-id", "s1"];
    let a = run_ok(&args)?;
    let b = run_ok(&args)?;
    ensure(a == b, "analyze-file output differs between runs")?;
    let parsed: AnalysisResult = serde_json::from_slice(&a).map_err(|e| e.to_string())?;
    parsed.validate().map_err(|e| e.to_string())?;

    run_ok(&[
        "synth-corpus", "--out", s(&root.join("corpus")), "--train", "16", "--validation", "8", "--test", "8",
        "--clips-per-speaker", "2", "--seed", "5",
    ])?;
    std::fs::write(
        root.join("scorer.toml"),
        "max_epochs = 3\n[classifier]\nrecurrent_hidden_dim = 8\nattention_hidden_dim = 4\n",
    )
    .map_err(|e| e.to_string())?;
    let train = |out: &str| {
        run_ok(&[
            "train-scorer", "--manifest", s(&root.join("corpus/manifest.jsonl")), "--out", s(&root.join(out)),
            "--config", s(&root.join("scorer.toml")), "--seed", "7",
        ])
    };
    train("a.json")?;
    train("b.json")?;
    let ca = std::fs::read(root.join("a.json")).map_err(|e| e.to_string())?;
    let cb = std::fs::read(root.join("b.json")).map_err(|e| e.to_string())?;
    ensure(ca == cb, "train-scorer checkpoints differ for the same seed")?;
    Ok(format!(
        "analyze-file {} bytes identical twice; train-scorer --seed 7 checkpoints identical ({} bytes)",
        a.len(),
        ca.len()
    ))
}

fn api_contract(container: ModelContainer, fixture: &AudioClip) -> Check {
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let app = common::app(dir.path(), Some(container));
        let (status, body) = common::post_audio(&app, "learner", "s1", common::wav(fixture)).await;
        ensure(status == StatusCode::OK, format!("analyze: {status} {body}"))?;
        let result: AnalysisResult = serde_json::from_value(body).map_err(|e| e.to_string())?;
        result.validate().map_err(|e| e.to_string())?;
        let (status, history) = common::get_json(&app, "/api/session/learner").await;
        ensure(status == StatusCode::OK, format!("history: {status}"))?;
        let history: SessionRecord = serde_json::from_value(history).map_err(|e| e.to_string())?;
        ensure(history.results == vec![result.clone()], "history does not echo the analysis")?;

        let error_shape = |body: &serde_json::Value, code: &str| {
            body["code"] == code && body["message"].is_string() && body.as_object().map(|o| o.len()) == Some(2)
        };
        let silence = AudioClip::new(vec![0.0; 32_000], 16_000);
        let (status, body) = common::post_audio(&app, "learner", "s1", common::wav(&silence)).await;
        ensure(
            status == StatusCode::BAD_REQUEST && error_shape(&body, "silent_input"),
            format!("silent input: {status} {body}"),
        )?;
        let (status, body) = common::post_audio(&app, "learner", "missing", common::wav(fixture)).await;
        ensure(
            status == StatusCode::NOT_FOUND && error_shape(&body, "unknown_sentence"),
            format!("unknown sentence: {status} {body}"),
        )?;
        Ok(format!(
            "round trip ok (score {}, {} segments), silent_input 400, unknown_sentence 404",
            result.score.display,
            result.segments.len()
        ))
    })
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut gate = Gate { failures: 0 };
    gate.run("attention weights match scalar evaluation", attention_oracle);
    gate.run("attention pooling matches weighted sum", pooling_oracle);
    gate.run("triplet hinge cases and zero-iff property", triplet_suite);
    gate.run("focal loss reduces to cross-entropy", focal_suite);
    gate.run("scoring loss gradient check", gradient_check);

    let enc = LoadedEncoder::load(&EncoderConfig::default()).expect("fallback encoder");
    let data = corpus();
    let mut scorer = None;
    let mut metric = None;
    gate.run("synthetic scorer convergence", || scorer_convergence(&data, &enc, &mut scorer));
    gate.run("calibration temperature recovery", calibration_recovery);
    gate.run("metric learning separates classes", || metric_learning(&data, &enc, &mut metric));
    gate.run("difference mapping", difference_mapping);

    // end-to-end checks run on the models trained above, or on untrained
    // fixtures if training failed
    let container = match (scorer, metric) {
        (Some(s), Some(m)) => {
            let mut c = ModelContainer::new(&enc);
            c.set_scorer(s);
            c.metric = Some(m);
            c
        }
        _ => common::small_container(),
    };
    let fixture = data.test[0].clip.clone();
    gate.run("pipeline determinism", || pipeline_determinism(&container, &fixture));
    gate.run("api contract", || api_contract(container.clone(), &fixture));

    println!(
        "acceptance: {} failed, {:.0} s total",
        gate.failures,
        started.elapsed().as_secs_f64()
    );
    if gate.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
