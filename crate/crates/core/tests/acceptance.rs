//! Gating acceptance suite. Runs every criterion at its stated tolerance and
//! time budget, printing one PASS/FAIL line each; exits non-zero on any FAIL.
//! Pass a substring as the first argument to run a subset.

use std::collections::HashSet;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sarcbench::baselines::{bow_features, BowSvm, CnnSvm};
use sarcbench::cascade::{cascade_predict, cascade_train, CascadeContext, CascadeModel};
use sarcbench::corpus::{balanced_split, build_vocab, ClassCounts, DatasetSplit, Label, SequenceExample};
use sarcbench::harness::{
    accuracy, confusion, f1, run_experiment, significance, ConfusionCounts, ExperimentConfig, ModelKind,
};
use sarcbench::neural::{
    grad_check, grad_check_fn, softmax_cross_entropy, Activation, BiLstm, ContentCnn, Embedding,
    HyperParams,
};
use sarcbench::profiles::{build_profiles, cca_fit, LexiconScorer};
use sarcbench::rcnn::{rcnn_predict, rcnn_train, MiniEncoder, RcnnInput, RcnnModel};
use sarcbench::training::Classifier;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- metrics

fn metric_oracle() -> Outcome {
    // (tp, tn, fp, fn, accuracy, f1), all worked by hand.
    let cases: [(u64, u64, u64, u64, f64, f64); 12] = [
        (3, 2, 0, 0, 1.0, 1.0),
        (1, 1, 1, 1, 0.5, 0.5),
        (2, 0, 1, 1, 0.5, 2.0 / 3.0),
        (0, 0, 0, 5, 0.0, 0.0),
        (0, 4, 0, 0, 1.0, 1.0),
        (0, 3, 2, 0, 0.6, 0.0),
        (0, 0, 3, 4, 0.0, 0.0),
        (5, 0, 0, 0, 1.0, 1.0),
        (4, 3, 2, 1, 0.7, 8.0 / 11.0),
        (1, 0, 0, 3, 0.25, 0.4),
        (10, 80, 5, 5, 0.9, 2.0 / 3.0),
        (7, 7, 3, 3, 0.7, 0.7),
    ];
    for (tp, tn, fp, fn_, want_acc, want_f1) in cases {
        let c = ConfusionCounts { tp, tn, fp, fn_ };
        let (a, f) = (accuracy(&c).map_err(err)?, f1(&c).map_err(err)?);
        ensure((a - want_acc).abs() <= 1e-12 && (f - want_f1).abs() <= 1e-12, || {
            format!("{c:?}: got acc {a}, f1 {f}; want {want_acc}, {want_f1}")
        })?;
        // Same counts rebuilt from label vectors.
        let mut preds = Vec::new();
        let mut gold = Vec::new();
        for (n, p, g) in [(tp, Label::Sarcastic, Label::Sarcastic), (tn, Label::NonSarcastic, Label::NonSarcastic),
                          (fp, Label::Sarcastic, Label::NonSarcastic), (fn_, Label::NonSarcastic, Label::Sarcastic)] {
            preds.extend(std::iter::repeat(p).take(n as usize));
            gold.extend(std::iter::repeat(g).take(n as usize));
        }
        ensure(confusion(&preds, &gold).map_err(err)? == c, || format!("confusion rebuild of {c:?}"))?;
    }
    ensure(accuracy(&ConfusionCounts::default()).is_err() && f1(&ConfusionCounts::default()).is_err(), || {
        "empty counts must error".into()
    })?;
    Ok(format!("{} fixtures exact to 1e-12", cases.len()))
}

// ---------------------------------------------------------------- CCA

fn grid_first_correlation(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let center = |m: &Array2<f64>| m - &m.mean_axis(ndarray::Axis(0)).unwrap();
    let (x, y) = (center(x), center(y));
    let n = x.nrows() as f64 - 1.0;
    let (cxx, cyy, cxy) = (x.t().dot(&x) / n, y.t().dot(&y) / n, x.t().dot(&y) / n);
    let dir = |deg: usize| {
        let t = (deg as f64).to_radians();
        Array1::from(vec![t.cos(), t.sin()])
    };
    let mut best = 0.0f64;
    for i in 0..180 {
        let a = dir(i);
        let va = a.dot(&cxx.dot(&a));
        for j in 0..180 {
            let b = dir(j);
            let r = a.dot(&cxy.dot(&b)) / (va * b.dot(&cyy.dot(&b))).sqrt();
            best = best.max(r.abs());
        }
    }
    best
}

fn cca_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 400;
        let rot = |deg: f64| {
            let t = deg.to_radians();
            Array2::from_shape_vec((2, 2), vec![t.cos(), -t.sin(), t.sin(), t.cos()]).unwrap()
        };
        let mut x = Array2::zeros((n, 2));
        let mut y = Array2::zeros((n, 2));
        let noise = 0.3 + 0.3 * seed as f64;
        for i in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let e = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
            x[[i, 0]] = z + noise * e(&mut rng);
            x[[i, 1]] = 2.0 * e(&mut rng);
            y[[i, 0]] = z + noise * e(&mut rng);
            y[[i, 1]] = 0.5 * e(&mut rng);
        }
        let x = x.dot(&rot(rng.gen_range(0.0..180.0)));
        let y = y.dot(&rot(rng.gen_range(0.0..180.0)));
        let proj = cca_fit(x.view(), y.view(), 1, 0.0).map_err(err)?;
        let grid = grid_first_correlation(&x, &y);
        let d = (proj.correlations[0] - grid).abs();
        worst = worst.max(d);
        ensure(d < 1e-2, || format!("seed {seed}: cca {} vs grid {grid}", proj.correlations[0]))?;
    }
    Ok(format!("max |cca - grid| = {worst:.2e} over 5 seeds"))
}

// ---------------------------------------------------------------- gradients

const GRAD_TOL: f64 = 1e-4;
const EPS: f64 = 1e-5;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.gen_range(-1.0..1.0))
}

fn gradient_checks() -> Outcome {
    let mut worst = [0.0f64; 5];
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);

        // Content CNN: filters and bias under a random linear read-out of the pooled features.
        let mut cnn = ContentCnn::new("cnn", 2, 4, 3, Activation::Tanh, 0.5, &mut rng);
        let x = random_matrix(&mut rng, 6, 4);
        let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = grad_check(
            &mut cnn,
            |m, backward| {
                let (pooled, cache) = m.forward(x.view()).unwrap();
                if backward {
                    m.backward(x.view(), &cache, &c);
                }
                pooled.iter().zip(&c).map(|(p, w)| p * w).sum()
            },
            EPS,
            200,
            seed,
        );
        worst[0] = worst[0].max(r.max_rel_error);

        // BiLSTM, eval mode.
        let mut lstm = BiLstm::new("lstm", 3, 4, 0.0, 0.5, &mut rng);
        let x = random_matrix(&mut rng, 5, 3);
        let c = random_matrix(&mut rng, 5, 8);
        let r = grad_check(
            &mut lstm,
            |m, backward| {
                let (h, cache) = m.forward(x.view(), false, 0).unwrap();
                if backward {
                    m.backward(x.view(), &cache, c.view());
                }
                (&h * &c).sum()
            },
            EPS,
            300,
            seed,
        );
        worst[1] = worst[1].max(r.max_rel_error);

        // RCNN head (BiLSTM, position-wise FFN, max-over-time, output layer) under softmax CE.
        let hp = HyperParams {
            lstm_units: 3,
            lstm_dropout: 0.0,
            ffn_width: 5,
            ffn_activation: Activation::Tanh,
            freeze_encoder: true,
            init_scale: 0.5,
            max_len: 8,
            seed,
            ..HyperParams::default()
        };
        let enc = MiniEncoder::new(sarcbench::rcnn::MiniConfig { d_model: 4, heads: 2, intermediate: 8, ..Default::default() })
            .map_err(err)?;
        let mut model = RcnnModel::new(Box::new(enc), hp).map_err(err)?;
        let input: RcnnInput = model.prepare_text("a b c d e f").map_err(err)?;
        let label = (seed % 2) as usize;
        let r = grad_check(
            &mut model,
            |m, backward| {
                let logits = m.forward_train(&input, 0).unwrap();
                let (loss, d) = softmax_cross_entropy(&logits, label);
                if backward {
                    m.backward_last(&input, &d).unwrap();
                }
                loss
            },
            EPS,
            300,
            seed,
        );
        worst[2] = worst[2].max(r.max_rel_error);

        // Softmax cross-entropy with respect to the logits.
        let logits: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (_, d) = softmax_cross_entropy(&logits, label);
        let r = grad_check_fn(|z| softmax_cross_entropy(z, label).0, &logits, &d, EPS, 2, seed);
        worst[3] = worst[3].max(r.max_rel_error);

        // Embedding table (ids avoid the frozen pad row).
        let mut emb = Embedding::new("emb", 7, 3, 0.5, &mut rng);
        let ids = [3u32, 1, 5, 3, 6];
        let c = random_matrix(&mut rng, 5, 3);
        let r = grad_check(
            &mut emb,
            |m, backward| {
                let e = m.forward(&ids).unwrap();
                if backward {
                    m.backward(&ids, c.view());
                }
                (&e * &c).sum()
            },
            EPS,
            100,
            seed,
        );
        worst[4] = worst[4].max(r.max_rel_error);
    }
    let names = ["content CNN", "BiLSTM", "FFN head", "softmax CE", "embedding"];
    for (n, w) in names.iter().zip(worst) {
        ensure(w < GRAD_TOL, || format!("{n}: max relative error {w:.3e}"))?;
    }
    Ok(names.iter().zip(worst).map(|(n, w)| format!("{n} {w:.1e}")).collect::<Vec<_>>().join(", "))
}

// ---------------------------------------------------------------- corpora

fn example(id: String, author: String, forum: String, response: String, label: Label) -> SequenceExample {
    SequenceExample { id, author, forum, ancestors: vec!["so what do you make of the vote".into()], response, label }
}

/// 64 examples: sarcastic ones contain `alpha`, the others `beta`, among random filler.
fn separable_corpus() -> Vec<SequenceExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    (0..64)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Sarcastic } else { Label::NonSarcastic };
            let mut words: Vec<String> = (0..rng.gen_range(4..12)).map(|_| format!("w{}", rng.gen_range(0..30))).collect();
            let at = rng.gen_range(0..=words.len());
            words.insert(at, if label == Label::Sarcastic { "alpha" } else { "beta" }.into());
            example(format!("s{i}"), format!("u{}", i % 8), "f".into(), words.join(" "), label)
        })
        .collect()
}

fn train_only(examples: Vec<SequenceExample>) -> DatasetSplit {
    DatasetSplit { train: examples, validation: vec![], test: vec![], seed: 0, test_fraction: 0.0, val_fraction: 0.0 }
}

fn train_accuracy(labels: &[Label], examples: &[SequenceExample]) -> f64 {
    labels.iter().zip(examples).filter(|(p, e)| **p == e.label).count() as f64 / examples.len() as f64
}

fn overfit() -> Outcome {
    let split = train_only(separable_corpus());
    let hp = HyperParams { dem: 16, m: 16, k: 4, dt: 4, epochs: 30, batch_size: 8, ..HyperParams::cnn_preset() };
    let (cascade, _) = cascade_train(&split, CascadeContext::Zeroed { k: 4, dt: 4 }, &hp).map_err(err)?;
    let preds = cascade_predict(&cascade, &split.train).map_err(err)?;
    let acc_c = train_accuracy(&preds.iter().map(|p| p.pred).collect::<Vec<_>>(), &split.train);

    let hp = HyperParams { lstm_units: 16, ffn_width: 32, epochs: 30, batch_size: 8, learning_rate: 1e-3, ..HyperParams::default() };
    let (rcnn, _) = rcnn_train(&split, Box::new(MiniEncoder::with_seed(0).map_err(err)?), &hp).map_err(err)?;
    let preds = rcnn_predict(&rcnn, &split.train).map_err(err)?;
    let acc_r = train_accuracy(&preds.iter().map(|p| p.pred).collect::<Vec<_>>(), &split.train);
    ensure(acc_c >= 0.95 && acc_r >= 0.95, || format!("train accuracy CASCADE {acc_c}, RCNN {acc_r}"))?;
    Ok(format!("train accuracy CASCADE(zeroed) {acc_c:.3}, RCNN(mini) {acc_r:.3}"))
}

/// 400 examples from 40 authors. Half the authors lean sarcastic (80% of
/// their comments), half lean sincere; the leaning shows up only as a
/// sometimes-used habit vocabulary, so one comment says little about its
/// author while a history says a lot. The content cue is weak: `sure`
/// appears in 30% of sarcastic and 15% of sincere comments.
fn context_corpus(seed: u64) -> Vec<SequenceExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let habits = [["lol", "haha", "totally", "obviously"], ["thanks", "please", "agree", "kind"]];
    let mut out = Vec::new();
    for i in 0..400 {
        let author = i % 40;
        let leaning = author % 2;
        let p_sarc = if leaning == 0 { 0.8 } else { 0.2 };
        let label = if rng.gen_bool(p_sarc) { Label::Sarcastic } else { Label::NonSarcastic };
        let mut words: Vec<String> = (0..rng.gen_range(6..14)).map(|_| format!("w{}", rng.gen_range(0..150))).collect();
        if rng.gen_bool(0.35) {
            let h = habits[leaning][rng.gen_range(0..4)];
            words.insert(rng.gen_range(0..=words.len()), h.into());
        }
        let cue = if label == Label::Sarcastic { 0.3 } else { 0.15 };
        if rng.gen_bool(cue) {
            words.insert(rng.gen_range(0..=words.len()), "sure".into());
        }
        out.push(example(format!("c{i}"), format!("user{author}"), format!("forum{}", i % 4), words.join(" "), label));
    }
    out
}

fn context_benefit() -> Outcome {
    let hp = HyperParams {
        ds: 16,
        dp: 8,
        dt: 4,
        k: 4,
        dem: 16,
        m: 16,
        epochs: 10,
        // Roughly six training comments per author; shorter PV training leaves
        // the stylometric vectors too noisy to carry the leaning.
        pv_epochs: 100,
        ..HyperParams::cnn_preset()
    };
    let seeds = 0..5u64;
    let mut sums = [0.0f64; 4];
    for seed in seeds.clone() {
        let hp = HyperParams { seed, ..hp.clone() };
        let split = balanced_split(&context_corpus(seed), 0.2, 0.2, seed).map_err(err)?;
        let store = Arc::new(build_profiles(&split.train, &hp, &LexiconScorer::new(hp.dp)).map_err(err)?);
        let acc = |labels: Vec<Label>| train_accuracy(&labels, &split.test);

        let bow = BowSvm::train(&split, &hp).map_err(err)?;
        sums[0] += acc(bow.predict(&split.test).map_err(err)?.iter().map(|p| p.pred).collect());
        let cue = CnnSvm::train_cue(&split, store.clone(), &hp).map_err(err)?;
        sums[1] += acc(cue.predict(&split.test).map_err(err)?.iter().map(|p| p.pred).collect());
        let (zeroed, _) = cascade_train(&split, CascadeContext::Zeroed { k: hp.k, dt: hp.dt }, &hp).map_err(err)?;
        sums[2] += acc(cascade_predict(&zeroed, &split.test).map_err(err)?.iter().map(|p| p.pred).collect());
        let (full, _) = cascade_train(&split, CascadeContext::profiles(store), &hp).map_err(err)?;
        sums[3] += acc(cascade_predict(&full, &split.test).map_err(err)?.iter().map(|p| p.pred).collect());
    }
    let n = seeds.count() as f64;
    let [bow, cue, zeroed, full] = sums.map(|s| s / n);
    let summary = format!("mean test accuracy BoW-SVM {bow:.3}, CUE-SVM {cue:.3}, CASCADE zeroed {zeroed:.3}, CASCADE {full:.3}");
    ensure(cue >= bow && full >= zeroed, || summary.clone())?;
    Ok(summary)
}

// ---------------------------------------------------------------- split

fn split_fidelity() -> Outcome {
    let examples: Vec<SequenceExample> = (0..500)
        .map(|i| {
            let label = if i < 250 { Label::Sarcastic } else { Label::NonSarcastic };
            example(format!("x{i}"), format!("u{}", i % 17), "f".into(), format!("text {i}"), label)
        })
        .collect();
    for seed in 0..5u64 {
        let split = balanced_split(&examples, 0.2, 0.2, seed).map_err(err)?;
        // Independent recount.
        let count = |part: &[SequenceExample]| {
            let s = part.iter().filter(|e| e.label == Label::Sarcastic).count();
            (s, part.len() - s)
        };
        let (tr, va, te) = (count(&split.train), count(&split.validation), count(&split.test));
        ensure(te == (50, 50), || format!("seed {seed}: test {te:?}"))?;
        ensure(va == (40, 40), || format!("seed {seed}: validation {va:?} (20% of the 200/200 pool)"))?;
        ensure(tr == (160, 160), || format!("seed {seed}: train {tr:?}"))?;
        let mut ids = HashSet::new();
        for e in split.train.iter().chain(&split.validation).chain(&split.test) {
            ensure(ids.insert(e.id.clone()), || format!("seed {seed}: {} appears twice", e.id))?;
        }
        ensure(split.manifest().train == ClassCounts { sarcastic: 160, non_sarcastic: 160 }, || "manifest counts".into())?;
    }
    // Imbalanced input: 10 sarcastic, 30 sincere; the majority class is downsampled.
    let small: Vec<SequenceExample> = (0..40)
        .map(|i| {
            let label = if i < 10 { Label::Sarcastic } else { Label::NonSarcastic };
            example(format!("y{i}"), format!("u{}", i % 7), "f".into(), format!("text {i}"), label)
        })
        .collect();
    let split = balanced_split(&small, 0.2, 0.2, 0).map_err(err)?;
    let m = split.manifest();
    let pair = |c: ClassCounts| (c.sarcastic, c.non_sarcastic);
    let got = (pair(m.train), pair(m.validation), pair(m.test));
    ensure(got == ((7, 7), (1, 1), (2, 2)), || format!("10/30 corpus gave train/val/test {got:?}"))?;
    Ok("500 balanced: 160/160, 40/40, 50/50 on 5 seeds; 10/30: 7/7, 1/1, 2/2".into())
}

// ---------------------------------------------------------------- determinism

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let data = dir.path().join("corpus.jsonl");
    sarcbench::corpus::write_sarc_file(&data, &context_corpus(7)[..120]).map_err(err)?;
    let mut config = ExperimentConfig::new(&data, ModelKind::ALL.to_vec());
    config.seeds = vec![0, 1];
    config.n_boot = 1000;
    config.out_dir = dir.path().join("runs");
    config.hyperparams = serde_json::from_str(
        r#"{"ds": 8, "dp": 8, "dt": 4, "k": 4, "dem": 16, "m": 8, "epochs": 3, "pv_epochs": 5,
            "lstm_units": 8, "ffn_width": 16}"#,
    )
    .unwrap();
    let a = run_experiment(&config).map_err(err)?;
    let b = run_experiment(&config).map_err(err)?;
    ensure(a.dir != b.dir, || "runs share a directory".into())?;
    ensure(a.report.is_complete(), || format!("failed stages: {:?}", a.report.failed_stages().collect::<Vec<_>>()))?;
    let read = |p: std::path::PathBuf| std::fs::read(p).unwrap();
    ensure(read(a.dir.join("report.json")) == read(b.dir.join("report.json")), || "report.json differs".into())?;
    let mut files = 0;
    for entry in std::fs::read_dir(a.dir.join("checkpoints")).map_err(err)? {
        let name = entry.map_err(err)?.file_name();
        let (x, y) = (read(a.dir.join("checkpoints").join(&name)), read(b.dir.join("checkpoints").join(&name)));
        ensure(sarcbench::archive::sha256_hex(&x) == sarcbench::archive::sha256_hex(&y), || {
            format!("checkpoint {name:?} differs")
        })?;
        files += 1;
    }
    for row in &a.report.models {
        let sha = sarcbench::archive::sha256_file(&a.dir.join(&row.checkpoint)).map_err(err)?;
        ensure(sha == row.checkpoint_sha256, || format!("{} hash not traceable", row.checkpoint))?;
    }
    Ok(format!("{} model rows, {files} checkpoint files identical", a.report.models.len()))
}

// ---------------------------------------------------------------- padding

fn fuzz_texts(n: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let alphabet: Vec<char> = "abcdefghijklmnopqrstuvwxyzABCXYZ0123456789!?.,'é漢 ".chars().collect();
    (0..n)
        .map(|_| {
            let words = rng.gen_range(1..=250);
            (0..words)
                .map(|_| (0..rng.gen_range(1..8)).map(|_| alphabet[rng.gen_range(0..alphabet.len() - 1)]).collect::<String>())
                .collect::<Vec<_>>()
                .join(if rng.gen_bool(0.1) { "  \t" } else { " " })
        })
        .collect()
}

fn padding_contract() -> Outcome {
    const LEN: usize = 100;
    let texts = fuzz_texts(1000);
    let examples: Vec<SequenceExample> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| example(format!("p{i}"), format!("u{}", i % 5), "f".into(), t.clone(), if i % 2 == 0 { Label::Sarcastic } else { Label::NonSarcastic }))
        .collect();
    let vocab = build_vocab(&examples, 1).map_err(err)?;
    let hp = HyperParams { dem: 8, m: 4, k: 4, dt: 4, ..HyperParams::cnn_preset() };
    ensure(hp.max_len == LEN, || "default max_len is not 100".into())?;
    let cascade = CascadeModel::new(vocab.clone(), CascadeContext::Zeroed { k: 4, dt: 4 }, hp.clone()).map_err(err)?;
    let rhp = HyperParams { lstm_units: 4, ffn_width: 4, freeze_encoder: true, ..HyperParams::default() };
    let rcnn = RcnnModel::new(Box::new(MiniEncoder::with_seed(0).map_err(err)?), rhp).map_err(err)?;
    let bow = BowSvm { seed: 0, vocab: vocab.clone(), max_len: LEN, svm: sarcbench::baselines::LinearSvm {
        w: vec![0.0; vocab.len()], b: 0.0, lambda: 1.0, epochs: 0, seed: 0, objective: vec![] } };

    for ex in &examples {
        let words = ex.response.split_whitespace().count();
        let x = cascade.prepare(ex).map_err(err)?;
        ensure(x.seq.ids.len() == LEN && x.seq.true_length == words.min(LEN), || format!("{}: cascade sequence", ex.id))?;
        ensure(x.seq.ids[x.seq.true_length..].iter().all(|&i| i == 0), || format!("{}: cascade padding", ex.id))?;
        cascade.cascade_forward(&x.seq, &x.user, &x.forum).map_err(err)?;
        // Content features, the CNN-SVM and CUE-SVM input, go through the same boundary.
        cascade.content_features(&x.seq).map_err(err)?;

        let r = rcnn.prepare(ex).map_err(err)?;
        ensure(r.seq.ids.len() == LEN && r.seq.true_length <= LEN, || format!("{}: rcnn sequence", ex.id))?;
        let enc = r.encoded.as_ref().unwrap();
        ensure(enc.nrows() == r.seq.true_length, || format!("{}: encoder rows", ex.id))?;
        rcnn.probs(&r).map_err(err)?;

        let counts = bow_features(&ex.response, &bow.vocab, LEN).map_err(err)?;
        ensure(counts.total() as usize == words.min(LEN), || format!("{}: bow counts", ex.id))?;
    }
    // The boundary rejects anything that is not exactly 100 ids.
    let mut short = cascade.prepare(&examples[0]).map_err(err)?;
    short.seq.ids.pop();
    ensure(cascade.cascade_forward(&short.seq, &short.user, &short.forum).is_err(), || "99 ids accepted by CASCADE".into())?;
    let mut r = rcnn.prepare(&examples[0]).map_err(err)?;
    r.seq.ids.push(0);
    ensure(rcnn.probs(&r).is_err(), || "101 ids accepted by RCNN".into())?;
    Ok(format!("{} fuzzed texts, all models saw exactly {LEN} ids", texts.len()))
}

// ---------------------------------------------------------------- significance

/// Two-sided exact sign test on discordant pairs.
fn binomial_p(wins: u64, losses: u64) -> f64 {
    let n = wins + losses;
    let k = wins.min(losses);
    let ln_fact = |m: u64| (1..=m).map(|v| (v as f64).ln()).sum::<f64>();
    let tail: f64 = (0..=k)
        .map(|j| (ln_fact(n) - ln_fact(j) - ln_fact(n - j) - n as f64 * std::f64::consts::LN_2).exp())
        .sum();
    (2.0 * tail).min(1.0)
}

fn significance_sanity() -> Outcome {
    let n = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let gold: Vec<Label> = (0..n).map(|_| if rng.gen_bool(0.5) { Label::Sarcastic } else { Label::NonSarcastic }).collect();
    let coin: Vec<Label> = (0..n).map(|_| if rng.gen_bool(0.5) { Label::Sarcastic } else { Label::NonSarcastic }).collect();
    for seed in 0..3 {
        let same = significance(&coin, &coin, &gold, 10_000, seed).map_err(err)?;
        ensure(same == 1.0, || format!("A vs A gave {same}"))?;
    }
    let p = significance(&gold, &coin, &gold, 10_000, 11).map_err(err)?;
    let wrong = coin.iter().zip(&gold).filter(|(c, g)| c != g).count() as u64;
    let oracle = binomial_p(wrong, 0);
    ensure(p < 0.05 && oracle < 0.05, || format!("perfect vs random: bootstrap {p}, binomial {oracle}"))?;

    // A moderate gap: the bootstrap should agree with the exact test.
    let mut b = gold.clone();
    let mut a = gold.clone();
    for i in 0..60 {
        b[i] = flip(b[i]);
    }
    for i in 60..100 {
        a[i] = flip(a[i]);
    }
    let pb = significance(&a, &b, &gold, 10_000, 3).map_err(err)?;
    let po = binomial_p(60, 40);
    ensure((pb - po).abs() < 0.03, || format!("60/40 discordant: bootstrap {pb:.4}, binomial {po:.4}"))?;
    Ok(format!("A=A p=1; perfect vs coin p={p} (binomial {oracle:.1e}); 60/40 split bootstrap {pb:.4} vs binomial {po:.4}"))
}

fn flip(l: Label) -> Label {
    match l {
        Label::Sarcastic => Label::NonSarcastic,
        Label::NonSarcastic => Label::Sarcastic,
    }
}

// ---------------------------------------------------------------- runner

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, u64); 9] = [
        ("metric-oracle", metric_oracle, 1),
        ("cca-oracle", cca_oracle, 10),
        ("gradient-checks", gradient_checks, 30),
        ("overfit-sanity", overfit, 120),
        ("context-benefit", context_benefit, 300),
        ("split-fidelity", split_fidelity, 1),
        ("determinism", determinism, 180),
        ("padding-contract", padding_contract, 5),
        ("significance-sanity", significance_sanity, 10),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, run, budget) in criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if took > Duration::from_secs(budget) => Err(format!("{msg}; over the {budget} s budget")),
            o => o,
        };
        match outcome {
            Ok(msg) => println!("PASS {name} ({:.2} s): {msg}", took.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name} ({:.2} s): {msg}", took.as_secs_f64());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
