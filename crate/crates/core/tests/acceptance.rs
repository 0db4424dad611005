//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;

use common::*;
use vidtag::dataset::{
    decode_feature_file, encode_feature_file, load_feature_file, synth_generate, write_feature_file, FeatureFile,
    MultiLabelTarget, SequenceFeature,
};
use vidtag::learners::{finite_diff_check, LinearModel, LossKind, MlpModel, Mode};
use vidtag::metrics::{evaluate_probs, gap, gap_bruteforce_oracle, GapConfig, RankedPrediction};
use vidtag::orchestrator::{self, read_predictions, DatasetSource, LadderStep, RunConfig};
use vidtag::seed::rng;
use vidtag::stacking::{assign_folds, oof_meta_features, StackedModel};
use vidtag::text::{tfidf_matrix, NgramVocabulary};
use vidtag::Matrix;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    require(elapsed.as_secs_f64() < limit_secs as f64, || {
        format!("took {:.1}s, limit {limit_secs}s", elapsed.as_secs_f64())
    })
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn bits(row: &[f64]) -> Vec<u64> {
    row.iter().map(|v| v.to_bits()).collect()
}

/// Values exactly representable in the f32 on-disk format.
fn f32_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut m = random_matrix(rows, cols, seed);
    m.as_mut_slice().iter_mut().for_each(|v| *v = *v as f32 as f64);
    m
}

fn random_labels(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| if r.random_bool(0.4) { 1.0 } else { 0.0 }).collect())
        .unwrap()
}

fn gap_correctness() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2024);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let (preds, targets, top_k) = random_gap_instance(&mut r, i % 5 == 0);
        let cfg = GapConfig::with_top_k(top_k);
        let a = gap(&preds, &targets, &cfg).map_err(e)?;
        let b = gap_bruteforce_oracle(&preds, &targets, &cfg).map_err(e)?;
        worst = worst.max((a - b).abs());
    }
    require(worst <= 1e-9, || format!("max deviation from oracle {worst:e}"))?;
    let preds = vec![
        RankedPrediction::new(vec![(0, 0.9), (1, 0.6)]).map_err(e)?,
        RankedPrediction::new(vec![(2, 0.8), (3, 0.7)]).map_err(e)?,
    ];
    let targets = vec![MultiLabelTarget::new([0]), MultiLabelTarget::new([3])];
    let hand = gap(&preds, &targets, &GapConfig::default()).map_err(e)?;
    require((hand - 5.0 / 6.0).abs() <= 1e-9, || format!("hand case gave {hand}"))?;
    within(start.elapsed(), 5)?;
    Ok(format!("200 instances, max |gap - oracle| = {worst:e}; hand case {hand:.9}"))
}

fn no_leakage() -> Outcome {
    let start = Instant::now();
    let data = synth(200, 6, vec![modality("visual", 10, None, 0.5, 0.0), modality("audio", 8, None, 1.0, 0.3)]);
    let base = synth_generate(&data, 5).map_err(e)?;
    let quick = vidtag::learners::TrainConfig {
        epochs: 5,
        ..Default::default()
    };
    let specs = vec![
        vidtag::stacking::ModalitySpec::new("visual", vidtag::stacking::LearnerSpec::Logistic { train: quick.clone() }),
        vidtag::stacking::ModalitySpec::new(
            "audio",
            vidtag::stacking::LearnerSpec::Mlp {
                hidden: vec![16],
                dropout: vec![0.3],
                train: quick,
            },
        ),
    ];
    let mut checked = 0;
    for k in [2, 5] {
        let folds = assign_folds(base.n(), k, 9).map_err(e)?;
        for &i in &[0usize, 57, 199] {
            // Labels only: row i must not move at all.
            let mut relabeled = base.clone();
            let old = base.targets[i].positives()[0];
            relabeled.targets[i] = MultiLabelTarget::new([(old + 1) % 6, (old + 3) % 6]);
            // Features too: row i is then the unchanged fold model applied to
            // the new features.
            let mut mutated = relabeled.clone();
            let mut r = rng(1000 + i as u64);
            for name in ["visual", "audio"] {
                for v in mutated.modality_mut(name).map_err(e)?.values.row_mut(i) {
                    *v = r.random_range(-5.0..5.0);
                }
            }
            let fold = folds.fold_of[i];
            for spec in &specs {
                let a = oof_meta_features(&base, spec, &folds, 9).map_err(e)?;
                let b = oof_meta_features(&relabeled, spec, &folds, 9).map_err(e)?;
                let c = oof_meta_features(&mutated, spec, &folds, 9).map_err(e)?;
                let tag = || format!("k={k}, sample {i}, block {}", spec.block_name());
                require(bits(a.probs.row(i)) == bits(b.probs.row(i)), || format!("{}: OOF row changed after relabeling", tag()))?;
                require(a.fold_models[fold] == c.fold_models[fold], || format!("{}: own fold model changed", tag()))?;
                let x = mutated.modality(&spec.modality).map_err(e)?.values.select_rows(&[i]);
                let expected = a.fold_models[fold].predict_proba(&x).map_err(e)?;
                require(bits(c.probs.row(i)) == bits(expected.row(0)), || {
                    format!("{}: OOF row is not the held-out fold model's prediction", tag())
                })?;
                // The mutation must reach rows whose training split includes i.
                let other = (0..base.n()).find(|&j| folds.fold_of[j] != fold).unwrap();
                require(a.probs.row(other) != c.probs.row(other), || {
                    format!("{}: mutation had no effect on other folds", tag())
                })?;
                checked += 1;
            }
        }
    }
    within(start.elapsed(), 30)?;
    Ok(format!("{checked} (k, sample, block) cases bit-identical"))
}

fn gradient_fidelity() -> Outcome {
    let eps = 1e-5;
    let x = random_matrix(12, 5, 1);
    let y = random_labels(12, 3, 2);
    let w = random_matrix(3, 5, 3).into_vec();
    let b = vec![0.1, -0.2, 0.05];

    let logistic = LinearModel::from_parts(5, w.clone(), b.clone(), LossKind::Logistic).map_err(e)?;
    let lg = finite_diff_check(&logistic, &x, &y, eps).max_rel_error;

    // Find a point with every margin away from the hinge at 1.
    let mut hinge = None;
    for seed in 0..100 {
        let w = random_matrix(3, 5, 100 + seed).into_vec();
        let m = LinearModel::from_parts(5, w, b.clone(), LossKind::SquaredHinge).map_err(e)?;
        let z = m.decision_function(&x).map_err(e)?;
        let clear = z
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .all(|(z, y)| ((if *y > 0.5 { 1.0 } else { -1.0 }) * z - 1.0).abs() > 1e-3);
        if clear {
            hinge = Some(m);
            break;
        }
    }
    let hinge = hinge.ok_or("no off-boundary point found")?;
    let hg = finite_diff_check(&hinge, &x, &y, eps).max_rel_error;

    let mlp = MlpModel::new(5, &[7, 6], 3, &[], 4).map_err(e)?;
    let mg = finite_diff_check(&mlp, &x, &y, eps).max_rel_error;
    for (name, err) in [("logistic", lg), ("squared-hinge", hg), ("mlp", mg)] {
        require(err < 1e-4, || format!("{name} max relative error {err:e}"))?;
    }
    Ok(format!("max rel error logistic {lg:.1e}, squared-hinge {hg:.1e}, 3-layer mlp {mg:.1e}"))
}

fn tfidf_correctness() -> Outcome {
    let corpus = vec![tokens("a b"), tokens("a c")];
    let vocab = NgramVocabulary::build(&corpus, 1).map_err(e)?;
    let v = vocab.transform(&tokens("a b"));
    let w = |g: &str| v.weight(vocab.index_of(&tokens(g)).unwrap());
    for (g, expected) in [("a", 0.4494), ("b", 0.6317), ("a b", 0.6317)] {
        require((w(g) - expected).abs() < 1e-3, || format!("weight of {g:?} is {}", w(g)))?;
    }
    let mut r = rng(77);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let corpus = random_corpus(&mut r);
        let min_df = r.random_range(1..=2);
        let vocab = NgramVocabulary::build(&corpus, min_df).map_err(e)?;
        let (oracle_vocab, oracle_rows) = tfidf_oracle(&corpus, min_df, &corpus);
        let ours: Vec<Vec<String>> = vocab.entries().iter().map(|x| x.ngram.clone()).collect();
        require(ours == oracle_vocab, || "vocabulary differs from oracle".into())?;
        let m = tfidf_matrix(&corpus, &vocab);
        for (i, row) in oracle_rows.iter().enumerate() {
            for (a, b) in m.row(i).iter().zip(row) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    require(worst <= 1e-9, || format!("max deviation from oracle {worst:e}"))?;
    Ok(format!("worked example within 1e-3; 100 corpora max deviation {worst:e}"))
}

fn stacking_gain() -> Outcome {
    let mut cfg = complementary_config();
    cfg.out_dir = std::env::temp_dir().to_string_lossy().into_owned();
    cfg.ladder = vec![
        LadderStep {
            name: None,
            blocks: vec!["visual".into()],
            extra: false,
        },
        LadderStep {
            name: None,
            blocks: vec!["visual".into(), "audio".into()],
            extra: false,
        },
    ];
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(e)?;
    let start = Instant::now();
    let (singles, ladder) = pool.install(|| -> Result<_, String> {
        Ok((
            orchestrator::cmd_compare_modalities(&cfg).map_err(e)?,
            orchestrator::cmd_compare_combinations(&cfg).map_err(e)?,
        ))
    })?;
    let elapsed = start.elapsed();
    let best_single = singles.rows.iter().map(|r| r.gap).fold(f64::MIN, f64::max);
    let stacked = ladder.rows.last().unwrap().gap;
    let steps: Vec<f64> = ladder.rows.windows(2).map(|w| w[1].gap - w[0].gap).collect();
    let summary = format!(
        "best single {best_single:.4}, stacked {stacked:.4}, ladder {:?}, {:.0}s",
        ladder.rows.iter().map(|r| format!("{}={:.4}", r.name, r.gap)).collect::<Vec<_>>(),
        elapsed.as_secs_f64()
    );
    require(stacked - best_single >= 0.02, || format!("gain below 0.02: {summary}"))?;
    require(steps.iter().all(|&d| d >= -0.005), || format!("ladder decreases: {summary}"))?;
    within(elapsed, 300)?;
    Ok(summary)
}

fn fusion_comparison() -> Outcome {
    let mut cfg = conflict_config();
    cfg.out_dir = std::env::temp_dir().to_string_lossy().into_owned();
    let start = Instant::now();
    let report = orchestrator::cmd_compare_fusion(&cfg).map_err(e)?;
    let elapsed = start.elapsed();
    let names: Vec<&str> = report.rows.iter().map(|r| r.name.as_str()).collect();
    require(names == ["stacked", "concat", "sum_pool", "max_pool", "attention"], || {
        format!("unexpected rows {names:?}")
    })?;
    let stacked = report.row("stacked").unwrap().gap;
    let concat = report.row("concat").unwrap().gap;
    let summary = format!(
        "{}, {:.0}s",
        report.rows.iter().map(|r| format!("{}={:.4}", r.name, r.gap)).collect::<Vec<_>>().join(" "),
        elapsed.as_secs_f64()
    );
    require(stacked >= concat, || format!("stacked below concat: {summary}"))?;
    within(elapsed, 600)?;
    Ok(summary)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|f| {
            let p = f.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(e)?;
    let root = tmp.path();
    let cfg = tiny_config(&root.join("out").to_string_lossy());
    let DatasetSource::Synth(data) = &cfg.dataset else { unreachable!() };

    orchestrator::cmd_synth(data, 3, &root.join("d1")).map_err(e)?;
    orchestrator::cmd_synth(data, 3, &root.join("d2")).map_err(e)?;
    require(dir_bytes(&root.join("d1")) == dir_bytes(&root.join("d2")), || "synth output differs".into())?;

    type Cmd = fn(&RunConfig) -> vidtag::Result<orchestrator::EvalReport>;
    let commands: [(&str, Cmd); 3] = [
        ("compare-modalities", orchestrator::cmd_compare_modalities),
        ("compare-combinations", orchestrator::cmd_compare_combinations),
        ("compare-fusion", orchestrator::cmd_compare_fusion),
    ];
    for (name, cmd) in commands {
        let a = cmd(&cfg).map_err(e)?;
        let b = cmd(&cfg).map_err(e)?;
        require(numbers_only(&a) == numbers_only(&b), || format!("{name} report differs"))?;
        require(a.to_csv() == b.to_csv(), || format!("{name} csv differs"))?;
    }

    let mut manifest_cfg = cfg.clone();
    manifest_cfg.dataset = DatasetSource::Manifest(root.join("d1/manifest.json").to_string_lossy().into_owned());
    let a = orchestrator::cmd_train(&manifest_cfg, &root.join("m1")).map_err(e)?;
    let b = orchestrator::cmd_train(&manifest_cfg, &root.join("m2")).map_err(e)?;
    require(numbers_only(&a) == numbers_only(&b), || "train report differs".into())?;
    require(dir_bytes(&root.join("m1")) == dir_bytes(&root.join("m2")), || "model bundles differ".into())?;

    let manifest = root.join("d1/manifest.json");
    orchestrator::cmd_predict(&root.join("m1"), &manifest, 20, &root.join("p1.jsonl")).map_err(e)?;
    orchestrator::cmd_predict(&root.join("m2"), &manifest, 20, &root.join("p2.jsonl")).map_err(e)?;
    let p1 = std::fs::read(root.join("p1.jsonl")).map_err(e)?;
    require(p1 == std::fs::read(root.join("p2.jsonl")).map_err(e)?, || "prediction files differ".into())?;
    let s1 = orchestrator::cmd_score(&root.join("p1.jsonl"), &manifest, &cfg.metric).map_err(e)?;
    let s2 = orchestrator::cmd_score(&root.join("p2.jsonl"), &manifest, &cfg.metric).map_err(e)?;
    require(numbers_only(&s1) == numbers_only(&s2), || "score report differs".into())?;
    Ok("synth, compare-*, train, predict and score reproduce byte-identically".into())
}

fn dropout_contract() -> Outcome {
    let p = 0.3;
    let model = MlpModel::new(4, &[8], 2, &[p], 21).map_err(e)?;
    let x = random_matrix(1, 4, 5);
    let eval = model.predict_proba(&x).map_err(e)?;
    require(eval == model.predict_proba(&x).map_err(e)?, || "eval predictions vary".into())?;
    let mut r = rng(0);
    let with_rng = model.forward_cache(&x, Mode::Eval, Some(&mut r));
    require(with_rng.logits == model.logits(&x), || "eval mode consumed randomness".into())?;

    let h = model.forward_cache(&x, Mode::Eval, None).inputs[1].clone();
    let draws = 10_000;
    let mut sum = vec![0.0; h.cols()];
    let mut r = rng(99);
    for _ in 0..draws {
        let c = model.forward_cache(&x, Mode::Train, Some(&mut r));
        for (s, v) in sum.iter_mut().zip(c.inputs[1].as_slice()) {
            *s += v;
        }
    }
    let mut worst: f64 = 0.0;
    for (j, &hj) in h.as_slice().iter().enumerate() {
        let mean = sum[j] / draws as f64;
        // Each draw is hj/(1-p) with probability 1-p, else 0.
        let se = hj * (p / (1.0 - p)).sqrt() / (draws as f64).sqrt();
        if se == 0.0 {
            require(mean == 0.0, || format!("unit {j}: inactive unit averaged to {mean}"))?;
        } else {
            let z = (mean - hj).abs() / se;
            worst = worst.max(z);
            require(z <= 3.0, || format!("unit {j}: mean {mean} vs {hj}, {z:.2} standard errors"))?;
        }
    }
    Ok(format!("eval deterministic; {draws} masks, worst deviation {worst:.2} standard errors"))
}

fn file_round_trips() -> Outcome {
    let tmp = tempfile::tempdir().map_err(e)?;
    let root = tmp.path();

    let mut r = rng(8);
    let samples: Vec<SequenceFeature> = (0..5)
        .map(|_| {
            let t = r.random_range(1..6);
            SequenceFeature {
                frames: f32_matrix(t, 3, r.random()),
            }
        })
        .collect();
    for (name, file) in [
        ("matrix.mmfb", FeatureFile::Matrix(f32_matrix(100, 16, 1))),
        ("seq.mmfb", FeatureFile::Sequences { dim: 3, samples }),
    ] {
        let path = root.join(name);
        write_feature_file(&path, &file).map_err(e)?;
        let first = std::fs::read(&path).map_err(e)?;
        let back = load_feature_file(&path).map_err(e)?;
        require(back == file, || format!("{name}: values changed"))?;
        require(encode_feature_file(&decode_feature_file(&first).map_err(e)?) == first, || {
            format!("{name}: bytes changed")
        })?;
    }

    let cfg = tiny_config(&root.join("out").to_string_lossy());
    let DatasetSource::Synth(data) = &cfg.dataset else { unreachable!() };
    orchestrator::cmd_synth(data, 3, &root.join("data")).map_err(e)?;
    let manifest = root.join("data/manifest.json");
    let mut mcfg = cfg.clone();
    mcfg.dataset = DatasetSource::Manifest(manifest.to_string_lossy().into_owned());
    orchestrator::cmd_train(&mcfg, &root.join("m1")).map_err(e)?;
    let model = StackedModel::load(&root.join("m1")).map_err(e)?;
    model.save(&root.join("m2")).map_err(e)?;
    require(dir_bytes(&root.join("m1")) == dir_bytes(&root.join("m2")), || "model bundle bytes changed".into())?;

    let pred = root.join("pred.jsonl");
    orchestrator::cmd_predict(&root.join("m1"), &manifest, cfg.metric.top_k, &pred).map_err(e)?;
    let lines = read_predictions(&pred).map_err(e)?;
    let rewritten: String = lines.iter().map(|l| serde_json::to_string(l).unwrap() + "\n").collect();
    require(rewritten.as_bytes() == std::fs::read(&pred).map_err(e)?, || "prediction file bytes changed".into())?;

    let offline = orchestrator::cmd_score(&pred, &manifest, &cfg.metric).map_err(e)?;
    let dataset = mcfg.load_dataset().map_err(e)?;
    let labeled = dataset.subset(&dataset.labeled_indices());
    let probs = model.predict_dataset(&labeled).map_err(e)?;
    let inproc = evaluate_probs("score", &probs, &labeled.targets, &cfg.metric, labeled.vocabulary.categories())
        .map_err(e)?;
    require(offline.rows[0] == inproc, || format!("offline {:?} vs in-process {inproc:?}", offline.rows[0]))?;
    Ok(format!(
        "feature, model and prediction files byte-stable; offline score equals in-process (gap {:.6})",
        inproc.gap
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("GAP correctness", gap_correctness),
        ("no-leakage stacking", no_leakage),
        ("gradient fidelity", gradient_fidelity),
        ("tf-idf correctness", tfidf_correctness),
        ("stacking gain", stacking_gain),
        ("fusion comparison", fusion_comparison),
        ("determinism", determinism),
        ("dropout contract", dropout_contract),
        ("file round-trips", file_round_trips),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
