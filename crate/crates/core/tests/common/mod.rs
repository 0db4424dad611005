//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use vidtag::dataset::{SynthConfig, SynthModality};
use vidtag::learners::TrainConfig;
use vidtag::metrics::RankedPrediction;
use vidtag::orchestrator::{DatasetSource, RunConfig};
use vidtag::stacking::{LearnerSpec, MetaSpec, ModalitySpec};

pub fn modality(name: &str, dim: usize, tags: Option<Vec<usize>>, sigma: f64, conflict: f64) -> SynthModality {
    SynthModality {
        name: name.into(),
        dim,
        informative_tags: tags,
        noise_sigma: sigma,
        conflict_rate: conflict,
        frames: None,
    }
}

pub fn synth(n: usize, num_tags: usize, modalities: Vec<SynthModality>) -> SynthConfig {
    SynthConfig {
        n,
        num_tags,
        modalities,
        extra_dim: 3,
        second_tag_prob: 0.3,
        text: None,
        categories: None,
        folds: 5,
    }
}

pub fn mlp_spec(modality: &str, hidden: usize) -> ModalitySpec {
    ModalitySpec::new(
        modality,
        LearnerSpec::Mlp {
            hidden: vec![hidden],
            dropout: vec![0.3],
            train: TrainConfig::default(),
        },
    )
}

pub fn run_config(synth: SynthConfig, seed: u64, specs: Vec<ModalitySpec>) -> RunConfig {
    let mut cfg = RunConfig::new(DatasetSource::Synth(synth));
    cfg.seed = seed;
    cfg.modalities = specs;
    cfg
}

/// Two modalities, each informative for a disjoint half of 20 tags.
pub fn complementary_config() -> RunConfig {
    let halves = (0..10).collect::<Vec<_>>();
    let rest = (10..20).collect::<Vec<_>>();
    let data = synth(
        2000,
        20,
        vec![
            modality("visual", 32, Some(halves), 1.0, 0.0),
            modality("audio", 32, Some(rest), 1.0, 0.0),
        ],
    );
    run_config(data, 7, vec![mlp_spec("visual", 64), mlp_spec("audio", 64)])
}

/// Complementary halves where the visual modality's signal is replaced by a
/// wrong tag's signature half of the time.
pub fn conflict_config() -> RunConfig {
    let halves = (0..10).collect::<Vec<_>>();
    let rest = (10..20).collect::<Vec<_>>();
    let data = synth(
        1500,
        20,
        vec![
            modality("visual", 32, Some(halves), 1.0, 0.5),
            modality("audio", 32, Some(rest), 1.0, 0.0),
        ],
    );
    run_config(data, 7, vec![mlp_spec("visual", 64), mlp_spec("audio", 64)])
}

/// A config small enough to run every command in a couple of seconds.
pub fn tiny_config(out_dir: &str) -> RunConfig {
    let data = synth(
        120,
        6,
        vec![modality("visual", 8, None, 0.5, 0.0), modality("audio", 6, None, 1.0, 0.2)],
    );
    let quick = TrainConfig {
        epochs: 5,
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let mut cfg = run_config(
        data,
        11,
        vec![
            ModalitySpec::new("visual", LearnerSpec::Logistic { train: quick.clone() }),
            ModalitySpec::new(
                "audio",
                LearnerSpec::Mlp {
                    hidden: vec![8],
                    dropout: vec![0.2],
                    train: quick.clone(),
                },
            ),
        ],
    );
    cfg.folds = 3;
    cfg.meta = MetaSpec {
        hidden: vec![16, 8],
        dropout: vec![0.3],
        train: quick.clone(),
    };
    cfg.fusion.model.hidden = vec![16];
    cfg.fusion.model.train = quick;
    cfg.out_dir = out_dir.to_string();
    cfg
}

/// Random ranked predictions and targets with at least one positive.
pub fn random_gap_instance(rng: &mut ChaCha8Rng, all_ties: bool) -> (Vec<RankedPrediction>, Vec<vidtag::dataset::MultiLabelTarget>, usize) {
    loop {
        let n = rng.random_range(1..=10);
        let t = rng.random_range(1..=8);
        let top_k = rng.random_range(1..=3);
        let tie = rng.random_range(0..4) as f64 / 4.0;
        let mut preds = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            // Coarse confidences make ties common even when not forced.
            let scores: Vec<f64> = (0..t)
                .map(|_| if all_ties { tie } else { rng.random_range(0..5) as f64 / 4.0 })
                .collect();
            preds.push(RankedPrediction::from_scores(&scores, top_k));
            let pos: Vec<usize> = (0..t).filter(|_| rng.random_bool(0.3)).collect();
            targets.push(vidtag::dataset::MultiLabelTarget::new(pos));
        }
        if targets.iter().any(|x| !x.is_empty()) {
            return (preds, targets, top_k);
        }
    }
}

pub fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

pub fn random_corpus(rng: &mut ChaCha8Rng) -> Vec<Vec<String>> {
    let docs = rng.random_range(1..=6);
    let words = ["a", "b", "c", "d", "e", "f"];
    (0..docs)
        .map(|_| {
            let len = rng.random_range(0..=8);
            (0..len).map(|_| words[rng.random_range(0..words.len())].to_string()).collect()
        })
        .collect()
}

/// Straightforward tf-idf over unigrams and bigrams keyed by space-joined
/// strings. Returns the sorted vocabulary and one dense row per document.
pub fn tfidf_oracle(corpus: &[Vec<String>], min_df: usize, docs: &[Vec<String>]) -> (Vec<Vec<String>>, Vec<Vec<f64>>) {
    fn grams(doc: &[String]) -> Vec<Vec<String>> {
        let mut g: Vec<Vec<String>> = doc.iter().map(|w| vec![w.clone()]).collect();
        for i in 1..doc.len() {
            g.push(vec![doc[i - 1].clone(), doc[i].clone()]);
        }
        g
    }
    let mut df: HashMap<Vec<String>, usize> = HashMap::new();
    for doc in corpus {
        let unique: HashSet<Vec<String>> = grams(doc).into_iter().collect();
        for g in unique {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let mut vocab: Vec<Vec<String>> = df.iter().filter(|(_, &c)| c >= min_df).map(|(g, _)| g.clone()).collect();
    vocab.sort();
    let n = corpus.len() as f64;
    let rows = docs
        .iter()
        .map(|doc| {
            let mut tf: BTreeMap<&Vec<String>, f64> = BTreeMap::new();
            let gs = grams(doc);
            for g in &gs {
                *tf.entry(g).or_insert(0.0) += 1.0;
            }
            let mut row: Vec<f64> = vocab
                .iter()
                .map(|g| tf.get(g).copied().unwrap_or(0.0) * (((1.0 + n) / (1.0 + df[g] as f64)).ln() + 1.0))
                .collect();
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
            row
        })
        .collect();
    (vocab, rows)
}

/// Report bytes with the wall-clock block removed.
pub fn numbers_only(report: &vidtag::orchestrator::EvalReport) -> String {
    let mut v = serde_json::to_value(report).unwrap();
    v.as_object_mut().unwrap().remove("timing");
    serde_json::to_string_pretty(&v).unwrap()
}
