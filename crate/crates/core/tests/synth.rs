mod common;

use common::*;
use vidtag::dataset::synth_generate;
use vidtag::learners::{train_linear, LossKind, TrainConfig};
use vidtag::metrics::hamming_accuracy;
use vidtag::orchestrator::cmd_compare_modalities;

#[test]
fn noiseless_single_modality_is_linearly_separable() {
    let ds = synth_generate(&synth(200, 5, vec![modality("visual", 32, None, 0.0, 0.0)]), 3).unwrap();
    let x = &ds.modality("visual").unwrap().values;
    let cfg = TrainConfig {
        learning_rate: 0.05,
        epochs: 300,
        ..TrainConfig::default()
    };
    let model = train_linear(x, &ds.label_matrix(), LossKind::Logistic, &cfg).unwrap();
    let acc = hamming_accuracy(&model.predict_proba(x).unwrap(), &ds.targets, 0.5);
    assert_eq!(acc, 1.0);
}

#[test]
fn fully_conflicting_modality_scores_no_better_than_a_clean_one() {
    let data = synth(
        600,
        8,
        vec![modality("clean", 16, None, 1.0, 0.0), modality("conflict", 16, None, 1.0, 1.0)],
    );
    let cfg = run_config(data, 5, vec![mlp_spec("clean", 32), mlp_spec("conflict", 32)]);
    let report = cmd_compare_modalities(&cfg).unwrap();
    let clean = report.row("clean").unwrap().gap;
    let conflict = report.row("conflict").unwrap().gap;
    assert!(conflict <= clean, "conflict {conflict} vs clean {clean}");
}

#[test]
fn least_noisy_modality_has_the_best_single_gap() {
    let data = synth(
        600,
        8,
        vec![
            modality("visual", 16, None, 0.8, 0.0),
            modality("audio", 16, None, 1.6, 0.0),
            modality("text", 16, None, 2.4, 0.0),
        ],
    );
    let cfg = run_config(data, 2, vec![mlp_spec("visual", 32), mlp_spec("audio", 32), mlp_spec("text", 32)]);
    let report = cmd_compare_modalities(&cfg).unwrap();
    assert_eq!(report.rows.len(), 3);
    let best = report.rows.iter().max_by(|a, b| a.gap.total_cmp(&b.gap)).unwrap();
    assert_eq!(best.name, "visual");
}

#[test]
fn generation_is_seeded() {
    let cfg = synth(30, 4, vec![modality("visual", 5, None, 1.0, 0.2)]);
    assert_eq!(synth_generate(&cfg, 1).unwrap(), synth_generate(&cfg, 1).unwrap());
    assert_ne!(synth_generate(&cfg, 1).unwrap(), synth_generate(&cfg, 2).unwrap());
}

#[test]
fn informative_tags_bound_the_signal() {
    // A modality informative for no tag of a sample carries pure noise.
    let cfg = synth(50, 4, vec![modality("visual", 8, Some(vec![0]), 0.0, 0.0)]);
    let ds = synth_generate(&cfg, 9).unwrap();
    let x = &ds.modality("visual").unwrap().values;
    for (i, t) in ds.targets.iter().enumerate() {
        let zero = x.row(i).iter().all(|&v| v == 0.0);
        assert_eq!(zero, !t.contains(0), "sample {i}");
    }
}
