// SPDX-License-Identifier: Apache-2.0

use biasamp::dataset::{synth_generate, DatasetManifest, Group, Split, SynthShapesSpec};
use biasamp::eval::{evaluate, evaluate_tensors, export_embeddings, read_embeddings, PENULTIMATE};
use biasamp::gce::{train, ClassifierConfig, LossMode, ModelRole, TensorSet};
use biasamp::nn::{Architecture, Network};

fn shapes(dir: &std::path::Path) -> DatasetManifest {
    synth_generate(&SynthShapesSpec::new(4, 0.05, 80, 40, 2), dir).unwrap()
}

#[test]
fn constant_predictor_scores_chance_on_a_balanced_split() {
    let dir = tempfile::tempdir().unwrap();
    let m = shapes(dir.path());
    let mut net = Network::new(Architecture::SoftmaxLinear, 8, 4, 0).unwrap();
    let zeros = vec![0.0; net.num_parameters()];
    net.set_flat_params(&zeros);
    let data = TensorSet::load(&m, Split::Test, 8).unwrap();
    let r = evaluate_tensors(&net, &data, &m, 2).unwrap();
    assert_eq!(r.overall_acc, 0.25);
    assert_eq!(r.aligned_acc, Some(0.25));
    assert_eq!(r.conflict_acc, Some(0.25));
    assert_eq!(r.per_class_acc, vec![Some(1.0), Some(0.0), Some(0.0), Some(0.0)]);
}

#[test]
fn counts_are_consistent_and_balanced_groups_average() {
    let dir = tempfile::tempdir().unwrap();
    let m = shapes(dir.path());
    let mut cfg = ClassifierConfig::desk_scale(LossMode::Ce);
    cfg.input_size = 8;
    cfg.epochs = 2;
    let model = train(&m, &cfg, ModelRole::Vanilla).unwrap();
    let r = evaluate(&model, &m, Split::Test).unwrap();
    assert_eq!(r.n_test, 40);
    assert_eq!(r.n_aligned, r.n_conflict);
    assert_eq!(r.overall_acc * r.n_test as f64, r.n_correct as f64);
    assert_eq!(r.n_correct, r.aligned_correct + r.conflict_correct);
    let mean = (r.aligned_acc.unwrap() + r.conflict_acc.unwrap()) / 2.0;
    assert!((r.overall_acc - mean).abs() < 1e-15);

    // Per-class rates recombine into the overall count.
    let per_class: f64 = r.per_class_acc.iter().map(|a| a.unwrap() * 10.0).sum();
    assert!((per_class - r.n_correct as f64).abs() < 1e-9);
}

#[test]
fn embedding_export_is_deterministic_and_self_describing() {
    let dir = tempfile::tempdir().unwrap();
    let m = shapes(&dir.path().join("d"));
    let mut cfg = ClassifierConfig::desk_scale(LossMode::Gce);
    cfg.input_size = 8;
    cfg.epochs = 1;
    let model = train(&m, &cfg, ModelRole::Biased).unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let (header, records) = export_embeddings(&model, &m, Split::Test, PENULTIMATE, &a).unwrap();
    export_embeddings(&model, &m, Split::Test, PENULTIMATE, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(header.width, model.network.feature_width().unwrap());
    assert_eq!(records.len(), 40);
    assert!(records.iter().all(|r| r.group != Group::Unknown));
    assert_eq!(read_embeddings(&a).unwrap(), (header, records));
    assert!(export_embeddings(&model, &m, Split::Test, "conv1", &a).is_err());
}
