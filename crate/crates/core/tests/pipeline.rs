// SPDX-License-Identifier: Apache-2.0

use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use biasamp::caption::{CaptionError, CaptionRequest, Captioned, Captioner, CaptionerDescriptor};
use biasamp::dataset::SynthShapesSpec;
use biasamp::filter::WordBudget;
use biasamp::generate::GenerationTarget;
use biasamp::pipeline::{
    read_metrics_file, run_all, BackendRegistry, ExperimentConfig, Pipeline, RunRecord, Stage, StageStatus,
};
use biasamp::Error;

fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 3;
    cfg.dataset.synth = Some(SynthShapesSpec::new(3, 0.05, 120, 30, 0));
    for c in [&mut cfg.biased, &mut cfg.debiased] {
        c.input_size = 8;
        c.epochs = 1;
    }
    cfg.extraction.k = 10;
    cfg.generation.size = 16;
    cfg.generation.target = GenerationTarget::Count(30);
    cfg.eval.trials = 1;
    cfg.eval.purity_at = vec![5];
    cfg
}

fn open(cfg: ExperimentConfig, dir: &Path) -> Pipeline {
    Pipeline::open(cfg, dir, BackendRegistry::default()).unwrap()
}

#[test]
fn extract_before_training_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = open(tiny_config(), dir.path());
    p.run_stage(Stage::Synth, 0).unwrap();
    match p.run_stage(Stage::Extract, 0) {
        Err(Error::MissingUpstream { stage, upstream }) => {
            assert_eq!(stage, "extract");
            assert_eq!(upstream, "train-biased");
        }
        other => panic!("expected missing upstream, got {other:?}"),
    }
}

#[test]
fn unchanged_rerun_is_cached_and_tampering_forces_recompute() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = open(tiny_config(), dir.path());
    assert_eq!(p.run_stage(Stage::Synth, 0).unwrap().status, StageStatus::Completed);
    assert_eq!(p.run_stage(Stage::TrainBiased, 0).unwrap().status, StageStatus::Completed);
    let before = p.record().get("trial-0/train-biased").unwrap().output_hash.clone();
    assert_eq!(p.run_stage(Stage::TrainBiased, 0).unwrap().status, StageStatus::Cached);

    std::fs::write(dir.path().join("trial-0/biased/model.ckpt"), b"garbage").unwrap();
    assert_eq!(p.run_stage(Stage::TrainBiased, 0).unwrap().status, StageStatus::Completed);
    assert_eq!(p.record().get("trial-0/train-biased").unwrap().output_hash, before);
}

#[test]
fn unregistered_backend_is_rejected_before_any_compute() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let mut cfg = tiny_config();
    cfg.generation.backend = "diffusion-xl".into();
    match run_all(cfg, &run_dir, BackendRegistry::default(), false) {
        Err(Error::UnregisteredBackend { kind, id }) => assert_eq!((kind, id.as_str()), ("generator", "diffusion-xl")),
        other => panic!("expected unregistered backend, got {other:?}"),
    }
    assert!(!run_dir.exists());
}

struct Down;

impl Captioner for Down {
    fn descriptor(&self) -> CaptionerDescriptor {
        CaptionerDescriptor {
            id: "down".into(),
            deterministic: true,
        }
    }

    fn caption(&self, _: &CaptionRequest) -> Result<Captioned, CaptionError> {
        Err(CaptionError::Unavailable("connection refused".into()))
    }
}

#[test]
fn full_run_then_resume_after_failure_and_config_change() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");

    // A dead captioner fails the caption stage and leaves the run resumable.
    let mut cfg = tiny_config();
    cfg.caption.backend = "down".into();
    let mut registry = BackendRegistry::default();
    registry.register_captioner("down", || Ok(Arc::new(Down)));
    match run_all(cfg, &run, registry, false) {
        Err(Error::StageFailed { stage, message }) => {
            assert_eq!(stage, "trial-0/caption");
            assert!(message.contains("connection refused"), "{message}");
        }
        other => panic!("expected stage failure, got {other:?}"),
    }
    let rec = RunRecord::load(&run).unwrap();
    assert_eq!(rec.get("trial-0/caption").unwrap().status, StageStatus::Failed);
    assert!(run_all(tiny_config(), &run, BackendRegistry::default(), false).is_err());

    let rec = run_all(tiny_config(), &run, BackendRegistry::default(), true).unwrap();
    for key in ["synth", "trial-0/train-biased", "trial-0/extract"] {
        assert_eq!(rec.get(key).unwrap().status, StageStatus::Cached, "{key}");
    }
    assert_eq!(rec.get("trial-0/caption").unwrap().status, StageStatus::Completed);
    let metrics = read_metrics_file(&run.join("report/metrics.txt")).unwrap();
    for key in ["mean.debiased.overall_acc", "mean.vanilla.conflict_acc", "trial0.extraction.purity_at.5"] {
        assert!(metrics.contains_key(key), "{key}");
    }
    assert_eq!(metrics["trial0.generation.generated"], "30");
    let csv = std::fs::read_to_string(run.join("report/comparison.csv")).unwrap();
    assert!(csv.starts_with("run,overall_acc,aligned_acc,conflict_acc,delta:overall_acc,delta:conflict_acc\n"));
    assert_eq!(csv.lines().count(), 4);
    assert!(run.join("report/energy.csv").is_file());
    assert!(run.join("trial-0/evaluate/embeddings-debiased.jsonl").is_file());

    // Changing the filter budget re-runs the filter and what follows it only.
    let mut cfg = tiny_config();
    cfg.filter.f = WordBudget::Fixed(2);
    let rec = run_all(cfg, &run, BackendRegistry::default(), true).unwrap();
    for key in ["trial-0/train-vanilla", "trial-0/caption"] {
        assert_eq!(rec.get(key).unwrap().status, StageStatus::Cached, "{key}");
    }
    assert_eq!(rec.get("trial-0/filter").unwrap().status, StageStatus::Completed);
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), &target).unwrap();
        }
    }
}

#[test]
fn report_reruns_offline_from_a_copied_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let original = dir.path().join("a");
    run_all(tiny_config(), &original, BackendRegistry::default(), false).unwrap();
    let copy = dir.path().join("b");
    copy_dir(&original, &copy);
    std::fs::remove_dir_all(&original).unwrap();
    std::fs::remove_dir_all(copy.join("report")).unwrap();

    // An empty registry proves no backend is touched.
    let cfg = RunRecord::load(&copy).unwrap().config;
    let mut registry = BackendRegistry::empty();
    registry.register_captioner("oracle", || panic!("captioner constructed"));
    registry.register_generator("oracle", || panic!("generator constructed"));
    let mut p = Pipeline::open(cfg, &copy, registry).unwrap();
    assert_eq!(p.run_stage(Stage::Report, 0).unwrap().status, StageStatus::Completed);
    assert!(copy.join("report/metrics.txt").is_file());
}

#[test]
fn cli_runs_single_stages_and_reports_missing_upstream() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    std::fs::write(&config, tiny_config().to_toml()).unwrap();
    let run_dir = dir.path().join("run");
    let bin = env!("CARGO_BIN_EXE_biasamp");
    let run = |args: &[&str]| {
        Command::new(bin)
            .args(args)
            .arg("--config")
            .arg(&config)
            .arg("--run-dir")
            .arg(&run_dir)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    };

    let out = run(&["synth"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("synth\tCompleted"));

    let out = run(&["extract", "--trials", "2"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("train-biased"));

    let out = run(&["synth"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("synth\tCached"));
}
