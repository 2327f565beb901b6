use std::path::{Path, PathBuf};

use ctiqa::dataset::{load_manifest, Dataset, Split};
use ctiqa::feedback::FeedbackEntry;
use ctiqa::gateway::{BackendConfig, Gateway, ResponseCache};
use ctiqa::orchestrator::{
    read_jsonl, run_strategy, OrchestratorError, PredictionLine, RunConfig, Strategy, FEEDBACK_FILE, PREDICTIONS_FILE,
};
use ctiqa::synth::{write_dataset, SyntheticDatasetSpec};

fn dataset(dir: &Path) -> Dataset {
    write_dataset(dir, &SyntheticDatasetSpec::default()).unwrap();
    load_manifest(&dir.join("manifest.csv")).unwrap()
}

fn mock(cache: Option<&Path>) -> Gateway {
    Gateway::from_config(BackendConfig::mock(7), cache.map(ResponseCache::new)).unwrap()
}

/// Feedback runs land here so the acceptance suite can sweep every persisted entry.
fn sweep_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR"))
        .join("feedback-sweep")
        .join(name)
}

#[test]
fn zero_shot_sends_one_image_per_test_record() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(tmp.path());
    let out = run_strategy(Strategy::ZeroShot, &ds, &mock(None), &RunConfig::default(), None).unwrap();
    let ids: Vec<_> = ds.split(Split::Test).map(|r| r.id.clone()).collect();
    assert_eq!(
        out.set.predictions.iter().map(|p| p.id.clone()).collect::<Vec<_>>(),
        ids
    );
    assert!(out.set.predictions.iter().all(|p| p.images == 1 && p.y_hat.is_some()));
    assert_eq!(out.telemetry.backend_calls, 10);
}

#[test]
fn few_shot_sends_k_plus_one_images() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(tmp.path());
    for k in [1, 10, 34] {
        let cfg = RunConfig {
            k,
            ..RunConfig::default()
        };
        for s in [Strategy::FewShot, Strategy::Metadata] {
            let out = run_strategy(s, &ds, &mock(None), &cfg, None).unwrap();
            assert!(out.set.predictions.iter().all(|p| p.images == k + 1), "{s} k={k}");
        }
    }
}

#[test]
fn too_many_examples_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(tmp.path());
    let cfg = RunConfig {
        k: 41,
        ..RunConfig::default()
    };
    let err = run_strategy(Strategy::FewShot, &ds, &mock(None), &cfg, None).unwrap_err();
    assert!(matches!(
        err,
        OrchestratorError::NotEnoughExamples {
            requested: 41,
            available: 40
        }
    ));
}

#[test]
fn metadata_strategy_checks_every_record_first() {
    let tmp = tempfile::tempdir().unwrap();
    let mut ds = dataset(tmp.path());
    let last = ds.records.len() - 1;
    ds.records[last].noise = None;
    let gw = mock(None);
    let err = run_strategy(Strategy::Metadata, &ds, &gw, &RunConfig::default(), None).unwrap_err();
    assert!(matches!(err, OrchestratorError::MissingMetadata { ref id, .. } if *id == ds.records[last].id));
    assert_eq!(gw.telemetry().backend_calls, 0);
    // strategies without metadata do not care
    run_strategy(Strategy::FewShot, &ds, &gw, &RunConfig::default(), None).unwrap();
}

#[test]
fn feedback_warms_up_on_training_records_only() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(tmp.path());
    let dir = sweep_dir("warmup");
    let out = run_strategy(Strategy::Feedback, &ds, &mock(None), &RunConfig::default(), Some(&dir)).unwrap();
    assert_eq!(out.buffer_at_first_test, 5);
    assert_eq!(out.feedback.len(), 5);
    let persisted: Vec<FeedbackEntry> = read_jsonl(&dir.join(FEEDBACK_FILE)).unwrap();
    assert_eq!(persisted, out.feedback);
    for e in &persisted {
        assert_eq!(ds.get(&e.id).unwrap().split, Split::Train);
        assert_eq!(e.e, (e.y - e.y_hat).abs());
        assert_eq!(Some(e.y), ds.get(&e.id).unwrap().score);
    }
}

#[test]
fn interleaving_adds_training_feedback_between_tests() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(tmp.path());
    let dir = sweep_dir("interleave");
    let cfg = RunConfig {
        interleave_every: Some(2),
        buffer_cap: 6,
        ..RunConfig::default()
    };
    let out = run_strategy(Strategy::Feedback, &ds, &mock(None), &cfg, Some(&dir)).unwrap();
    // after test records 2, 4, 6 and 8; nothing follows the last one
    assert_eq!(out.feedback.len(), 5 + 4);
    assert!(out
        .feedback
        .iter()
        .all(|e| ds.get(&e.id).unwrap().split == Split::Train));
    assert_eq!(out.set.predictions.len(), 10);
}

#[test]
fn rerun_and_resume_write_identical_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = dataset(&tmp.path().join("data"));
    let cache = tmp.path().join("cache");
    for s in Strategy::ALL {
        let dir = tmp.path().join(s.as_str());
        let full = |stop_after| RunConfig {
            stop_after,
            ..RunConfig::default()
        };
        run_strategy(s, &ds, &mock(Some(&cache)), &full(None), Some(&dir)).unwrap();
        let first = std::fs::read(dir.join(PREDICTIONS_FILE)).unwrap();

        let fresh = tmp.path().join(format!("{}-fresh", s.as_str()));
        let other_cache = tmp.path().join(format!("{}-cache", s.as_str()));
        let partial = run_strategy(s, &ds, &mock(Some(&other_cache)), &full(Some(5)), Some(&fresh)).unwrap();
        assert!(partial.interrupted);
        let lines: Vec<PredictionLine> = read_jsonl(&fresh.join(PREDICTIONS_FILE)).unwrap();
        assert_eq!(lines.len(), 5);
        let resumed = run_strategy(s, &ds, &mock(Some(&other_cache)), &full(None), Some(&fresh)).unwrap();
        assert!(resumed.set.predictions[..5].iter().all(|p| p.cache_hit), "{s}");
        assert_eq!(std::fs::read(fresh.join(PREDICTIONS_FILE)).unwrap(), first, "{s}");
    }
}
