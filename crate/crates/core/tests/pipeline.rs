mod common;

use std::path::Path;
use std::sync::Arc;

use xdcl::augment::{AugmentMethod, AugmentationConfig, Augmenter};
use xdcl::checkpoint::{load_checkpoint, read_manifest};
use xdcl::corpus::{Document, Label, LabeledDocument};
use xdcl::evalviz::{evaluate, export_projection, DomainRole, PcaReducer, ProjectionExport, TsneReducer};
use xdcl::strategy::StrategyConfig;
use xdcl::synthetic::{generate, toy_network, SyntheticConfig, SyntheticData, TransferRun};
use xdcl::trainer::{checkpoint_dir, read_metrics, train, TrainConfig, TrainData, TrainOptions, TrainOutcome};
use xdcl::Error;

fn data(seed: u64) -> SyntheticData {
    generate(&SyntheticConfig {
        n_source: 96,
        n_target: 128,
        n_target_test: 64,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

fn augmenter(data: &SyntheticData) -> Augmenter {
    let config = AugmentationConfig {
        method: AugmentMethod::SynonymSubstitution,
        ..AugmentationConfig::default()
    };
    Augmenter::synonyms(config, Arc::new(data.lexicon.clone())).unwrap()
}

fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        learning_rate: 5e-3,
        strategy: StrategyConfig::pooled_entropy(),
        ..TrainConfig::default()
    }
}

fn run(data: &SyntheticData, config: &TrainConfig, out: &Path, resume: Option<&Path>, hash: &str) -> xdcl::Result<TrainOutcome> {
    let aug = augmenter(data);
    let network = toy_network(TransferRun::toy(config.strategy, config.seed).encoder, config.seed).unwrap();
    train(
        network,
        &TrainData {
            source: &data.source.labeled,
            target: &data.target.unlabeled,
            augmenter: &aug,
        },
        config,
        &TrainOptions {
            out_dir: out.to_path_buf(),
            config_hash: hash.to_string(),
            resume_from: resume.map(Path::to_path_buf),
            encoder_features: None,
        },
    )
}

fn hidden_labeled(data: &SyntheticData) -> Vec<LabeledDocument> {
    data.target
        .unlabeled
        .iter()
        .zip(&data.target_hidden_labels)
        .map(|(d, &l)| LabeledDocument::new(d.clone(), l))
        .collect()
}

#[test]
fn training_writes_epoch_checkpoints_and_metrics() {
    let d = data(3);
    let cfg = config(3);
    let dir = tempfile::tempdir().unwrap();
    let outcome = run(&d, &cfg, dir.path(), None, &cfg.hash()).unwrap();

    for epoch in 1..=4 {
        let manifest = read_manifest(checkpoint_dir(dir.path(), epoch)).unwrap();
        assert_eq!(manifest.epoch, epoch);
        assert_eq!(manifest.config_hash, cfg.hash());
        assert!(checkpoint_dir(dir.path(), epoch).join("train_config.json").exists());
    }
    let records = read_metrics(&outcome.metrics_path).unwrap();
    assert_eq!(records.len(), 4 * 8);
    assert_eq!(records.len(), outcome.reports.len());
    assert!(records.iter().all(|r| r.total.is_finite()));
    let steps: Vec<u64> = records.iter().map(|r| r.step).collect();
    assert!(steps.windows(2).all(|w| w[1] == w[0] + 1));

    let restored = load_checkpoint(&outcome.final_checkpoint).unwrap();
    let docs: Vec<&Document> = d.target_test.iter().map(|x| &x.base).collect();
    let a = xdcl::evalviz::hidden_features(&outcome.network, &docs).unwrap();
    let b = xdcl::evalviz::hidden_features(&restored.network, &docs).unwrap();
    assert_eq!(a, b);

    let report = evaluate(&restored, &d.target_test).unwrap();
    assert_eq!(report.n_total, d.target_test.len());
    assert_eq!(report.config_hash, cfg.hash());
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let d = data(4);
    let cfg = config(4);
    let full = tempfile::tempdir().unwrap();
    run(&d, &cfg, full.path(), None, &cfg.hash()).unwrap();

    let partial = tempfile::tempdir().unwrap();
    run(&d, &cfg, partial.path(), None, &cfg.hash()).unwrap();
    let resumed = run(&d, &cfg, partial.path(), Some(&checkpoint_dir(partial.path(), 2)), &cfg.hash()).unwrap();
    assert_eq!(resumed.reports.len(), 16);

    let log_full = std::fs::read(full.path().join("metrics.jsonl")).unwrap();
    let log_resumed = std::fs::read(partial.path().join("metrics.jsonl")).unwrap();
    assert_eq!(log_full, log_resumed);
}

#[test]
fn resuming_with_a_different_config_is_refused() {
    let d = data(5);
    let cfg = config(5);
    let dir = tempfile::tempdir().unwrap();
    run(&d, &cfg, dir.path(), None, &cfg.hash()).unwrap();
    let changed = TrainConfig {
        weight_decay: 0.1,
        ..cfg.clone()
    };
    let err = run(&d, &changed, dir.path(), Some(&checkpoint_dir(dir.path(), 1)), &changed.hash()).unwrap_err();
    assert!(matches!(err, Error::ManifestMismatch(_)), "{err}");
}

#[test]
fn projection_export_covers_every_document_and_group() {
    let d = generate(&SyntheticConfig {
        n_source: 200,
        n_target: 200,
        n_target_test: 2,
        seed: 6,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let network = toy_network(TransferRun::toy(StrategyConfig::pooled_entropy(), 6).encoder, 6).unwrap();
    let target = hidden_labeled(&d);
    let reducer = TsneReducer {
        epochs: 250,
        seed: 6,
        ..TsneReducer::default()
    };
    let export = export_projection(&network, &d.source.labeled, &target, &reducer).unwrap();
    assert_eq!(export.rows.len(), 400);
    assert_eq!(export.groups().len(), 4);
    assert!(export.rows.iter().all(|r| r.x.is_finite() && r.y.is_finite()));
    assert_eq!(export.rows[0].domain, DomainRole::Source);
    assert_eq!(export.rows[399].domain, DomainRole::Target);
    assert_eq!(export.rows[0].label, d.source.labeled[0].label);

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("projection.csv");
    export.write_csv(&csv).unwrap();
    let rows = ProjectionExport::read_csv(&csv).unwrap();
    assert_eq!(rows.len(), 400);
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("x,y,domain,label\n"));
    let svg = export.render_svg(400);
    assert_eq!(svg.matches("<circle").count(), 400);

    let again = export_projection(&network, &d.source.labeled, &target, &reducer).unwrap();
    assert_eq!(again.rows, export.rows);
}

#[test]
fn reducer_failures_echo_parameters() {
    let d = data(7);
    let network = toy_network(TransferRun::toy(StrategyConfig::pooled_entropy(), 7).encoder, 7).unwrap();
    let few = &d.source.labeled[..10];
    let reducer = TsneReducer::default();
    match export_projection(&network, few, &[], &reducer) {
        Err(Error::Reducer { params, .. }) => assert!(params.contains("perplexity=30"), "{params}"),
        other => panic!("expected reducer error, got {other:?}"),
    }
    let pca = export_projection(&network, few, &[], &PcaReducer::default()).unwrap();
    assert_eq!(pca.rows.len(), 10);
    assert!(pca.rows.iter().all(|r| r.domain == DomainRole::Source));
    assert!(pca.rows.iter().any(|r| r.label == Label::Positive));
}
