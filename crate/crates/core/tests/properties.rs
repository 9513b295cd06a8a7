mod common;

use std::collections::HashSet;

use ndarray::{Array2, Axis};
use proptest::prelude::*;

use xdcl::augment::{synonym_substitute_counted, AugmentMethod, AugmentationConfig, Augmenter, Lexicon};
use xdcl::corpus::{
    balanced_labeled_sample, parse_corpus, write_corpus, Document, DomainCorpus, Label, LabeledDocument,
};
use xdcl::evalviz::EvalReport;
use xdcl::losses::{contrastive_loss, prediction_entropy, ProjectionBatch, Temperature};
use xdcl::strategy::ShiftMeasure;
use xdcl::trainer::{build_batch, lr_at, warmup_steps, TrainConfig};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_filter("rows must be non-degenerate", move |v| {
            v.chunks(cols).all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        })
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn pairs_matrix() -> impl Strategy<Value = Array2<f64>> {
    (1usize..6, 2usize..10).prop_flat_map(|(n, d)| matrix(2 * n, d))
}

fn loss(z: &Array2<f64>, tau: f64) -> f64 {
    contrastive_loss(&ProjectionBatch::single_domain(z.clone(), "s").unwrap(), Temperature::new(tau).unwrap()).unwrap()
}

fn word() -> impl Strategy<Value = String> {
    "[a-z]{1,8}"
}

fn labeled(i: usize, text: &str, label: Label) -> LabeledDocument {
    LabeledDocument::new(Document::new(format!("d{i}"), text, "books").unwrap(), label)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contrastive_loss_ignores_row_norms(z in pairs_matrix(), scales in prop::collection::vec(1e-3f64..1e3, 12), tau in 0.05f64..2.0) {
        let base = loss(&z, tau);
        let mut scaled = z.clone();
        for (mut row, c) in scaled.rows_mut().into_iter().zip(scales.iter().cycle()) {
            row.mapv_inplace(|v| v * c);
        }
        prop_assert!((loss(&scaled, tau) - base).abs() <= 1e-10 * base.max(1.0));
    }

    #[test]
    fn contrastive_loss_is_invariant_to_pair_order(z in pairs_matrix(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let n = z.nrows() / 2;
        let mut rng = common::rng(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let rows: Vec<usize> = order.iter().flat_map(|&k| [2 * k + 1, 2 * k]).collect();
        prop_assert_eq!(loss(&z.select(Axis(0), &rows), 0.05), loss(&z, 0.05));
    }

    #[test]
    fn contrastive_loss_is_nonnegative_and_bounded(z in pairs_matrix(), tau in 0.05f64..2.0) {
        let m = z.nrows() as f64;
        let l = loss(&z, tau);
        // Worst case: positive at cosine -1, every negative at +1.
        let bound = 2.0 / tau + (m - 1.0).ln();
        prop_assert!(l >= 0.0);
        prop_assert!(l <= bound + 1e-9);
    }

    #[test]
    fn entropy_stays_within_binary_bounds(logits in (1usize..10).prop_flat_map(|r| prop::collection::vec(-50.0f64..50.0, 2 * r))) {
        let rows = logits.len() / 2;
        let m = Array2::from_shape_vec((rows, 2), logits).unwrap();
        let h = prediction_entropy(m.view()).unwrap();
        prop_assert!((0.0..=std::f64::consts::LN_2).contains(&h));
    }

    #[test]
    fn shift_is_symmetric_and_at_least_one(a in 1e-3f64..1e3, b in 1e-3f64..1e3) {
        let ab = ShiftMeasure::from_ratios(a, b).unwrap().shift;
        let ba = ShiftMeasure::from_ratios(b, a).unwrap().shift;
        prop_assert!(ab >= 1.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * ab);
        prop_assert_eq!(ShiftMeasure::from_ratios(a, a).unwrap().shift, 1.0);
    }

    #[test]
    fn lr_schedule_has_single_peak_and_small_steps(total in 1u64..3000) {
        let config = TrainConfig::default();
        let warmup = warmup_steps(total, config.warmup_fraction);
        prop_assert_eq!(warmup, total.div_ceil(10));
        let values: Vec<f64> = (0..=total).map(|k| lr_at(k, total, &config).unwrap()).collect();
        let peak = values.iter().copied().fold(0.0, f64::max);
        prop_assert_eq!(peak, config.learning_rate);
        prop_assert_eq!(values.iter().filter(|&&v| v == peak).count(), 1);
        prop_assert!(values.iter().all(|v| (0.0..=config.learning_rate).contains(v)));
        let max_jump = config.learning_rate / (warmup.min(total - warmup).max(1)) as f64;
        for w in values.windows(2) {
            prop_assert!((w[1] - w[0]).abs() <= max_jump * (1.0 + 1e-9));
        }
        prop_assert!(lr_at(total + 1, total, &config).is_err());
    }

    #[test]
    fn synonym_substitution_preserves_token_count(words in prop::collection::vec(word(), 1..60), rate in 0.0f64..=1.0, seed in any::<u64>()) {
        let mut lexicon = Lexicon::new();
        for w in words.iter().step_by(2) {
            lexicon.insert(w, [format!("{w}q"), "two words".to_string()]);
        }
        let doc = Document::new("d", words.join(" "), "s").unwrap();
        let config = AugmentationConfig { method: AugmentMethod::SynonymSubstitution, substitution_rate: rate, ..AugmentationConfig::default() };
        let out = synonym_substitute_counted(&doc, &lexicon, &config, &mut common::rng(seed));
        prop_assert_eq!(out.document.text.split_whitespace().count(), words.len());
        prop_assert!(out.replaced <= out.eligible);
        if rate == 0.0 {
            prop_assert_eq!(&out.document.text, &doc.text);
        }
    }

    #[test]
    fn corpus_round_trips_through_disk(texts in prop::collection::vec(("[a-zA-Z ,.!?\"']{1,40}", any::<bool>(), any::<bool>()), 1..20)) {
        let mut labeled = Vec::new();
        let mut unlabeled = Vec::new();
        for (i, (text, has_label, pos)) in texts.iter().enumerate() {
            let text = if text.trim().is_empty() { "x" } else { text.as_str() };
            if *has_label {
                labeled.push(labeled_doc(i, text, *pos));
            } else {
                unlabeled.push(Document::new(format!("u{i}"), text, "books").unwrap());
            }
        }
        let corpus = DomainCorpus::new("books", labeled, unlabeled).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_corpus(&path, &corpus).unwrap();
        let back = parse_corpus(&std::fs::read_to_string(&path).unwrap(), "books").unwrap();
        prop_assert_eq!(back, corpus);
    }

    #[test]
    fn balanced_sample_has_exact_class_counts(n_pos in 0usize..30, n_neg in 0usize..30, want in 0usize..20, seed in any::<u64>()) {
        let docs: Vec<LabeledDocument> = (0..n_pos + n_neg)
            .map(|i| labeled(i, "t", if i < n_pos { Label::Positive } else { Label::Negative }))
            .collect();
        let corpus = DomainCorpus::new("books", docs, Vec::new()).unwrap();
        match balanced_labeled_sample(&corpus, want, seed) {
            Ok(sample) => {
                prop_assert!(want <= n_pos.min(n_neg));
                prop_assert_eq!(sample.iter().filter(|d| d.label == Label::Positive).count(), want);
                prop_assert_eq!(sample.iter().filter(|d| d.label == Label::Negative).count(), want);
                let ids: HashSet<_> = sample.iter().map(|d| d.base.id.clone()).collect();
                prop_assert_eq!(ids.len(), 2 * want);
                prop_assert_eq!(&sample, &balanced_labeled_sample(&corpus, want, seed).unwrap());
            }
            Err(_) => prop_assert!(want > n_pos.min(n_neg)),
        }
    }

    #[test]
    fn batches_have_matching_counts(n_src in 1usize..40, n_tgt in 1usize..40, n in 1usize..20, seed in any::<u64>()) {
        let source: Vec<LabeledDocument> = (0..n_src).map(|i| labeled(i, "good plot", Label::Positive)).collect();
        let target: Vec<Document> = (0..n_tgt).map(|i| Document::new(format!("t{i}"), "loud fan", "kitchen").unwrap()).collect();
        let augmenter = Augmenter::synonyms(
            AugmentationConfig { method: AugmentMethod::SynonymSubstitution, ..AugmentationConfig::default() },
            std::sync::Arc::new(Lexicon::new()),
        ).unwrap();
        let batch = build_batch(&source, &target, n, &augmenter, &mut common::rng(seed)).unwrap();
        prop_assert_eq!(batch.source_pairs.len(), n);
        prop_assert_eq!(batch.target_pairs.len(), n);
        prop_assert_eq!(batch.documents().len(), 4 * n);
        prop_assert_eq!(batch.sampled_with_replacement, n > n_src || n > n_tgt);
        if n <= n_src {
            let ids: HashSet<_> = batch.source_pairs.iter().map(|p| p.original.base.id.clone()).collect();
            prop_assert_eq!(ids.len(), n);
        }
    }

    #[test]
    fn accuracy_matches_correct_count(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..200)) {
        let to_label = |b: bool| if b { Label::Positive } else { Label::Negative };
        let gold: Vec<Label> = pairs.iter().map(|p| to_label(p.0)).collect();
        let predicted: Vec<Label> = pairs.iter().map(|p| to_label(p.1)).collect();
        let report = EvalReport::from_predictions(&gold, &predicted, "h").unwrap();
        let correct = pairs.iter().filter(|p| p.0 == p.1).count();
        prop_assert_eq!(report.n_correct, correct);
        prop_assert_eq!(report.n_total, pairs.len());
        prop_assert_eq!(report.accuracy, correct as f64 / pairs.len() as f64);
        let support: usize = report.per_class.iter().map(|c| c.support).sum();
        prop_assert_eq!(support, pairs.len());
    }
}

fn labeled_doc(i: usize, text: &str, positive: bool) -> LabeledDocument {
    labeled(i, text, if positive { Label::Positive } else { Label::Negative })
}
