use taesar::corpus::io::export;
use taesar::corpus::{ingest, ingest_with_catalog, leave_one_out_split, IngestOptions};
use taesar::evaluation::{evaluate, EvalOptions};
use taesar::predictor::{adapt_domain, train_base, AdaptOptions, PredictorConfig, PredictorModel};
use taesar::synthgen::{generate, GeneratorSpec};

fn spec() -> GeneratorSpec {
    GeneratorSpec {
        n_domains: 3,
        n_clusters: 3,
        items_per_domain_per_cluster: 4,
        n_users: 60,
        length_range: (6, 14),
        seed: 11,
        ..Default::default()
    }
}

fn tiny() -> PredictorConfig {
    PredictorConfig {
        hidden_size: 8,
        heads: 2,
        layers: 1,
        inner_size: 16,
        max_len: 16,
        max_epochs: 2,
        ..Default::default()
    }
}

#[test]
fn exported_corpus_ingests_back_unchanged() {
    let (corpus, _) = generate(&spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (ev, cat) = (dir.path().join("events.tsv"), dir.path().join("catalog.tsv"));
    export(&corpus, &ev, &cat).unwrap();
    let opts = IngestOptions { max_len: None };

    let back = ingest_with_catalog(&ev, corpus.catalog_arc(), opts).unwrap();
    assert_eq!(back.merged(), corpus.merged());

    let fresh = ingest(&ev, &cat, opts).unwrap();
    assert_eq!(fresh.n_users(), corpus.n_users());
    assert_eq!(fresh.n_interactions(), corpus.n_interactions());
    let names = |c: &taesar::corpus::Corpus| -> Vec<Vec<String>> {
        c.merged()
            .iter()
            .map(|s| s.events.iter().map(|e| c.catalog().item_name(e.item).to_string()).collect())
            .collect()
    };
    assert_eq!(names(&fresh), names(&corpus));
}

#[test]
fn checkpoints_reproduce_predictions_and_reject_other_catalogs() {
    let (corpus, _) = generate(&spec()).unwrap();
    let cat = corpus.catalog();
    let split = leave_one_out_split(&corpus);
    let (base, _) = train_base(cat, &split.train, &split.valid, &tiny()).unwrap();
    let (expert, _) =
        adapt_domain(&base, cat, &split.train, cat.target(), None, &tiny(), AdaptOptions::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    for (name, model) in [("base.ckpt", &base), ("expert.ckpt", &expert)] {
        let path = dir.path().join(name);
        model.save(&path).unwrap();
        let loaded = PredictorModel::load(&path, Some(cat)).unwrap();
        assert_eq!(loaded.to_bytes(), model.to_bytes());
        let ctx = &split.test[0].context;
        assert_eq!(
            loaded.predict_next(cat, ctx).unwrap().probs(),
            model.predict_next(cat, ctx).unwrap().probs()
        );
    }

    let (other, _) = generate(&GeneratorSpec { items_per_domain_per_cluster: 5, ..spec() }).unwrap();
    let bytes = base.to_bytes();
    assert!(PredictorModel::from_bytes(&bytes, Some(other.catalog())).is_err());
    assert!(PredictorModel::from_bytes(&bytes[..bytes.len() - 1], Some(cat)).is_err());
    assert!(PredictorModel::from_bytes(b"not a checkpoint", None).is_err());
}

#[test]
fn evaluation_reports_bounded_metrics_per_label_domain() {
    let (corpus, _) = generate(&spec()).unwrap();
    let cat = corpus.catalog();
    let split = leave_one_out_split(&corpus);
    let (base, _) = train_base(cat, &split.train, &split.valid, &tiny()).unwrap();
    let opts = EvalOptions { ks: vec![1, 5, 10], filter_seen: false };
    let metrics = evaluate(&base, cat, &split.test, &opts).unwrap();
    let total: usize = metrics.iter().map(|m| m.n_instances).sum();
    assert_eq!(total, split.test.iter().filter(|i| !i.context.is_empty()).count());
    for m in &metrics {
        let mut prev_hr = 0.0;
        for &k in &opts.ks {
            let at = m.at_k(k).unwrap();
            assert!((0.0..=1.0).contains(&at.hit_rate));
            assert!(at.mrr <= at.ndcg + 1e-12 && at.ndcg <= at.hit_rate + 1e-12);
            assert!(at.hit_rate >= prev_hr);
            prev_hr = at.hit_rate;
        }
    }
    assert!(evaluate(&base, cat, &[], &opts).is_err());
    let (other, _) = generate(&GeneratorSpec { items_per_domain_per_cluster: 5, ..spec() }).unwrap();
    assert!(evaluate(&base, other.catalog(), &split.test, &opts).is_err());
}
