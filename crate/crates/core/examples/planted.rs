//! Regenerates a synthetic corpus with a planted cluster structure, reports
//! how often replacements land in the right cluster, and compares the three
//! downstream training sets.
//!
//! `cargo run --release -p taesar --example planted [seed]`

use std::time::Instant;

use taesar::contrastive::RegenerationConfig;
use taesar::evaluation::{compare_arms, regenerate_training_split, Arm};
use taesar::predictor::{AdaptOptions, PredictorConfig};
use taesar::synthgen::{chance_transfer_accuracy, generate, oracle_transfer_accuracy, GeneratorSpec};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let spec = GeneratorSpec {
        n_users: 2000,
        items_per_domain_per_cluster: 20,
        transfer_rate: 0.5,
        within_cluster_coherence: 1.0,
        noise_rate: 0.05,
        seed,
        ..Default::default()
    };
    let cfg = PredictorConfig {
        hidden_size: 32,
        heads: 2,
        layers: 1,
        inner_size: 64,
        max_len: 64,
        lr: 2e-3,
        max_epochs: 40,
        patience: 5,
        batch_size: 128,
        ..Default::default()
    };
    let start = Instant::now();
    let (corpus, oracle) = generate(&spec).expect("valid spec");
    let regen = regenerate_training_split(&corpus, &cfg, AdaptOptions::default(), &RegenerationConfig::default())
        .expect("regeneration");
    for (name, r) in &regen.training {
        println!("{name}: best epoch {} of {}, {:.1}s", r.best_epoch, r.stopping_epoch, r.seconds);
    }

    let records: Vec<_> = regen.regenerated.iter().flat_map(|r| r.records.clone()).collect();
    let acc = oracle_transfer_accuracy(&records, &oracle).expect("oracle covers catalog");
    let chance = chance_transfer_accuracy(&records, &oracle, corpus.catalog().target_vocab(), 1000, 1)
        .expect("oracle covers catalog");
    println!(
        "transfer accuracy {:.3} over {} replacements ({} discarded), chance {chance:.3}",
        acc.accuracy.unwrap_or(f64::NAN),
        acc.n_replaced,
        acc.n_discarded
    );

    let report = compare_arms(corpus.catalog(), &regen, &cfg, &[1, 2, 3], &[10, 20]).expect("comparison");
    for arm in Arm::ALL {
        let (mean, sd) = report.hit_rate_stats(arm, 10);
        println!("{}: HR@10 {mean:.4} ± {sd:.4}", arm.name());
    }
    println!("total {:.1}s", start.elapsed().as_secs_f64());
}
