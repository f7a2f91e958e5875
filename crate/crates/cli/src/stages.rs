use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use taesar::contrastive::{
    compose_dataset, regenerate_all, write_embeddings_csv, write_mapping_csv, ExpertSet, MappingRecord,
};
use taesar::corpus::io::{write_catalog, write_events};
use taesar::corpus::{
    dataset_stats, ingest, ingest_with_catalog, leave_one_out_split, Corpus, DomainCatalog, DomainId,
    IngestOptions, ItemId, MergedSequence,
};
use taesar::evaluation::{evaluate, gradient_conflict, run_comparison, ComparisonConfig, EvalOptions};
use taesar::predictor::{adapt_domain, train_base, PredictorError, PredictorModel, Role, TrainingReport};
use taesar::synthgen::{generate, GeneratorSpec};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::StageRecorder;

fn ingest_options(cfg: &RunConfig) -> IngestOptions {
    IngestOptions {
        max_len: (cfg.ingest.max_len > 0).then_some(cfg.ingest.max_len),
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::data(format!("{what} {} does not exist", path.display())))
    }
}

fn load_corpus(cfg: &RunConfig, rec: &mut StageRecorder) -> Result<Corpus> {
    let (events, catalog) = (cfg.events_path(), cfg.catalog_path());
    require(&events, "event file")?;
    require(&catalog, "catalog file")?;
    rec.input(&events)?;
    rec.input(&catalog)?;
    let corpus = ingest(&events, &catalog, ingest_options(cfg))?;
    if let Some(t) = &cfg.target_domain {
        let actual = corpus.catalog().domain_name(corpus.catalog().target());
        if actual != t {
            return Err(CliError::config(format!(
                "target_domain `{t}` does not match the catalog's target domain `{actual}`"
            )));
        }
    }
    Ok(corpus)
}

fn file_stem(domain: &str) -> String {
    domain
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn base_path(cfg: &RunConfig) -> PathBuf {
    cfg.stage_dir("pretrain").join("base.ckpt")
}

fn expert_path(cfg: &RunConfig, domain: &str) -> PathBuf {
    cfg.stage_dir("adapt").join(format!("expert-{}.ckpt", file_stem(domain)))
}

fn load_model(path: &Path, catalog: &DomainCatalog, rec: &mut StageRecorder, what: &str) -> Result<PredictorModel> {
    require(path, what)?;
    rec.input(path)?;
    Ok(PredictorModel::load(path, Some(catalog))?)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn training_csv(report: &TrainingReport) -> Result<Vec<u8>> {
    csv_bytes(|b| report.write_csv(b))
}

/// Writes corpus files for a synthetic instance (`spec` overrides `[synth]`).
pub fn synth(cfg: &RunConfig, spec_file: Option<&Path>) -> Result<()> {
    let start = Instant::now();
    let mut rec = StageRecorder::new("synth", cfg, cfg.stage_dir("synth"))?;
    let spec = match spec_file {
        Some(p) => {
            rec.input(p)?;
            let text = fs::read_to_string(p)?;
            let mut spec: GeneratorSpec =
                toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            if let Some(s) = cfg.seed {
                spec.seed = s;
            }
            spec
        }
        None => cfg.synth.clone(),
    };
    let (corpus, oracle) = generate(&spec)?;
    let cat = corpus.catalog();
    rec.write("events.tsv", &csv_bytes(|b| write_events(b, cat, corpus.merged()))?)?;
    rec.write("catalog.tsv", &csv_bytes(|b| write_catalog(b, cat))?)?;
    rec.write("oracle.csv", &csv_bytes(|b| oracle.write_csv(b, cat))?)?;
    rec.finish(start.elapsed())
}

/// Trains the base model on the training part of the leave-one-out split.
pub fn pretrain(cfg: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let mut rec = StageRecorder::new("pretrain", cfg, cfg.stage_dir("pretrain"))?;
    let corpus = load_corpus(cfg, &mut rec)?;
    let split = leave_one_out_split(&corpus);
    let (model, report) = train_base(corpus.catalog(), &split.train, &split.valid, &cfg.predictor)?;
    rec.write("base.ckpt", &model.to_bytes())?;
    rec.write("training.csv", &training_csv(&report)?)?;
    rec.finish(start.elapsed())
}

/// Adapts experts for `domain`, or for every domain that has prediction pairs.
pub fn adapt(cfg: &RunConfig, domain: Option<&str>) -> Result<()> {
    let start = Instant::now();
    let mut rec = StageRecorder::new("adapt", cfg, cfg.stage_dir("adapt"))?;
    let corpus = load_corpus(cfg, &mut rec)?;
    let cat = corpus.catalog();
    let base = load_model(&base_path(cfg), cat, &mut rec, "base checkpoint")?;
    let split = leave_one_out_split(&corpus);
    let domains: Vec<DomainId> = match domain {
        Some(name) => vec![cat
            .domain_by_name(name)
            .ok_or_else(|| CliError::config(format!("unknown domain `{name}`")))?],
        None => cat.domain_ids().collect(),
    };
    let target_valid = split.valid_in(cat.target());
    for d in domains {
        let name = cat.domain_name(d).to_string();
        let validation = (d == cat.target()).then_some(target_valid.as_slice());
        match adapt_domain(&base, cat, &split.train, d, validation, &cfg.predictor, cfg.adapt) {
            Ok((model, report)) => {
                let stem = file_stem(&name);
                rec.write(&format!("expert-{stem}.ckpt"), &model.to_bytes())?;
                rec.write(&format!("training-{stem}.csv"), &training_csv(&report)?)?;
            }
            Err(PredictorError::NoPairs(_)) if domain.is_none() && d != cat.target() => {
                eprintln!("note: skipping domain `{name}`: no prediction pairs");
            }
            Err(e) => return Err(e.into()),
        }
    }
    rec.finish(start.elapsed())
}

fn load_experts(cfg: &RunConfig, cat: &DomainCatalog, rec: &mut StageRecorder) -> Result<ExpertSet> {
    let base = load_model(&base_path(cfg), cat, rec, "base checkpoint")?;
    let target_name = cat.domain_name(cat.target()).to_string();
    let target = load_model(&expert_path(cfg, &target_name), cat, rec, "target expert checkpoint")?;
    let mut sources = Vec::new();
    for d in cat.source_domains() {
        let p = expert_path(cfg, cat.domain_name(d));
        if p.is_file() {
            sources.push(load_model(&p, cat, rec, "source expert checkpoint")?);
        }
    }
    Ok(ExpertSet::new(cat, base, target, sources)?)
}

fn strip_placeholders(seqs: Vec<MergedSequence>) -> Vec<MergedSequence> {
    seqs.into_iter()
        .map(|mut s| {
            s.events.retain(|e| e.item != ItemId::PADDING);
            s
        })
        .filter(|s| !s.is_empty())
        .collect()
}

/// Regenerates every user's sequence and writes the regenerated dataset,
/// the composed dataset, the mapping dictionary and the item embeddings.
pub fn regenerate(cfg: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let mut rec = StageRecorder::new("regenerate", cfg, cfg.stage_dir("regenerate"))?;
    let corpus = load_corpus(cfg, &mut rec)?;
    let cat = corpus.catalog();
    let experts = load_experts(cfg, cat, &mut rec)?;
    let regenerated = regenerate_all(corpus.merged(), &experts, cat, &cfg.regeneration)?;
    let dataset = strip_placeholders(regenerated.iter().map(|r| r.as_merged()).collect());
    let composed = compose_dataset(&regenerated, &corpus.target_sequences());
    let records: Vec<MappingRecord> = regenerated.iter().flat_map(|r| r.records.clone()).collect();
    rec.write("regenerated.tsv", &csv_bytes(|b| write_events(b, cat, &dataset))?)?;
    rec.write("composed.tsv", &csv_bytes(|b| write_events(b, cat, &composed))?)?;
    rec.write("mapping.csv", &csv_bytes(|b| write_mapping_csv(b, cat, &records))?)?;
    rec.write("embeddings.csv", &csv_bytes(|b| write_embeddings_csv(b, &experts.base, cat))?)?;
    rec.finish(start.elapsed())
}

/// Ranks the test split with the saved checkpoints: the base model over all
/// domains and each expert over its own domain.
pub fn evaluate_stage(cfg: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let mut rec = StageRecorder::new("evaluate", cfg, cfg.stage_dir("evaluate"))?;
    let corpus = load_corpus(cfg, &mut rec)?;
    let cat = corpus.catalog();
    let split = leave_one_out_split(&corpus);
    let opts = EvalOptions {
        ks: cfg.evaluation.ks.clone(),
        filter_seen: cfg.evaluation.filter_seen,
    };
    let mut models = vec![("base".to_string(), load_model(&base_path(cfg), cat, &mut rec, "base checkpoint")?)];
    for d in cat.domain_ids() {
        let p = expert_path(cfg, cat.domain_name(d));
        if p.is_file() {
            models.push((format!("expert-{}", cat.domain_name(d)), load_model(&p, cat, &mut rec, "expert")?));
        }
    }
    let mut out = String::from("model,domain,k,hit_rate,ndcg,mrr,n_instances\n");
    for (label, model) in &models {
        let instances = match model.role {
            Role::Base => split.test.clone(),
            Role::TargetExpert => split.test_in(cat.target()),
            Role::SourceExpert(d) => split.test_in(d),
        };
        if instances.is_empty() {
            continue;
        }
        for m in evaluate(model, cat, &instances, &opts)? {
            for a in &m.at {
                out.push_str(&format!(
                    "{label},{},{},{:.6},{:.6},{:.6},{}\n",
                    m.domain, a.k, a.hit_rate, a.ndcg, a.mrr, m.n_instances
                ));
            }
        }
    }
    rec.write("metrics.csv", out.as_bytes())?;
    rec.finish(start.elapsed())
}

/// Original vs. naive-mixed vs. regenerated downstream training.
pub fn compare(cfg: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let mut rec = StageRecorder::new("compare", cfg, cfg.stage_dir("compare"))?;
    let corpus = load_corpus(cfg, &mut rec)?;
    let cc = ComparisonConfig {
        predictor: cfg.predictor.clone(),
        adapt: cfg.adapt,
        regeneration: cfg.regeneration.clone(),
        seeds: cfg.evaluation.seeds.clone(),
        ks: cfg.evaluation.ks.clone(),
    };
    let (report, regen) = run_comparison(&corpus, &cc)?;
    let cat = corpus.catalog();
    let records: Vec<MappingRecord> = regen.regenerated.iter().flat_map(|r| r.records.clone()).collect();
    rec.write("comparison.csv", &csv_bytes(|b| report.write_csv(b))?)?;
    rec.write("comparison.md", &csv_bytes(|b| report.write_markdown(b))?)?;
    rec.write("mapping.csv", &csv_bytes(|b| write_mapping_csv(b, cat, &records))?)?;
    for (label, r) in &regen.training {
        rec.write(&format!("training-{}.csv", file_stem(label)), &training_csv(r)?)?;
    }
    rec.finish(start.elapsed())
}

fn write_stats(rec: &mut StageRecorder, name: &str, cat: &DomainCatalog, seqs: &[MergedSequence]) -> Result<()> {
    let s = dataset_stats(seqs)?;
    rec.write(&format!("{name}-summary.csv"), &csv_bytes(|b| s.write_summary_csv(b))?)?;
    rec.write(&format!("{name}-frequency.csv"), &csv_bytes(|b| s.write_frequency_csv(b, cat))?)?;
    rec.write(&format!("{name}-length.csv"), &csv_bytes(|b| s.write_length_csv(b))?)?;
    Ok(())
}

/// Frequency, long-tail and length statistics of the target-domain data,
/// and of the composed dataset when the regenerate stage has run.
pub fn stats(cfg: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let mut rec = StageRecorder::new("stats", cfg, cfg.stage_dir("stats"))?;
    let corpus = load_corpus(cfg, &mut rec)?;
    let cat = corpus.catalog_arc();
    write_stats(&mut rec, "original", &cat, &corpus.target_sequences())?;
    let composed = cfg.stage_dir("regenerate").join("composed.tsv");
    if composed.is_file() {
        rec.input(&composed)?;
        let n = ingest_with_catalog(&composed, Arc::clone(&cat), IngestOptions { max_len: None })?;
        write_stats(&mut rec, "regenerated", &cat, n.merged())?;
    }
    rec.finish(start.elapsed())
}

/// Cosine similarity of per-domain mean gradients of the base model.
pub fn conflict(cfg: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let mut rec = StageRecorder::new("conflict", cfg, cfg.stage_dir("conflict"))?;
    let corpus = load_corpus(cfg, &mut rec)?;
    let cat = corpus.catalog();
    let base = load_model(&base_path(cfg), cat, &mut rec, "base checkpoint")?;
    let split = leave_one_out_split(&corpus);
    let m = gradient_conflict(&base, cat, &split.train, cfg.evaluation.conflict_batch_size, cfg.predictor.seed)?;
    rec.write("conflict.csv", &csv_bytes(|b| m.write_csv(b))?)?;
    rec.finish(start.elapsed())
}
