use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::contrastive::{compose_dataset, regenerate_all, ExpertSet, RegeneratedSequence, RegenerationConfig};
use crate::corpus::{split_sequences, Corpus, DomainCatalog, EvalInstance, ItemId, LeaveOneOut, MergedSequence};
use crate::predictor::{
    adapt_domain, train_base, train_next_item, AdaptOptions, PredictorConfig, PredictorError, PredictorModel,
    TrainingReport, Validation,
};

use super::{evaluate, EvalOptions, EvaluationError, RankingMetrics};

/// Training data for a downstream target-domain predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Target-domain interactions only.
    Original,
    /// Naively merged multi-domain sequences.
    NaiveMixed,
    /// Regenerated sequences together with the original target sequences.
    Regenerated,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Original, Arm::NaiveMixed, Arm::Regenerated];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Original => "original",
            Arm::NaiveMixed => "naive_mixed",
            Arm::Regenerated => "regenerated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonConfig {
    /// Used for the base model, the experts and every downstream model.
    pub predictor: PredictorConfig,
    pub adapt: AdaptOptions,
    pub regeneration: RegenerationConfig,
    /// Downstream training seeds; at least three.
    pub seeds: Vec<u64>,
    pub ks: Vec<usize>,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            predictor: PredictorConfig::default(),
            adapt: AdaptOptions::default(),
            regeneration: RegenerationConfig::default(),
            seeds: vec![1, 2, 3],
            ks: vec![10, 20],
        }
    }
}

/// Everything produced before downstream training.
#[derive(Debug, Clone)]
pub struct Regeneration {
    pub split: LeaveOneOut,
    pub experts: ExpertSet,
    /// Regeneration of each user's complete sequence, aligned with the
    /// split's users.
    pub full: Vec<RegeneratedSequence>,
    /// The same truncated to each user's training part.
    pub regenerated: Vec<RegeneratedSequence>,
    /// `(model label, report)` for the base model and every expert.
    pub training: Vec<(String, TrainingReport)>,
}

impl Regeneration {
    fn full_for(&self, user: &str) -> Option<&RegeneratedSequence> {
        self.full.iter().find(|r| r.user == user)
    }
}

/// Pretrains the base model on the training part of a leave-one-out split,
/// adapts the target expert (validated on the target validation instances)
/// and one expert per source domain that has prediction pairs, then
/// regenerates every user's sequence. All models see the training parts
/// only, and each decision depends on earlier positions only, so the
/// regenerated histories in front of validation and test labels never
/// encode those labels.
pub fn regenerate_training_split(
    corpus: &Corpus,
    predictor: &PredictorConfig,
    adapt: AdaptOptions,
    regeneration: &RegenerationConfig,
) -> Result<Regeneration, EvaluationError> {
    let catalog = corpus.catalog();
    let split = split_sequences(corpus.merged());
    let target = catalog.target();
    let (base, base_report) = train_base(catalog, &split.train, &split.valid, predictor)?;
    let mut training = vec![("base".to_string(), base_report)];
    let valid_t = split.valid_in(target);
    let (expert_t, rep) = adapt_domain(&base, catalog, &split.train, target, Some(&valid_t), predictor, adapt)?;
    training.push((expert_t.role.label(catalog), rep));
    let mut sources = Vec::new();
    for d in catalog.source_domains() {
        match adapt_domain(&base, catalog, &split.train, d, None, predictor, adapt) {
            Ok((m, rep)) => {
                training.push((m.role.label(catalog), rep));
                sources.push(m);
            }
            Err(PredictorError::NoPairs(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let experts = ExpertSet::new(catalog, base, expert_t, sources).map_err(EvaluationError::from)?;
    let kept: Vec<MergedSequence> = corpus.merged().iter().filter(|s| s.len() >= 3).cloned().collect();
    let full = regenerate_all(&kept, &experts, catalog, regeneration)?;
    let regenerated = full.iter().map(|r| r.truncated(r.origin_len() - 2)).collect();
    Ok(Regeneration {
        split,
        experts,
        full,
        regenerated,
        training,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmResult {
    pub arm: Arm,
    pub seed: u64,
    pub metrics: RankingMetrics,
    pub n_train_sequences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub ks: Vec<usize>,
    pub n_test: usize,
    /// One row per arm and seed, arms in [`Arm::ALL`] order.
    pub rows: Vec<ArmResult>,
}

impl ComparisonReport {
    pub fn rows_for(&self, arm: Arm) -> impl Iterator<Item = &ArmResult> {
        self.rows.iter().filter(move |r| r.arm == arm)
    }

    /// Mean and sample standard deviation of HR@k over seeds.
    pub fn hit_rate_stats(&self, arm: Arm, k: usize) -> (f64, f64) {
        self.stats(arm, |m| m.hit_rate(k))
    }

    fn stats(&self, arm: Arm, f: impl Fn(&RankingMetrics) -> Option<f64>) -> (f64, f64) {
        let v: Vec<f64> = self.rows_for(arm).filter_map(|r| f(&r.metrics)).collect();
        if v.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (mean, var.sqrt())
    }

    /// `arm,seed,n_instances,n_train_sequences,hr@k,ng@k,mrr@k…`
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "arm,seed,n_instances,n_train_sequences")?;
        for k in &self.ks {
            write!(w, ",hr@{k},ng@{k},mrr@{k}")?;
        }
        writeln!(w)?;
        for r in &self.rows {
            write!(w, "{},{},{},{}", r.arm.name(), r.seed, r.metrics.n_instances, r.n_train_sequences)?;
            for a in &r.metrics.at {
                write!(w, ",{:.6},{:.6},{:.6}", a.hit_rate, a.ndcg, a.mrr)?;
            }
            writeln!(w)?;
        }
        w.flush()
    }

    /// Per-seed table followed by mean ± standard deviation per arm.
    pub fn write_markdown<W: Write>(&self, mut w: W) -> io::Result<()> {
        let cols: Vec<String> = self
            .ks
            .iter()
            .flat_map(|k| [format!("HR@{k}"), format!("NG@{k}"), format!("MRR@{k}")])
            .collect();
        writeln!(w, "| arm | seed | {} |", cols.join(" | "))?;
        writeln!(w, "|---|---|{}", "---|".repeat(cols.len()))?;
        for r in &self.rows {
            let vals: Vec<String> = r
                .metrics
                .at
                .iter()
                .flat_map(|a| [a.hit_rate, a.ndcg, a.mrr])
                .map(|v| format!("{v:.4}"))
                .collect();
            writeln!(w, "| {} | {} | {} |", r.arm.name(), r.seed, vals.join(" | "))?;
        }
        writeln!(w)?;
        writeln!(w, "| arm | {} |", cols.join(" | "))?;
        writeln!(w, "|---|{}", "---|".repeat(cols.len()))?;
        for arm in Arm::ALL {
            let mut vals = Vec::new();
            for &k in &self.ks {
                for f in [
                    (|m: &RankingMetrics, k| m.hit_rate(k)) as fn(&RankingMetrics, usize) -> Option<f64>,
                    |m, k| m.ndcg(k),
                    |m, k| m.mrr(k),
                ] {
                    let (mean, sd) = self.stats(arm, |m| f(m, k));
                    vals.push(format!("{mean:.4} ± {sd:.4}"));
                }
            }
            writeln!(w, "| {} | {} |", arm.name(), vals.join(" | "))?;
        }
        writeln!(w)?;
        writeln!(w, "{} test instances per run.", self.n_test)?;
        w.flush()
    }
}

/// The shared target-label instances (those with a non-empty target-only
/// context) in the view each arm sees: the history restricted to the
/// target domain, the mixed history, and the regenerated history.
#[derive(Debug, Clone, Default)]
pub struct ArmInstances {
    pub original: Vec<EvalInstance>,
    pub naive_mixed: Vec<EvalInstance>,
    pub regenerated: Vec<EvalInstance>,
}

impl ArmInstances {
    pub fn build(catalog: &DomainCatalog, regen: &Regeneration, instances: &[EvalInstance]) -> Self {
        let t = catalog.target();
        let mut out = ArmInstances::default();
        for inst in instances.iter().filter(|i| i.domain == t) {
            let restricted = inst.restrict_context(t);
            if restricted.context.is_empty() {
                continue;
            }
            let Some(full) = regen.full_for(&inst.user) else {
                continue;
            };
            let history = full.truncated(inst.context.len()).as_merged();
            let mut rewritten = restricted.clone();
            rewritten.context = history.items();
            rewritten.context_domains = history.domains();
            rewritten.context.retain(|i| *i != ItemId::PADDING);
            rewritten.context_domains.truncate(rewritten.context.len());
            out.original.push(restricted);
            out.naive_mixed.push(inst.clone());
            out.regenerated.push(rewritten);
        }
        out
    }

    pub fn for_arm(&self, arm: Arm) -> &[EvalInstance] {
        match arm {
            Arm::Original => &self.original,
            Arm::NaiveMixed => &self.naive_mixed,
            Arm::Regenerated => &self.regenerated,
        }
    }
}

/// Training sequences of each arm.
pub fn arm_datasets(catalog: &DomainCatalog, regen: &Regeneration) -> Vec<(Arm, Vec<MergedSequence>)> {
    let t = catalog.target();
    let original: Vec<MergedSequence> = regen
        .split
        .train
        .iter()
        .map(|s| s.restrict_to(t))
        .filter(|s| !s.is_empty())
        .collect();
    let composed = compose_dataset(&regen.regenerated, &original);
    vec![
        (Arm::Original, original),
        (Arm::NaiveMixed, regen.split.train.clone()),
        (Arm::Regenerated, composed),
    ]
}

/// Trains one downstream model per arm and seed and evaluates it on the
/// shared target test set, ranking against the target vocabulary. Each arm
/// reads test histories in its own representation (see [`ArmInstances`]).
pub fn compare_arms(
    catalog: &DomainCatalog,
    regen: &Regeneration,
    predictor: &PredictorConfig,
    seeds: &[u64],
    ks: &[usize],
) -> Result<ComparisonReport, EvaluationError> {
    if seeds.len() < 3 {
        return Err(EvaluationError::TooFewSeeds(seeds.len()));
    }
    let valid = ArmInstances::build(catalog, regen, &regen.split.valid);
    let test = ArmInstances::build(catalog, regen, &regen.split.test);
    if test.original.is_empty() {
        return Err(EvaluationError::EmptyTestSet);
    }
    let opts = EvalOptions {
        ks: ks.to_vec(),
        filter_seen: false,
    };
    let mut rows = Vec::new();
    for (arm, data) in arm_datasets(catalog, regen) {
        let (valid, test) = (valid.for_arm(arm), test.for_arm(arm));
        for &seed in seeds {
            let cfg = PredictorConfig {
                seed,
                ..predictor.clone()
            };
            let v = Validation {
                instances: valid,
                candidates: catalog.target_vocab(),
            };
            let (model, _) = train_next_item(catalog, &data, Some(v), &cfg)?;
            let metrics = evaluate_target(&model, catalog, test, &opts)?;
            rows.push(ArmResult {
                arm,
                seed,
                metrics,
                n_train_sequences: data.len(),
            });
        }
    }
    Ok(ComparisonReport {
        ks: opts.ks.clone(),
        n_test: test.original.len(),
        rows,
    })
}

fn evaluate_target(
    model: &PredictorModel,
    catalog: &DomainCatalog,
    test: &[EvalInstance],
    opts: &EvalOptions,
) -> Result<RankingMetrics, EvaluationError> {
    let mut all = evaluate(model, catalog, test, opts)?;
    Ok(all.remove(0))
}

/// [`regenerate_training_split`] once, then [`compare_arms`] over all seeds.
pub fn run_comparison(corpus: &Corpus, cfg: &ComparisonConfig) -> Result<(ComparisonReport, Regeneration), EvaluationError> {
    if cfg.seeds.len() < 3 {
        return Err(EvaluationError::TooFewSeeds(cfg.seeds.len()));
    }
    let regen = regenerate_training_split(corpus, &cfg.predictor, cfg.adapt, &cfg.regeneration)?;
    let report = compare_arms(corpus.catalog(), &regen, &cfg.predictor, &cfg.seeds, &cfg.ks)?;
    Ok((report, regen))
}
