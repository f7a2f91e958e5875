use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::Serialize;

use crate::corpus::{DomainCatalog, DomainId, EvalInstance, ItemId};
use crate::predictor::PredictorModel;

use super::EvaluationError;

/// 1-based rank of `target` among `candidates` under `scores` (aligned with
/// `candidates`): one plus the number of candidates scoring strictly higher,
/// plus those tied with a smaller item id.
pub fn rank_by_scores(candidates: &[ItemId], scores: &[f64], target: ItemId) -> Result<usize, EvaluationError> {
    assert_eq!(candidates.len(), scores.len(), "one score per candidate");
    let pos = candidates
        .iter()
        .position(|&c| c == target)
        .ok_or(EvaluationError::TargetNotInCandidates(target))?;
    let s = scores[pos];
    if s.is_nan() {
        return Err(EvaluationError::NonFiniteScore);
    }
    let ahead = candidates
        .iter()
        .zip(scores)
        .filter(|&(&c, &v)| v > s || (v == s && c < target))
        .count();
    Ok(ahead + 1)
}

/// Ranks `target` against `candidates` after `context` under `model`.
pub fn rank_of_target(
    model: &PredictorModel,
    catalog: &DomainCatalog,
    context: &[ItemId],
    target: ItemId,
    candidates: &[ItemId],
) -> Result<usize, EvaluationError> {
    let dist = model.predict_next(catalog, context)?;
    let scores: Vec<f64> = candidates
        .iter()
        .map(|&c| dist.logprob(c).ok_or(EvaluationError::TargetNotInCandidates(c)))
        .collect::<Result<_, _>>()?;
    rank_by_scores(candidates, &scores, target)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsAtK {
    pub k: usize,
    pub hit_rate: f64,
    pub ndcg: f64,
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingMetrics {
    pub domain: String,
    pub n_instances: usize,
    /// Ascending in `k`.
    pub at: Vec<MetricsAtK>,
}

impl RankingMetrics {
    /// Aggregates 1-based ranks into HR@k, NG@k and MRR@k.
    pub fn from_ranks(domain: impl Into<String>, ranks: &[usize], ks: &[usize]) -> Result<Self, EvaluationError> {
        if ranks.is_empty() {
            return Err(EvaluationError::EmptyTestSet);
        }
        let mut ks = ks.to_vec();
        ks.sort_unstable();
        ks.dedup();
        let n = ranks.len() as f64;
        let at = ks
            .iter()
            .map(|&k| {
                let (mut hr, mut ng, mut mrr) = (0.0, 0.0, 0.0);
                for &r in ranks.iter().filter(|&&r| r <= k) {
                    hr += 1.0;
                    ng += 1.0 / ((r + 1) as f64).log2();
                    mrr += 1.0 / r as f64;
                }
                MetricsAtK {
                    k,
                    hit_rate: hr / n,
                    ndcg: ng / n,
                    mrr: mrr / n,
                }
            })
            .collect();
        Ok(Self {
            domain: domain.into(),
            n_instances: ranks.len(),
            at,
        })
    }

    pub fn at_k(&self, k: usize) -> Option<&MetricsAtK> {
        self.at.iter().find(|m| m.k == k)
    }

    pub fn hit_rate(&self, k: usize) -> Option<f64> {
        self.at_k(k).map(|m| m.hit_rate)
    }

    pub fn ndcg(&self, k: usize) -> Option<f64> {
        self.at_k(k).map(|m| m.ndcg)
    }

    pub fn mrr(&self, k: usize) -> Option<f64> {
        self.at_k(k).map(|m| m.mrr)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    /// Remove items already in the context from the candidates (the label
    /// itself is always kept).
    pub filter_seen: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ks: vec![10, 20],
            filter_seen: false,
        }
    }
}

/// Full-ranking evaluation: each instance's label is ranked against the
/// whole vocabulary of its domain. Returns one entry per label domain, in
/// domain order; instances with an empty context are skipped.
pub fn evaluate(
    model: &PredictorModel,
    catalog: &DomainCatalog,
    instances: &[EvalInstance],
    opts: &EvalOptions,
) -> Result<Vec<RankingMetrics>, EvaluationError> {
    model.check_catalog(catalog)?;
    let mut ranks: BTreeMap<DomainId, Vec<usize>> = BTreeMap::new();
    for inst in instances.iter().filter(|i| !i.context.is_empty()) {
        let vocab = catalog.vocab(inst.domain);
        let dist = model.predict_next(catalog, &inst.context)?;
        let (cands, scores): (Vec<ItemId>, Vec<f64>) = vocab
            .iter()
            .filter(|&&c| !opts.filter_seen || c == inst.label || !inst.context.contains(&c))
            .map(|&c| (c, dist.logprob(c).unwrap_or(f64::NEG_INFINITY)))
            .unzip();
        let r = rank_by_scores(&cands, &scores, inst.label)?;
        ranks.entry(inst.domain).or_default().push(r);
    }
    if ranks.is_empty() {
        return Err(EvaluationError::EmptyTestSet);
    }
    ranks
        .into_iter()
        .map(|(d, r)| RankingMetrics::from_ranks(catalog.domain_name(d), &r, &opts.ks))
        .collect()
}

/// `domain,k,hit_rate,ndcg,mrr,n_instances`
pub fn write_metrics_csv<W: Write>(mut w: W, metrics: &[RankingMetrics]) -> io::Result<()> {
    writeln!(w, "domain,k,hit_rate,ndcg,mrr,n_instances")?;
    for m in metrics {
        for a in &m.at {
            writeln!(
                w,
                "{},{},{:.6},{:.6},{:.6},{}",
                m.domain, a.k, a.hit_rate, a.ndcg, a.mrr, m.n_instances
            )?;
        }
    }
    Ok(())
}
