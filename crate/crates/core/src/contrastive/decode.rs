use std::collections::BTreeMap;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{DomainCatalog, DomainId, Interaction, ItemId, MergedSequence};
use crate::predictor::{PredictiveDistribution, PredictorModel, Role};

use super::weights::{confidence_of, jsd_of};
use super::{ContrastiveError, DiscardPolicy, RegenerationConfig, WeightMode};

/// The base model, the target expert and one expert per source domain.
#[derive(Debug, Clone)]
pub struct ExpertSet {
    pub base: PredictorModel,
    pub target: PredictorModel,
    pub sources: BTreeMap<DomainId, PredictorModel>,
}

impl ExpertSet {
    pub fn new(
        catalog: &DomainCatalog,
        base: PredictorModel,
        target: PredictorModel,
        sources: impl IntoIterator<Item = PredictorModel>,
    ) -> Result<Self, ContrastiveError> {
        let wrong = |expected: &str, m: &PredictorModel| ContrastiveError::WrongRole {
            expected: expected.into(),
            found: m.role.label(catalog),
        };
        if base.role != Role::Base {
            return Err(wrong("base", &base));
        }
        if target.role != Role::TargetExpert {
            return Err(wrong("target expert", &target));
        }
        let mut map = BTreeMap::new();
        for m in sources {
            let Role::SourceExpert(d) = m.role else {
                return Err(wrong("source expert", &m));
            };
            map.insert(d, m);
        }
        for m in [&base, &target].into_iter().chain(map.values()) {
            m.check_catalog(catalog)?;
        }
        Ok(Self {
            base,
            target,
            sources: map,
        })
    }

    pub fn source(&self, domain: DomainId) -> Option<&PredictorModel> {
        self.sources.get(&domain)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum TransformDecision {
    /// The item already belongs to the target domain.
    Keep,
    /// `score` is the winning local score (the global one when the local
    /// stage is disabled).
    Replace { item: ItemId, score: f64 },
    Discard,
}

impl TransformDecision {
    pub fn label(&self) -> &'static str {
        match self {
            TransformDecision::Keep => "keep",
            TransformDecision::Replace { .. } => "replace",
            TransformDecision::Discard => "discard",
        }
    }
}

/// Weights actually used; `None` where a stage did not run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ContrastiveWeights {
    pub alpha_g: Option<f64>,
    pub beta_g: Option<f64>,
    pub alpha_l: Option<f64>,
    pub beta_l: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MappingRecord {
    pub user: String,
    /// 1-based position in the original merged sequence.
    pub position: usize,
    pub source_item: ItemId,
    pub decision: TransformDecision,
    pub weights: ContrastiveWeights,
    pub global_argmax: Option<ItemId>,
    pub local_argmax: Option<ItemId>,
}

impl MappingRecord {
    pub fn target_item(&self) -> Option<ItemId> {
        match self.decision {
            TransformDecision::Replace { item, .. } => Some(item),
            _ => None,
        }
    }
}

fn contrast(
    expert: &PredictiveDistribution,
    amateur: Option<&PredictiveDistribution>,
    alpha: f64,
    beta: f64,
) -> Result<Vec<f64>, ContrastiveError> {
    // α = 0 must zero the term even where a log-probability is −∞
    let mut s: Vec<f64> = expert
        .logprobs()
        .iter()
        .map(|l| if alpha == 0.0 { 0.0 } else { alpha * l })
        .collect();
    if let Some(a) = amateur.filter(|_| beta != 0.0) {
        if a.support() != expert.support() {
            return Err(ContrastiveError::SupportMismatch);
        }
        for (v, l) in s.iter_mut().zip(a.logprobs()) {
            *v -= beta * l;
        }
    }
    Ok(s)
}

/// `α_g·log P^T − β_g·log P^S` over the full vocabulary.
pub fn global_score(
    p_target: &PredictiveDistribution,
    p_source: &PredictiveDistribution,
    alpha_g: f64,
    beta_g: f64,
) -> Result<Vec<f64>, ContrastiveError> {
    contrast(p_target, Some(p_source), alpha_g, beta_g)
}

/// The same contrast over distributions already restricted to the target
/// vocabulary.
pub fn local_score(
    p_target: &PredictiveDistribution,
    p_source: &PredictiveDistribution,
    alpha_l: f64,
    beta_l: f64,
) -> Result<Vec<f64>, ContrastiveError> {
    if p_target.is_empty() {
        return Err(ContrastiveError::EmptyTargetVocab);
    }
    contrast(p_target, Some(p_source), alpha_l, beta_l)
}

/// Highest-scoring position; ties go to the first (smallest id).
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn pick<R: Rng>(scores: &[f64], temperature: Option<f64>, rng: &mut R) -> usize {
    let Some(t) = temperature else {
        return argmax(scores);
    };
    let top = scores[argmax(scores)];
    let w: Vec<f64> = scores.iter().map(|s| ((s - top) / t).exp()).collect();
    match WeightedIndex::new(&w) {
        Ok(d) => d.sample(rng),
        Err(_) => argmax(scores),
    }
}

/// Predictive distributions at one source position.
#[derive(Debug, Clone, Copy)]
pub struct PositionView<'a> {
    pub target: &'a PredictiveDistribution,
    /// Needed for adaptive weights when the source expert is used.
    pub base: Option<&'a PredictiveDistribution>,
    /// Needed when the source expert is used.
    pub source: Option<&'a PredictiveDistribution>,
}

/// Outcome of one decision, without user/position bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub decision: TransformDecision,
    pub weights: ContrastiveWeights,
    pub global_argmax: Option<ItemId>,
    pub local_argmax: Option<ItemId>,
}

/// Transform-or-discard for one source position from precomputed
/// distributions over the full vocabulary.
pub fn decide_from<R: Rng>(
    view: PositionView<'_>,
    catalog: &DomainCatalog,
    config: &RegenerationConfig,
    rng: &mut R,
) -> Result<Decision, ContrastiveError> {
    let target_vocab = catalog.target_vocab();
    if target_vocab.is_empty() {
        return Err(ContrastiveError::EmptyTargetVocab);
    }
    let sde = config.use_source_expert;
    let source = if sde {
        Some(view.source.ok_or(ContrastiveError::MissingDistribution("source expert"))?)
    } else {
        None
    };
    let base = match (sde, config.weight_mode) {
        (true, WeightMode::Adaptive) => {
            Some(view.base.ok_or(ContrastiveError::MissingDistribution("base model"))?)
        }
        _ => None,
    };
    let weights_for = |t: &[f64], b: Option<&[f64]>, s: Option<&[f64]>| -> Result<(f64, f64), ContrastiveError> {
        Ok(match config.weight_mode {
            WeightMode::Adaptive => (
                confidence_of(t)?,
                match (b, s) {
                    (Some(b), Some(s)) => jsd_of(b, s),
                    _ => 0.0,
                },
            ),
            WeightMode::Fixed { alpha, beta } => (alpha, if sde { beta } else { 0.0 }),
        })
    };

    let mut out = Decision {
        decision: TransformDecision::Discard,
        weights: ContrastiveWeights::default(),
        global_argmax: None,
        local_argmax: None,
    };

    let mut global = None;
    if config.use_global || !config.use_local {
        let (a, b) = weights_for(
            view.target.probs(),
            base.map(|d| d.probs()),
            source.map(|d| d.probs()),
        )?;
        out.weights.alpha_g = Some(a);
        out.weights.beta_g = Some(b);
        let g = contrast(view.target, source, a, b)?;
        let top = view.target.support()[argmax(&g)];
        out.global_argmax = Some(top);
        if config.use_global && !catalog.is_target(top) {
            return Ok(out);
        }
        global = Some(g);
    }

    if !config.use_local {
        let g = global.expect("global score computed");
        let idx: Vec<usize> = target_vocab.iter().map(|v| v.index() - 1).collect();
        let sub: Vec<f64> = idx.iter().map(|&i| g[i]).collect();
        let k = pick(&sub, config.temperature, rng);
        out.decision = TransformDecision::Replace {
            item: target_vocab[k],
            score: sub[k],
        };
        return Ok(out);
    }

    let t_r = view.target.restrict(target_vocab)?;
    if t_r.len() == 1 {
        out.local_argmax = Some(target_vocab[0]);
        out.decision = TransformDecision::Replace {
            item: target_vocab[0],
            score: 0.0,
        };
        return Ok(out);
    }
    let s_r = source.map(|d| d.restrict(target_vocab)).transpose()?;
    let b_r = base.map(|d| d.restrict(target_vocab)).transpose()?;
    let (a, b) = weights_for(
        t_r.probs(),
        b_r.as_ref().map(|d| d.probs()),
        s_r.as_ref().map(|d| d.probs()),
    )?;
    out.weights.alpha_l = Some(a);
    out.weights.beta_l = Some(b);
    let l = contrast(&t_r, s_r.as_ref(), a, b)?;
    out.local_argmax = Some(target_vocab[argmax(&l)]);
    let k = pick(&l, config.temperature, rng);
    out.decision = TransformDecision::Replace {
        item: target_vocab[k],
        score: l[k],
    };
    Ok(out)
}

/// Decides what to do with `source_item`, which follows `prefix` in a
/// mixed sequence. The prefix is the original mixed history before the item.
pub fn decide(
    catalog: &DomainCatalog,
    prefix: &[ItemId],
    source_item: ItemId,
    experts: &ExpertSet,
    config: &RegenerationConfig,
) -> Result<MappingRecord, ContrastiveError> {
    config.validate()?;
    let domain = catalog
        .domain_of(source_item)
        .ok_or(ContrastiveError::UnknownItem(source_item))?;
    if domain == catalog.target() {
        return Err(ContrastiveError::NotASourceItem(source_item));
    }
    let mut record = MappingRecord {
        user: String::new(),
        position: prefix.len() + 1,
        source_item,
        decision: TransformDecision::Discard,
        weights: ContrastiveWeights::default(),
        global_argmax: None,
        local_argmax: None,
    };
    if prefix.is_empty() {
        return Ok(record);
    }
    let t = experts.target.predict_next(catalog, prefix)?;
    let (s, b) = if config.use_source_expert {
        let m = experts
            .source(domain)
            .ok_or_else(|| ContrastiveError::MissingExpert(catalog.domain_name(domain).into()))?;
        (Some(m.predict_next(catalog, prefix)?), Some(experts.base.predict_next(catalog, prefix)?))
    } else {
        (None, None)
    };
    let view = PositionView {
        target: &t,
        base: b.as_ref(),
        source: s.as_ref(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = decide_from(view, catalog, config, &mut rng)?;
    record.decision = d.decision;
    record.weights = d.weights;
    record.global_argmax = d.global_argmax;
    record.local_argmax = d.local_argmax;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegeneratedSequence {
    pub user: String,
    /// Target-domain events in original order; source positions carry the
    /// replacement item (or the padding item under
    /// [`DiscardPolicy::PlaceholderToken`]) with their original timestamp.
    pub events: Vec<Interaction>,
    /// 0-based position in the original sequence of each output event.
    pub origin: Vec<usize>,
    pub records: Vec<MappingRecord>,
    /// Nothing survived regeneration.
    pub degenerate: bool,
}

impl RegeneratedSequence {
    /// Length of the original sequence.
    pub fn origin_len(&self) -> usize {
        self.records
            .last()
            .map(|r| r.position)
            .into_iter()
            .chain(self.origin.last().map(|o| o + 1))
            .max()
            .unwrap_or(0)
    }

    /// The regeneration of the original prefix of length `cut`. Decisions
    /// only look backwards, so this equals regenerating that prefix alone.
    pub fn truncated(&self, cut: usize) -> RegeneratedSequence {
        let keep = self.origin.iter().take_while(|&&o| o < cut).count();
        let events = self.events[..keep].to_vec();
        RegeneratedSequence {
            user: self.user.clone(),
            degenerate: events.iter().all(|e| e.item == ItemId::PADDING),
            events,
            origin: self.origin[..keep].to_vec(),
            records: self.records.iter().filter(|r| r.position <= cut).cloned().collect(),
        }
    }

    pub fn as_merged(&self) -> MergedSequence {
        MergedSequence {
            user: self.user.clone(),
            events: self.events.clone(),
        }
    }
}

fn user_seed(seed: u64, user: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in user.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    seed ^ h
}

/// Rewrites one mixed sequence into target-domain items. Target items are
/// kept in place; each source item is decided from the original mixed
/// prefix before it. A source item in first position has no context and is
/// discarded.
pub fn regenerate_sequence(
    seq: &MergedSequence,
    experts: &ExpertSet,
    catalog: &DomainCatalog,
    config: &RegenerationConfig,
) -> Result<RegeneratedSequence, ContrastiveError> {
    config.validate()?;
    let target = catalog.target();
    let items = seq.items();
    let mut rng = ChaCha8Rng::seed_from_u64(user_seed(config.seed, &seq.user));

    let source_pos: Vec<usize> = (1..items.len()).filter(|&p| seq.events[p].domain != target).collect();
    let ends: Vec<usize> = source_pos.clone();
    let t_dists = experts.target.predict_prefixes(catalog, &items, &ends)?;
    let need_base = config.use_source_expert && config.weight_mode == WeightMode::Adaptive;
    let b_dists = if need_base {
        Some(experts.base.predict_prefixes(catalog, &items, &ends)?)
    } else {
        None
    };
    let mut s_dists: BTreeMap<usize, PredictiveDistribution> = BTreeMap::new();
    if config.use_source_expert {
        let mut by_domain: BTreeMap<DomainId, Vec<usize>> = BTreeMap::new();
        for &p in &source_pos {
            by_domain.entry(seq.events[p].domain).or_default().push(p);
        }
        for (d, ps) in by_domain {
            let m = experts
                .source(d)
                .ok_or_else(|| ContrastiveError::MissingExpert(catalog.domain_name(d).into()))?;
            for (p, dist) in ps.iter().zip(m.predict_prefixes(catalog, &items, ps.as_slice())?) {
                s_dists.insert(*p, dist);
            }
        }
    }

    let mut events = Vec::with_capacity(items.len());
    let mut origin = Vec::with_capacity(items.len());
    let mut records = Vec::new();
    let mut k = 0;
    for (p, e) in seq.events.iter().enumerate() {
        if e.domain == target {
            events.push(*e);
            origin.push(p);
            continue;
        }
        if catalog.domain_of(e.item).is_none() {
            return Err(ContrastiveError::UnknownItem(e.item));
        }
        let mut record = MappingRecord {
            user: seq.user.clone(),
            position: p + 1,
            source_item: e.item,
            decision: TransformDecision::Discard,
            weights: ContrastiveWeights::default(),
            global_argmax: None,
            local_argmax: None,
        };
        if p > 0 {
            let view = PositionView {
                target: &t_dists[k],
                base: b_dists.as_ref().map(|b| &b[k]),
                source: s_dists.get(&p),
            };
            k += 1;
            let d = decide_from(view, catalog, config, &mut rng)?;
            record.decision = d.decision;
            record.weights = d.weights;
            record.global_argmax = d.global_argmax;
            record.local_argmax = d.local_argmax;
        }
        let emitted = match (record.decision, config.discard_policy) {
            (TransformDecision::Replace { item, .. }, _) => Some(item),
            (_, DiscardPolicy::PlaceholderToken) => Some(ItemId::PADDING),
            _ => None,
        };
        if let Some(item) = emitted {
            events.push(Interaction {
                item,
                timestamp: e.timestamp,
                domain: target,
            });
            origin.push(p);
        }
        records.push(record);
    }
    let degenerate = events.iter().all(|e| e.item == ItemId::PADDING);
    Ok(RegeneratedSequence {
        user: seq.user.clone(),
        events,
        origin,
        records,
        degenerate,
    })
}

/// Regenerates every sequence, in input order.
pub fn regenerate_all(
    sequences: &[MergedSequence],
    experts: &ExpertSet,
    catalog: &DomainCatalog,
    config: &RegenerationConfig,
) -> Result<Vec<RegeneratedSequence>, ContrastiveError> {
    sequences
        .iter()
        .map(|s| regenerate_sequence(s, experts, catalog, config))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DomainRole;
    use crate::predictor::{Backend, MarkovTable, PredictorConfig};
    use std::sync::Arc;

    fn dist(w: &[f64]) -> PredictiveDistribution {
        let support: Arc<[ItemId]> = (1..=w.len() as u32).map(ItemId).collect::<Vec<_>>().into();
        PredictiveDistribution::from_weights(support, w.to_vec()).unwrap()
    }

    // t1=1 t2=2 t3=3 s1=4 s2=5
    fn catalog() -> DomainCatalog {
        DomainCatalog::new(
            vec![("T".into(), DomainRole::Target), ("S".into(), DomainRole::Source)],
            [("t1", "T"), ("t2", "T"), ("t3", "T"), ("s1", "S"), ("s2", "S")],
        )
        .unwrap()
    }

    fn markov(cat: &DomainCatalog, role: Role, transitions: &[(u32, u32, usize)]) -> PredictorModel {
        let mut t = MarkovTable::new(cat.n_items(), 0.01).unwrap();
        for &(a, b, n) in transitions {
            for _ in 0..n {
                t.observe(ItemId(a), ItemId(b));
            }
        }
        PredictorModel::new(role, Backend::Markov(t), PredictorConfig::default(), cat)
    }

    fn experts(cat: &DomainCatalog) -> ExpertSet {
        let s = DomainId(1);
        ExpertSet::new(
            cat,
            markov(cat, Role::Base, &[(1, 4, 3), (4, 2, 3), (2, 5, 1)]),
            markov(cat, Role::TargetExpert, &[(1, 2, 5), (4, 3, 5), (5, 1, 5)]),
            [markov(cat, Role::SourceExpert(s), &[(1, 4, 5), (4, 5, 5)])],
        )
        .unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn global_score_hand_case() {
        let g = global_score(&dist(&[0.7, 0.2, 0.1]), &dist(&[0.1, 0.2, 0.7]), 1.0, 1.0).unwrap();
        assert_eq!(argmax(&g), 0);
        assert!((g[0] - 7f64.ln()).abs() < 1e-12);
        let p = dist(&[0.5, 0.3, 0.2]);
        assert!(global_score(&p, &p, 0.4, 0.4).unwrap().iter().all(|v| v.abs() < 1e-12));
        let g = global_score(&p, &dist(&[0.1, 0.1, 0.8]), 1.0, 0.0).unwrap();
        assert_eq!(g, p.logprobs());
    }

    #[test]
    fn local_score_hand_case() {
        let l = local_score(&dist(&[0.6, 0.4]), &dist(&[0.5, 0.5]), 1.0, 1.0).unwrap();
        assert!((l[0] - l[1] - 1.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_target_expert_drives_replacement() {
        let cat = catalog();
        let cfg = RegenerationConfig {
            weight_mode: WeightMode::Fixed { alpha: 1.0, beta: 0.0 },
            ..Default::default()
        };
        let t = dist(&[0.0, 1.0, 0.0, 0.0, 0.0]);
        let u = dist(&[1.0; 5]);
        let view = PositionView { target: &t, base: None, source: Some(&u) };
        let d = decide_from(view, &cat, &cfg, &mut rng()).unwrap();
        assert!(matches!(d.decision, TransformDecision::Replace { item: ItemId(2), .. }));
    }

    #[test]
    fn source_global_argmax_discards_unless_global_disabled() {
        let cat = catalog();
        let t = dist(&[0.1, 0.1, 0.1, 0.6, 0.1]);
        let s = dist(&[0.2; 5]);
        let b = dist(&[0.2; 5]);
        let view = PositionView { target: &t, base: Some(&b), source: Some(&s) };
        let d = decide_from(view, &cat, &RegenerationConfig::default(), &mut rng()).unwrap();
        assert_eq!(d.decision, TransformDecision::Discard);
        assert_eq!(d.global_argmax, Some(ItemId(4)));
        assert_eq!(d.weights.alpha_l, None);

        let cfg = RegenerationConfig { use_global: false, ..Default::default() };
        let d = decide_from(view, &cat, &cfg, &mut rng()).unwrap();
        assert!(matches!(d.decision, TransformDecision::Replace { item: ItemId(1), .. }));
        assert_eq!(d.weights.alpha_g, None);
    }

    #[test]
    fn without_source_expert_reduces_to_target_argmax() {
        let cat = catalog();
        let t = dist(&[0.2, 0.5, 0.3, 0.0, 0.0]);
        let view = PositionView { target: &t, base: None, source: None };
        let cfg = RegenerationConfig { use_source_expert: false, ..Default::default() };
        let d = decide_from(view, &cat, &cfg, &mut rng()).unwrap();
        assert_eq!(d.weights.beta_g, Some(0.0));
        assert_eq!(d.weights.beta_l, Some(0.0));
        assert!(matches!(d.decision, TransformDecision::Replace { item: ItemId(2), .. }));
    }

    #[test]
    fn without_local_uses_best_global_target() {
        let cat = catalog();
        let t = dist(&[0.1, 0.3, 0.2, 0.2, 0.2]);
        let s = dist(&[0.1, 0.6, 0.1, 0.1, 0.1]);
        let b = dist(&[0.2; 5]);
        let view = PositionView { target: &t, base: Some(&b), source: Some(&s) };
        let cfg = RegenerationConfig {
            use_local: false,
            weight_mode: WeightMode::Fixed { alpha: 1.0, beta: 0.5 },
            ..Default::default()
        };
        let d = decide_from(view, &cat, &cfg, &mut rng()).unwrap();
        let g = global_score(&t, &s, 1.0, 0.5).unwrap();
        let best = (0..3).max_by(|&a, &b| g[a].partial_cmp(&g[b]).unwrap().then(b.cmp(&a))).unwrap();
        assert!(matches!(d.decision, TransformDecision::Replace { item, .. } if item.index() == best + 1));
        assert_eq!(d.local_argmax, None);
    }

    #[test]
    fn all_target_sequence_is_unchanged() {
        let cat = catalog();
        let seq = MergedSequence {
            user: "u".into(),
            events: [1, 2, 3, 1]
                .iter()
                .enumerate()
                .map(|(t, &i)| Interaction { item: ItemId(i), timestamp: t as u64, domain: DomainId(0) })
                .collect(),
        };
        let r = regenerate_sequence(&seq, &experts(&cat), &cat, &RegenerationConfig::default()).unwrap();
        assert_eq!(r.events, seq.events);
        assert!(r.records.is_empty() && !r.degenerate);
    }

    #[test]
    fn mixed_sequence_matches_manual_trace() {
        let cat = catalog();
        let ex = experts(&cat);
        let cfg = RegenerationConfig::default();
        let tagged = [(1, 0), (4, 1), (2, 0)];
        let seq = MergedSequence {
            user: "u".into(),
            events: tagged
                .iter()
                .enumerate()
                .map(|(t, &(i, d))| Interaction { item: ItemId(i), timestamp: 10 + t as u64, domain: DomainId(d) })
                .collect(),
        };
        let r = regenerate_sequence(&seq, &ex, &cat, &cfg).unwrap();
        let manual = decide(&cat, &[ItemId(1)], ItemId(4), &ex, &cfg).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.records[0].decision, manual.decision);
        assert_eq!(r.records[0].weights, manual.weights);
        let expected: Vec<ItemId> = match manual.decision {
            TransformDecision::Replace { item, .. } => vec![ItemId(1), item, ItemId(2)],
            _ => vec![ItemId(1), ItemId(2)],
        };
        assert_eq!(r.as_merged().items(), expected);
        assert!(r.events.iter().all(|e| e.domain == DomainId(0)));
    }

    #[test]
    fn truncation_equals_regenerating_the_prefix() {
        let cat = catalog();
        let ex = experts(&cat);
        let cfg = RegenerationConfig::default();
        let tagged = [(1, 0), (4, 1), (2, 0), (5, 1), (4, 1), (3, 0), (5, 1)];
        let seq = MergedSequence {
            user: "u".into(),
            events: tagged
                .iter()
                .enumerate()
                .map(|(t, &(i, d))| Interaction { item: ItemId(i), timestamp: t as u64, domain: DomainId(d) })
                .collect(),
        };
        let full = regenerate_sequence(&seq, &ex, &cat, &cfg).unwrap();
        for cut in 0..=seq.len() {
            let prefix = MergedSequence { user: "u".into(), events: seq.events[..cut].to_vec() };
            assert_eq!(full.truncated(cut), regenerate_sequence(&prefix, &ex, &cat, &cfg).unwrap());
        }
    }

    #[test]
    fn lone_source_item_is_degenerate() {
        let cat = catalog();
        let seq = MergedSequence {
            user: "u".into(),
            events: vec![Interaction { item: ItemId(5), timestamp: 0, domain: DomainId(1) }],
        };
        let r = regenerate_sequence(&seq, &experts(&cat), &cat, &RegenerationConfig::default()).unwrap();
        assert!(r.events.is_empty() && r.degenerate);
        assert_eq!(r.records[0].decision, TransformDecision::Discard);

        let cfg = RegenerationConfig { discard_policy: DiscardPolicy::PlaceholderToken, ..Default::default() };
        let r = regenerate_sequence(&seq, &experts(&cat), &cat, &cfg).unwrap();
        assert_eq!(r.events[0].item, ItemId::PADDING);
        assert!(r.degenerate);
    }

    #[test]
    fn missing_source_expert_is_reported() {
        let cat = catalog();
        let mut ex = experts(&cat);
        ex.sources.clear();
        let seq = MergedSequence {
            user: "u".into(),
            events: vec![
                Interaction { item: ItemId(1), timestamp: 0, domain: DomainId(0) },
                Interaction { item: ItemId(4), timestamp: 1, domain: DomainId(1) },
            ],
        };
        assert!(matches!(
            regenerate_sequence(&seq, &ex, &cat, &RegenerationConfig::default()),
            Err(ContrastiveError::MissingExpert(_))
        ));
        let cfg = RegenerationConfig { use_source_expert: false, ..Default::default() };
        assert!(regenerate_sequence(&seq, &ex, &cat, &cfg).is_ok());
    }

    #[test]
    fn sampling_is_seeded() {
        let cat = catalog();
        let t = dist(&[0.4, 0.35, 0.25, 0.0, 0.0]);
        let view = PositionView { target: &t, base: None, source: None };
        let cfg = RegenerationConfig { use_source_expert: false, temperature: Some(1.0), ..Default::default() };
        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..40)
                .map(|_| match decide_from(view, &cat, &cfg, &mut r).unwrap().decision {
                    TransformDecision::Replace { item, .. } => item.0,
                    _ => 0,
                })
                .collect::<Vec<_>>()
        };
        let a = draw(3);
        assert_eq!(a, draw(3));
        assert!(a.iter().all(|&i| (1..=3).contains(&i)));
        assert!(a.iter().any(|&i| i != a[0]));
    }
}
