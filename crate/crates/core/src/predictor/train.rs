use std::io::{self, Write};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{pairs_by_domain, DomainCatalog, DomainId, EvalInstance, ItemId, MergedSequence};
use crate::evaluation::rank_by_scores;

use super::network::{Dropout, Network, TrainSeq};
use super::{
    fit_markov_dsp, Adam, Backend, PredictorConfig, PredictorError, PredictorModel, Role,
};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_ndcg10: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    /// Mean cross-entropy of the initial parameters, without dropout.
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// Last epoch that ran.
    pub stopping_epoch: usize,
    /// Epoch whose parameters were kept (0 = the initial parameters).
    pub best_epoch: usize,
    pub seconds: f64,
}

impl TrainingReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    /// `epoch,train_loss,valid_ng10`; epoch 0 is the initial loss.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "epoch,train_loss,valid_ng10")?;
        writeln!(w, "0,{:.6},", self.initial_loss)?;
        for e in &self.epochs {
            match e.valid_ndcg10 {
                Some(v) => writeln!(w, "{},{:.6},{:.6}", e.epoch, e.train_loss, v)?,
                None => writeln!(w, "{},{:.6},", e.epoch, e.train_loss)?,
            }
        }
        Ok(())
    }
}

/// Held-out instances for early stopping, ranked against `candidates`.
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub instances: &'a [EvalInstance],
    pub candidates: &'a [ItemId],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptOptions {
    /// Start from the base parameters; `false` trains the expert from scratch.
    pub from_base: bool,
    /// Predict the next in-domain item from the full mixed prefix; `false`
    /// trains on the domain-only subsequence instead.
    pub use_dsp: bool,
}

impl Default for AdaptOptions {
    fn default() -> Self {
        Self {
            from_base: true,
            use_dsp: true,
        }
    }
}

fn tail(items: &[ItemId], n: usize) -> &[ItemId] {
    &items[items.len().saturating_sub(n)..]
}

/// Next-item sequences over the most recent `max_len + 1` events.
pub fn build_next_item_data(sequences: &[MergedSequence], max_len: usize) -> Vec<TrainSeq> {
    sequences
        .iter()
        .filter(|s| s.len() >= 2)
        .map(|s| TrainSeq::next_item(tail(&s.items(), max_len + 1)))
        .collect()
}

/// Domain-specific prediction data: targets only at the context ends of
/// `domain`'s pairs. With `hold_out_last`, each user's final pair (when the
/// user has at least two) becomes a validation instance instead.
pub fn build_dsp_data(
    sequences: &[MergedSequence],
    domain: DomainId,
    max_len: usize,
    hold_out_last: bool,
) -> (Vec<TrainSeq>, Vec<EvalInstance>) {
    let mut data = Vec::new();
    let mut held = Vec::new();
    for s in sequences {
        let mut pairs = pairs_by_domain(s.events.iter().map(|e| e.domain), domain);
        if pairs.is_empty() {
            continue;
        }
        let items = s.items();
        if hold_out_last && pairs.len() >= 2 {
            let (i, t) = pairs.pop().unwrap();
            held.push(EvalInstance {
                user: s.user.clone(),
                context: items[..i].to_vec(),
                context_domains: s.domains()[..i].to_vec(),
                label: items[t - 1],
                domain,
            });
        }
        let end = pairs.last().unwrap().0;
        let mut targets = vec![ItemId::PADDING; end];
        for (i, t) in &pairs {
            targets[i - 1] = items[t - 1];
        }
        data.push(
            TrainSeq {
                tokens: items[..end].to_vec(),
                targets,
            }
            .truncated(max_len),
        );
    }
    (data, held)
}

fn mean_loss(net: &Network<f32>, data: &[TrainSeq]) -> f64 {
    let (mut total, mut n) = (0.0, 0usize);
    for s in data {
        total += net.loss(s);
        n += s.n_targets();
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

fn validation_ndcg10(net: &Network<f32>, v: &Validation<'_>) -> f64 {
    if v.instances.is_empty() {
        return 0.0;
    }
    let max_len = net.shape().max_len;
    let mut total = 0.0;
    for inst in v.instances {
        let scores = net.scores_last(tail(&inst.context, max_len));
        let cand: Vec<f64> = v
            .candidates
            .iter()
            .map(|c| f64::from(scores[c.index() - 1]))
            .collect();
        if let Ok(rank) = rank_by_scores(v.candidates, &cand, inst.label) {
            if rank <= 10 {
                total += 1.0 / ((rank + 1) as f64).log2();
            }
        }
    }
    total / v.instances.len() as f64
}

/// Groups a shuffled order into batches of similar-length sequences.
fn bucketed_batches(order: &[usize], data: &[TrainSeq], batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let window = batch * 16;
    let mut batches = Vec::new();
    for chunk in order.chunks(window) {
        let mut c = chunk.to_vec();
        c.sort_by_key(|&i| data[i].tokens.len());
        batches.extend(c.chunks(batch).map(|b| b.to_vec()));
    }
    batches.shuffle(rng);
    batches
}

/// Adam training with optional early stopping on validation NG@10. The
/// parameters left in `net` are those of the best validation epoch (or of
/// the last epoch when there is no validation set).
pub fn fit_network(
    net: &mut Network<f32>,
    data: &[TrainSeq],
    validation: Option<Validation<'_>>,
    cfg: &PredictorConfig,
    seed: u64,
) -> Result<TrainingReport, PredictorError> {
    let start = Instant::now();
    let data: Vec<TrainSeq> = data
        .iter()
        .filter(|s| s.n_targets() > 0)
        .cloned()
        .map(|s| s.truncated(cfg.max_len))
        .collect();
    if data.is_empty() {
        return Err(PredictorError::NoTrainingData);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::<f32>::new(net.n_params(), cfg.lr);
    let mut grad = vec![0.0f32; net.n_params()];
    let initial_loss = mean_loss(net, &data);

    let validation = validation.filter(|v| !v.instances.is_empty());
    let mut best_score = validation.as_ref().map(|v| validation_ndcg10(net, v));
    let mut best_params = net.params().to_vec();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let batches = bucketed_batches(&order, &data, cfg.batch_size, &mut rng);
        let (mut epoch_loss, mut epoch_targets) = (0.0, 0usize);
        for batch in batches {
            let n_targets: usize = batch.iter().map(|&i| data[i].n_targets()).sum();
            let scale = 1.0 / n_targets as f32;
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &i in &batch {
                let mut dropout = Dropout {
                    rate: cfg.dropout,
                    rng: &mut rng,
                };
                batch_loss += net.loss_and_grad(&data[i], scale, &mut grad, Some(&mut dropout));
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(PredictorError::DivergedLoss { epoch });
            }
            adam.step(net.params_mut(), &grad);
            if !net.is_finite() {
                return Err(PredictorError::DivergedLoss { epoch });
            }
            epoch_loss += batch_loss;
            epoch_targets += n_targets;
        }
        let train_loss = epoch_loss / epoch_targets as f64;
        let score = validation.as_ref().map(|v| validation_ndcg10(net, v));
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            valid_ndcg10: score,
        });
        match (score, best_score) {
            (Some(s), Some(b)) => {
                if s > b {
                    best_score = Some(s);
                    best_params.copy_from_slice(net.params());
                    best_epoch = epoch;
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= cfg.patience {
                        break;
                    }
                }
            }
            _ => {
                best_params.copy_from_slice(net.params());
                best_epoch = epoch;
            }
        }
    }
    net.params_mut().copy_from_slice(&best_params);
    Ok(TrainingReport {
        initial_loss,
        stopping_epoch: epochs.len(),
        best_epoch,
        epochs,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn salt(role: Role) -> u64 {
    match role {
        Role::Base => 0x5eed_ba5e,
        Role::TargetExpert => 0x7a59_e7e7,
        Role::SourceExpert(d) => 0x5005_0000 + d.0 as u64,
    }
}

fn fresh_network(catalog: &DomainCatalog, cfg: &PredictorConfig, role: Role) -> Network<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ salt(role) ^ 0x1417);
    Network::random(cfg.shape(catalog.n_items()), cfg.init_std, &mut rng)
}

/// Pretrains the base model on next-item prediction over mixed sequences,
/// early-stopping on `validation` ranked against the full vocabulary.
pub fn train_base(
    catalog: &DomainCatalog,
    sequences: &[MergedSequence],
    validation: &[EvalInstance],
    cfg: &PredictorConfig,
) -> Result<(PredictorModel, TrainingReport), PredictorError> {
    let all: Vec<ItemId> = (1..=catalog.n_items() as u32).map(ItemId).collect();
    let v = Validation {
        instances: validation,
        candidates: &all,
    };
    train_next_item(catalog, sequences, Some(v), cfg)
}

/// Next-item training from a fresh initialisation with an arbitrary
/// validation candidate set. The returned model has the base role.
pub fn train_next_item(
    catalog: &DomainCatalog,
    sequences: &[MergedSequence],
    validation: Option<Validation<'_>>,
    cfg: &PredictorConfig,
) -> Result<(PredictorModel, TrainingReport), PredictorError> {
    cfg.validate()?;
    let data = build_next_item_data(sequences, cfg.max_len);
    if data.is_empty() {
        return Err(PredictorError::NoTrainingData);
    }
    let mut net = fresh_network(catalog, cfg, Role::Base);
    let report = fit_network(&mut net, &data, validation, cfg, cfg.seed ^ salt(Role::Base))?;
    Ok((
        PredictorModel::new(Role::Base, Backend::Neural(net), cfg.clone(), catalog),
        report,
    ))
}

/// Adapts a domain expert. Validation instances (by default each user's
/// held-out last pair) are ranked against the full vocabulary, so early
/// stopping also rewards moving probability mass onto the domain.
pub fn adapt_domain(
    base: &PredictorModel,
    catalog: &DomainCatalog,
    sequences: &[MergedSequence],
    domain: DomainId,
    validation: Option<&[EvalInstance]>,
    cfg: &PredictorConfig,
    opts: AdaptOptions,
) -> Result<(PredictorModel, TrainingReport), PredictorError> {
    cfg.validate()?;
    base.check_catalog(catalog)?;
    if base.role != Role::Base {
        return Err(PredictorError::WrongRole {
            expected: "base".into(),
            found: base.role.label(catalog),
        });
    }
    if !catalog.contains_domain(domain) {
        return Err(PredictorError::InvalidArgument(format!("unknown domain #{}", domain.0)));
    }
    let role = Role::for_domain(catalog, domain);
    let domain_name = catalog.domain_name(domain).to_string();

    let net = match &base.backend {
        Backend::Markov(table) => {
            let mut model = fit_markov_dsp(catalog, sequences, domain, table.smoothing)?;
            model.config = base.config.clone();
            return Ok((model, TrainingReport {
                initial_loss: 0.0,
                epochs: Vec::new(),
                stopping_epoch: 0,
                best_epoch: 0,
                seconds: 0.0,
            }));
        }
        Backend::Neural(net) => net,
    };

    let (data, held) = if opts.use_dsp {
        build_dsp_data(sequences, domain, cfg.max_len, validation.is_none())
    } else {
        let restricted: Vec<MergedSequence> = sequences.iter().map(|s| s.restrict_to(domain)).collect();
        let data = build_next_item_data(&restricted, cfg.max_len);
        let held = if validation.is_none() {
            build_dsp_data(sequences, domain, cfg.max_len, true).1
        } else {
            Vec::new()
        };
        (data, held)
    };
    if data.iter().all(|s| s.n_targets() == 0) {
        return Err(PredictorError::NoPairs(domain_name));
    }

    let mut net = if opts.from_base {
        if net.shape() != &cfg.shape(catalog.n_items()) {
            return Err(PredictorError::InvalidConfig(
                "adaptation config must match the base model's architecture".into(),
            ));
        }
        net.clone()
    } else {
        fresh_network(catalog, cfg, role)
    };
    let instances = validation.unwrap_or(&held);
    let all: Vec<ItemId> = (1..=catalog.n_items() as u32).map(ItemId).collect();
    let v = Validation {
        instances,
        candidates: &all,
    };
    let report = fit_network(&mut net, &data, Some(v), cfg, cfg.seed ^ salt(role))?;
    Ok((
        PredictorModel::new(role, Backend::Neural(net), cfg.clone(), catalog),
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Interaction;

    fn seq(user: &str, tagged: &[(u32, u16)]) -> MergedSequence {
        MergedSequence {
            user: user.into(),
            events: tagged
                .iter()
                .enumerate()
                .map(|(t, &(i, d))| Interaction {
                    item: ItemId(i),
                    timestamp: t as u64,
                    domain: DomainId(d),
                })
                .collect(),
        }
    }

    #[test]
    fn dsp_targets_sit_at_context_ends() {
        // T S S T T  -> pairs (1,4), (4,5)
        let s = seq("u", &[(1, 0), (7, 1), (8, 1), (2, 0), (3, 0)]);
        let (data, held) = build_dsp_data(std::slice::from_ref(&s), DomainId(0), 128, false);
        assert!(held.is_empty());
        assert_eq!(data[0].tokens.len(), 4);
        assert_eq!(data[0].targets, vec![ItemId(2), ItemId::PADDING, ItemId::PADDING, ItemId(3)]);

        let (data, held) = build_dsp_data(&[s], DomainId(0), 128, true);
        assert_eq!(held.len(), 1);
        assert_eq!(held[0].context.len(), 4);
        assert_eq!(held[0].label, ItemId(3));
        assert_eq!(data[0].targets, vec![ItemId(2)]);
    }

    #[test]
    fn next_item_data_keeps_recent_window() {
        let s = seq("u", &[(1, 0), (2, 0), (3, 0), (4, 0), (5, 0)]);
        let d = build_next_item_data(&[s], 3);
        assert_eq!(d[0].tokens, vec![ItemId(2), ItemId(3), ItemId(4)]);
        assert_eq!(d[0].targets, vec![ItemId(3), ItemId(4), ItemId(5)]);
    }
}
