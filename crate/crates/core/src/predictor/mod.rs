//! Next-item predictors: the attention decoder used for the base model and
//! domain experts, plus an exactly computable smoothed Markov backend.

mod adam;
mod checkpoint;
mod distribution;
mod gradcheck;
mod markov;
pub mod network;
mod train;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{DomainCatalog, DomainId, ItemId};

pub use adam::Adam;
pub use distribution::{full_support, PredictiveDistribution};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use markov::{fit_markov, fit_markov_dsp, MarkovTable};
pub use network::{Network, Shape, TrainSeq};
pub use train::{
    adapt_domain, build_dsp_data, build_next_item_data, fit_network, train_base, train_next_item,
    AdaptOptions, EpochRecord, TrainingReport, Validation,
};

#[derive(Debug, thiserror::Error)]
pub enum PredictorError {
    #[error("model was built for catalog {expected}, got {found}")]
    VocabMismatch { expected: String, found: String },
    #[error("prefix must contain at least one item")]
    EmptyPrefix,
    #[error("item {0} is not in the vocabulary")]
    UnknownItem(ItemId),
    #[error("distributions have different supports")]
    SupportMismatch,
    #[error("non-finite or invalid probabilities")]
    NonFinite,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("loss became non-finite in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("domain `{0}` has no valid prediction pairs")]
    NoPairs(String),
    #[error("no training sequences")]
    NoTrainingData,
    #[error("expected a {expected} model, got {found}")]
    WrongRole { expected: String, found: String },
    #[error("gradient check failed: max relative error {max_rel_error:e} > {tolerance:e}")]
    CheckFailed { max_rel_error: f64, tolerance: f64 },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Hyperparameters shared by base pretraining and domain adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub hidden_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub inner_size: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Standard deviation of the normal weight initialisation.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            hidden_size: 128,
            layers: 2,
            heads: 2,
            inner_size: 128,
            dropout: 0.2,
            max_len: 128,
            lr: 1e-3,
            max_epochs: 300,
            patience: 30,
            batch_size: 128,
            init_std: 0.02,
            seed: 42,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<(), PredictorError> {
        let bad = |m: &str| Err(PredictorError::InvalidConfig(m.to_string()));
        if self.hidden_size == 0 || self.layers == 0 || self.heads == 0 || self.inner_size == 0 {
            return bad("hidden_size, layers, heads and inner_size must be positive");
        }
        if !self.hidden_size.is_multiple_of(self.heads) {
            return bad("hidden_size must be divisible by heads");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.max_len == 0 || self.batch_size == 0 || self.patience == 0 {
            return bad("max_len, batch_size and patience must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad("init_std must be positive");
        }
        Ok(())
    }

    pub fn shape(&self, n_items: usize) -> Shape {
        Shape {
            n_items,
            hidden: self.hidden_size,
            heads: self.heads,
            inner: self.inner_size,
            layers: self.layers,
            max_len: self.max_len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Base,
    TargetExpert,
    SourceExpert(DomainId),
}

impl Role {
    pub fn for_domain(catalog: &DomainCatalog, domain: DomainId) -> Self {
        if domain == catalog.target() {
            Role::TargetExpert
        } else {
            Role::SourceExpert(domain)
        }
    }

    pub fn label(&self, catalog: &DomainCatalog) -> String {
        match self {
            Role::Base => "base".into(),
            Role::TargetExpert => format!("expert-{}", catalog.domain_name(catalog.target())),
            Role::SourceExpert(d) => format!("expert-{}", catalog.domain_name(*d)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    Neural(Network<f32>),
    Markov(MarkovTable),
}

/// A trained predictor bound to one catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub role: Role,
    pub backend: Backend,
    pub config: PredictorConfig,
    fingerprint: String,
    support: Arc<[ItemId]>,
}

impl PredictorModel {
    pub fn new(role: Role, backend: Backend, config: PredictorConfig, catalog: &DomainCatalog) -> Self {
        Self::with_fingerprint(role, backend, config, catalog.fingerprint().to_string(), catalog.n_items())
    }

    pub(crate) fn with_fingerprint(
        role: Role,
        backend: Backend,
        config: PredictorConfig,
        fingerprint: String,
        n_items: usize,
    ) -> Self {
        Self {
            role,
            backend,
            config,
            fingerprint,
            support: full_support(n_items),
        }
    }

    pub fn catalog_fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn n_items(&self) -> usize {
        self.support.len()
    }

    pub fn network(&self) -> Option<&Network<f32>> {
        match &self.backend {
            Backend::Neural(n) => Some(n),
            Backend::Markov(_) => None,
        }
    }

    pub fn check_catalog(&self, catalog: &DomainCatalog) -> Result<(), PredictorError> {
        if catalog.fingerprint() != self.fingerprint {
            return Err(PredictorError::VocabMismatch {
                expected: self.fingerprint.clone(),
                found: catalog.fingerprint().to_string(),
            });
        }
        Ok(())
    }

    fn check_items(&self, items: &[ItemId]) -> Result<(), PredictorError> {
        if let Some(bad) = items
            .iter()
            .find(|i| i.index() == 0 || i.index() > self.support.len())
        {
            return Err(PredictorError::UnknownItem(*bad));
        }
        Ok(())
    }

    /// Next-item distribution over the full vocabulary. Only the most
    /// recent `max_len` prefix items are used.
    pub fn predict_next(
        &self,
        catalog: &DomainCatalog,
        prefix: &[ItemId],
    ) -> Result<PredictiveDistribution, PredictorError> {
        self.check_catalog(catalog)?;
        self.predict_unchecked(prefix)
    }

    pub(crate) fn predict_unchecked(&self, prefix: &[ItemId]) -> Result<PredictiveDistribution, PredictorError> {
        if prefix.is_empty() {
            return Err(PredictorError::EmptyPrefix);
        }
        self.check_items(prefix)?;
        match &self.backend {
            Backend::Neural(net) => {
                let start = prefix.len().saturating_sub(net.shape().max_len);
                let scores = net.scores_last(&prefix[start..]);
                PredictiveDistribution::from_logits(
                    self.support.clone(),
                    scores.into_iter().map(f64::from).collect(),
                )
            }
            Backend::Markov(table) => table.distribution(*prefix.last().unwrap(), self.support.clone()),
        }
    }

    /// Distributions after each prefix `items[..p]` for `p` in `ends`
    /// (every `p ≥ 1`). Equivalent to calling [`predict_next`](Self::predict_next)
    /// per prefix, but shares one causal forward pass where possible.
    pub fn predict_prefixes(
        &self,
        catalog: &DomainCatalog,
        items: &[ItemId],
        ends: &[usize],
    ) -> Result<Vec<PredictiveDistribution>, PredictorError> {
        self.check_catalog(catalog)?;
        if ends.iter().any(|&p| p == 0 || p > items.len()) {
            return Err(PredictorError::EmptyPrefix);
        }
        let Some(&furthest) = ends.iter().max() else {
            return Ok(Vec::new());
        };
        self.check_items(&items[..furthest])?;
        match &self.backend {
            Backend::Neural(net) if furthest <= net.shape().max_len => {
                let rows = net.scores_all(&items[..furthest]);
                ends.iter()
                    .map(|&p| {
                        PredictiveDistribution::from_logits(
                            self.support.clone(),
                            rows[p - 1].iter().map(|&v| f64::from(v)).collect(),
                        )
                    })
                    .collect()
            }
            _ => ends.iter().map(|&p| self.predict_unchecked(&items[..p])).collect(),
        }
    }
}
