use std::sync::Arc;

use crate::corpus::ItemId;

use super::network::log_softmax_in_place;
use super::PredictorError;

/// A categorical distribution over an ascending list of items.
///
/// Both probabilities and log-probabilities are kept; log-probabilities come
/// straight from a log-softmax so they stay finite even where the
/// probability underflows.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    support: Arc<[ItemId]>,
    probs: Vec<f64>,
    logprobs: Vec<f64>,
}

impl PredictiveDistribution {
    /// Normalises raw scores with a log-softmax.
    pub fn from_logits(support: Arc<[ItemId]>, mut logits: Vec<f64>) -> Result<Self, PredictorError> {
        check_support(&support, logits.len())?;
        if logits.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(PredictorError::NonFinite);
        }
        log_softmax_in_place(&mut logits);
        let probs = logits.iter().map(|v| v.exp()).collect();
        Ok(Self {
            support,
            probs,
            logprobs: logits,
        })
    }

    /// From nonnegative weights (normalised here).
    pub fn from_weights(support: Arc<[ItemId]>, weights: Vec<f64>) -> Result<Self, PredictorError> {
        check_support(&support, weights.len())?;
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(PredictorError::NonFinite);
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(PredictorError::NonFinite);
        }
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let logprobs = probs.iter().map(|p| p.ln()).collect();
        Ok(Self {
            support,
            probs,
            logprobs,
        })
    }

    pub fn support(&self) -> &[ItemId] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn logprobs(&self) -> &[f64] {
        &self.logprobs
    }

    fn position(&self, item: ItemId) -> Option<usize> {
        // Fast path for the full vocabulary `1..=n`.
        let i = item.index().wrapping_sub(1);
        if self.support.get(i) == Some(&item) {
            return Some(i);
        }
        self.support.binary_search(&item).ok()
    }

    pub fn prob(&self, item: ItemId) -> Option<f64> {
        self.position(item).map(|i| self.probs[i])
    }

    pub fn logprob(&self, item: ItemId) -> Option<f64> {
        self.position(item).map(|i| self.logprobs[i])
    }

    /// Most probable item; ties go to the smallest id.
    pub fn argmax(&self) -> ItemId {
        let mut best = 0;
        for (i, &lp) in self.logprobs.iter().enumerate() {
            if lp > self.logprobs[best] {
                best = i;
            }
        }
        self.support[best]
    }

    /// Restriction to `subset` (ascending), renormalised to sum to one.
    pub fn restrict(&self, subset: &[ItemId]) -> Result<Self, PredictorError> {
        let picked: Vec<f64> = subset
            .iter()
            .map(|&it| self.logprob(it).ok_or(PredictorError::SupportMismatch))
            .collect::<Result<_, _>>()?;
        Self::from_logits(Arc::from(subset), picked)
    }
}

fn check_support(support: &[ItemId], n: usize) -> Result<(), PredictorError> {
    if support.len() != n || n == 0 {
        return Err(PredictorError::SupportMismatch);
    }
    if support.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PredictorError::SupportMismatch);
    }
    Ok(())
}

/// `[1, 2, …, n]` as a shared support.
pub fn full_support(n_items: usize) -> Arc<[ItemId]> {
    (1..=n_items as u32).map(ItemId).collect::<Vec<_>>().into()
}
