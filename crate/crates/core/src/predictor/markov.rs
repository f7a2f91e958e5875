use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{pairs_by_domain, DomainCatalog, DomainId, ItemId, MergedSequence};

use super::{Backend, PredictiveDistribution, PredictorConfig, PredictorError, PredictorModel, Role};

/// First-order transition counts with additive smoothing:
/// `P(v | …, last) = (count(last→v) + s) / (count(last→·) + s·|V|)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovTable {
    pub smoothing: f64,
    pub n_items: usize,
    rows: BTreeMap<u32, BTreeMap<u32, u64>>,
}

impl MarkovTable {
    pub fn new(n_items: usize, smoothing: f64) -> Result<Self, PredictorError> {
        if !(smoothing > 0.0 && smoothing.is_finite()) {
            return Err(PredictorError::InvalidArgument(format!(
                "smoothing must be positive, got {smoothing}"
            )));
        }
        Ok(Self {
            smoothing,
            n_items,
            rows: BTreeMap::new(),
        })
    }

    pub fn observe(&mut self, from: ItemId, to: ItemId) {
        *self.rows.entry(from.0).or_default().entry(to.0).or_insert(0) += 1;
    }

    pub fn count(&self, from: ItemId, to: ItemId) -> u64 {
        self.rows
            .get(&from.0)
            .and_then(|r| r.get(&to.0))
            .copied()
            .unwrap_or(0)
    }

    pub fn n_transitions(&self) -> u64 {
        self.rows.values().flat_map(|r| r.values()).sum()
    }

    pub fn probabilities(&self, last: ItemId) -> Vec<f64> {
        let s = self.smoothing;
        let row = self.rows.get(&last.0);
        let total: u64 = row.map(|r| r.values().sum()).unwrap_or(0);
        let denom = total as f64 + s * self.n_items as f64;
        let mut p = vec![s / denom; self.n_items];
        if let Some(row) = row {
            for (&to, &c) in row {
                p[to as usize - 1] = (c as f64 + s) / denom;
            }
        }
        p
    }

    pub(crate) fn distribution(
        &self,
        last: ItemId,
        support: Arc<[ItemId]>,
    ) -> Result<PredictiveDistribution, PredictorError> {
        PredictiveDistribution::from_weights(support, self.probabilities(last))
    }
}

/// Fits consecutive-transition counts over every merged sequence.
pub fn fit_markov(
    catalog: &DomainCatalog,
    sequences: &[MergedSequence],
    smoothing: f64,
) -> Result<PredictorModel, PredictorError> {
    if sequences.iter().all(|s| s.len() < 2) {
        return Err(PredictorError::NoTrainingData);
    }
    let mut table = MarkovTable::new(catalog.n_items(), smoothing)?;
    for s in sequences {
        for w in s.events.windows(2) {
            table.observe(w[0].item, w[1].item);
        }
    }
    Ok(PredictorModel::new(
        Role::Base,
        Backend::Markov(table),
        PredictorConfig::default(),
        catalog,
    ))
}

/// Counts `x_i → x_t` over the domain-specific prediction pairs of `domain`.
pub fn fit_markov_dsp(
    catalog: &DomainCatalog,
    sequences: &[MergedSequence],
    domain: DomainId,
    smoothing: f64,
) -> Result<PredictorModel, PredictorError> {
    let mut table = MarkovTable::new(catalog.n_items(), smoothing)?;
    for s in sequences {
        for (i, t) in pairs_by_domain(s.events.iter().map(|e| e.domain), domain) {
            table.observe(s.events[i - 1].item, s.events[t - 1].item);
        }
    }
    if table.n_transitions() == 0 {
        return Err(PredictorError::NoPairs(catalog.domain_name(domain).to_string()));
    }
    Ok(PredictorModel::new(
        Role::for_domain(catalog, domain),
        Backend::Markov(table),
        PredictorConfig::default(),
        catalog,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_ratios() {
        let mut t = MarkovTable::new(3, 1e-12).unwrap();
        for _ in 0..3 {
            t.observe(ItemId(1), ItemId(2));
        }
        t.observe(ItemId(1), ItemId(3));
        let p = t.probabilities(ItemId(1));
        assert!((p[1] - 0.75).abs() < 1e-9);
        assert!((p[2] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn unseen_row_is_uniform() {
        let t = MarkovTable::new(5, 1.0).unwrap();
        let p = t.probabilities(ItemId(4));
        assert!(p.iter().all(|v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn rejects_nonpositive_smoothing() {
        assert!(MarkovTable::new(3, 0.0).is_err());
    }
}
