//! Synthetic multi-domain corpora with planted latent clusters, and oracles
//! that score regeneration against the planted truth.
//!
//! Every domain's vocabulary is split evenly across `n_clusters` shared
//! clusters. Each user walks a cluster chain that starts at a preferred
//! cluster and, at every step, stays put with probability
//! `within_cluster_coherence` or jumps to a uniformly drawn cluster. The
//! emitted item is uniform within the current (domain, cluster) cell, or
//! uniform over the whole domain with probability `noise_rate`. Before each
//! event after the first, the user switches to a uniformly drawn other
//! domain with probability `transfer_rate`.

use std::io::{self, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contrastive::{MappingRecord, TransformDecision};
use crate::corpus::{Corpus, CorpusError, DomainCatalog, DomainId, DomainRole, Interaction, ItemId, MergedSequence};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("item {0} is not in the generated vocabulary")]
    UnknownItem(ItemId),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    /// Source domains plus the target domain.
    pub n_domains: usize,
    pub n_clusters: usize,
    pub items_per_domain_per_cluster: usize,
    pub n_users: usize,
    /// Inclusive sequence length bounds.
    pub length_range: (usize, usize),
    pub transfer_rate: f64,
    pub within_cluster_coherence: f64,
    pub noise_rate: f64,
    /// Domain indices whose cells are shifted by one cluster: a user in
    /// latent cluster `c` draws from cell `(c + 1) mod C` there, so the
    /// cross-domain transitions into these domains contradict the others.
    pub anti_correlated_domains: Vec<usize>,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            n_domains: 4,
            n_clusters: 5,
            items_per_domain_per_cluster: 20,
            n_users: 2000,
            length_range: (20, 60),
            transfer_rate: 0.3,
            within_cluster_coherence: 0.9,
            noise_rate: 0.05,
            anti_correlated_domains: Vec::new(),
            seed: 7,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        for (name, v) in [
            ("n_domains", self.n_domains),
            ("n_clusters", self.n_clusters),
            ("items_per_domain_per_cluster", self.items_per_domain_per_cluster),
            ("n_users", self.n_users),
            ("minimum length", self.length_range.0),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.n_domains < 2 {
            return bad("n_domains must be at least 2 (one source plus the target)".into());
        }
        if self.length_range.0 > self.length_range.1 {
            return bad("length_range must be ascending".into());
        }
        if self.n_domains > u16::MAX as usize {
            return bad("too many domains".into());
        }
        for (name, p) in [
            ("transfer_rate", self.transfer_rate),
            ("within_cluster_coherence", self.within_cluster_coherence),
            ("noise_rate", self.noise_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if let Some(d) = self.anti_correlated_domains.iter().find(|&&d| d >= self.n_domains) {
            return bad(format!("anti-correlated domain {d} out of range"));
        }
        Ok(())
    }

    /// `S1..SM` followed by `T`.
    pub fn domain_name(&self, d: usize) -> String {
        if d + 1 == self.n_domains {
            "T".into()
        } else {
            format!("S{}", d + 1)
        }
    }

    fn cells(&self) -> usize {
        self.n_clusters * self.items_per_domain_per_cluster
    }
}

/// Ground-truth cell of every generated item.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMapping {
    /// Indexed by item id; entry 0 (padding) is unused.
    cluster: Vec<u32>,
}

impl OracleMapping {
    pub fn cluster_of(&self, item: ItemId) -> Result<u32, SynthError> {
        if item.index() == 0 {
            return Err(SynthError::UnknownItem(item));
        }
        self.cluster.get(item.index()).copied().ok_or(SynthError::UnknownItem(item))
    }

    pub fn n_items(&self) -> usize {
        self.cluster.len() - 1
    }

    /// `item_id,cluster_id`
    pub fn write_csv<W: Write>(&self, mut w: W, catalog: &DomainCatalog) -> io::Result<()> {
        writeln!(w, "item_id,cluster_id")?;
        for (i, c) in self.cluster.iter().enumerate().skip(1) {
            writeln!(w, "{},{}", catalog.item_name(ItemId(i as u32)), c)?;
        }
        w.flush()
    }
}

fn user_rng(seed: u64, user: usize) -> ChaCha8Rng {
    // splitmix64 finaliser
    let mut z = seed ^ (user as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Generates a corpus and its oracle; deterministic in `spec.seed`.
pub fn generate(spec: &GeneratorSpec) -> Result<(Corpus, OracleMapping), SynthError> {
    spec.validate()?;
    let m = spec.n_domains;
    let per = spec.items_per_domain_per_cluster;
    let cells = spec.cells();
    let domains: Vec<(String, DomainRole)> = (0..m)
        .map(|d| {
            let role = if d + 1 == m { DomainRole::Target } else { DomainRole::Source };
            (spec.domain_name(d), role)
        })
        .collect();
    let names: Vec<(String, String)> = (0..m)
        .flat_map(|d| (0..cells).map(move |k| (d, k)))
        .map(|(d, k)| (format!("{}-{k:04}", spec.domain_name(d)), spec.domain_name(d)))
        .collect();
    let catalog = DomainCatalog::new(domains, names.iter().map(|(i, d)| (i.clone(), d.as_str())))?;

    // item lookup per (domain, cell index); canonical ids follow catalog order
    let id_of = |d: usize, k: usize| -> ItemId {
        catalog
            .item_by_name(&format!("{}-{k:04}", spec.domain_name(d)))
            .expect("generated item")
    };
    let table: Vec<Vec<ItemId>> = (0..m).map(|d| (0..cells).map(|k| id_of(d, k)).collect()).collect();
    let mut cluster = vec![0u32; catalog.n_items() + 1];
    for row in &table {
        for (k, id) in row.iter().enumerate() {
            cluster[id.index()] = (k / per) as u32;
        }
    }
    let shift: Vec<usize> = (0..m)
        .map(|d| spec.anti_correlated_domains.contains(&d) as usize)
        .collect();

    let mut merged = Vec::with_capacity(spec.n_users);
    for u in 0..spec.n_users {
        let mut rng = user_rng(spec.seed, u);
        let len = rng.random_range(spec.length_range.0..=spec.length_range.1);
        let mut c = rng.random_range(0..spec.n_clusters);
        let mut d = rng.random_range(0..m);
        let mut events = Vec::with_capacity(len);
        for t in 0..len {
            if t > 0 {
                if m > 1 && rng.random::<f64>() < spec.transfer_rate {
                    let j = rng.random_range(0..m - 1);
                    d = if j >= d { j + 1 } else { j };
                }
                if rng.random::<f64>() >= spec.within_cluster_coherence {
                    c = rng.random_range(0..spec.n_clusters);
                }
            }
            let k = if rng.random::<f64>() < spec.noise_rate {
                rng.random_range(0..cells)
            } else {
                let cell = (c + shift[d]) % spec.n_clusters;
                cell * per + rng.random_range(0..per)
            };
            events.push(Interaction {
                item: table[d][k],
                timestamp: t as u64 + 1,
                domain: DomainId(d as u16),
            });
        }
        merged.push(MergedSequence {
            user: format!("u{u:05}"),
            events,
        });
    }
    let corpus = Corpus::from_merged(Arc::new(catalog), merged)?;
    Ok((corpus, OracleMapping { cluster }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferAccuracy {
    /// Share of replacements landing in the source item's cluster; `None`
    /// without replacements.
    pub accuracy: Option<f64>,
    pub n_replaced: usize,
    pub n_correct: usize,
    pub n_discarded: usize,
}

/// Scores replacement decisions against the planted clusters. Discards are
/// counted separately and excluded from the accuracy.
pub fn oracle_transfer_accuracy(
    records: &[MappingRecord],
    oracle: &OracleMapping,
) -> Result<TransferAccuracy, SynthError> {
    let mut out = TransferAccuracy {
        accuracy: None,
        n_replaced: 0,
        n_correct: 0,
        n_discarded: 0,
    };
    for r in records {
        match r.decision {
            TransformDecision::Replace { item, .. } => {
                out.n_replaced += 1;
                if oracle.cluster_of(item)? == oracle.cluster_of(r.source_item)? {
                    out.n_correct += 1;
                }
            }
            TransformDecision::Discard => out.n_discarded += 1,
            TransformDecision::Keep => {}
        }
    }
    if out.n_replaced > 0 {
        out.accuracy = Some(out.n_correct as f64 / out.n_replaced as f64);
    }
    Ok(out)
}

/// Monte-Carlo accuracy of replacing every replaced source item with a
/// uniformly drawn target item, averaged over `trials`.
pub fn chance_transfer_accuracy(
    records: &[MappingRecord],
    oracle: &OracleMapping,
    target_vocab: &[ItemId],
    trials: usize,
    seed: u64,
) -> Result<f64, SynthError> {
    let sources: Vec<u32> = records
        .iter()
        .filter(|r| matches!(r.decision, TransformDecision::Replace { .. }))
        .map(|r| oracle.cluster_of(r.source_item))
        .collect::<Result<_, _>>()?;
    if sources.is_empty() || target_vocab.is_empty() || trials == 0 {
        return Ok(0.0);
    }
    let targets: Vec<u32> = target_vocab.iter().map(|&i| oracle.cluster_of(i)).collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..trials {
        let hits = sources
            .iter()
            .filter(|&&c| targets[rng.random_range(0..targets.len())] == c)
            .count();
        total += hits as f64 / sources.len() as f64;
    }
    Ok(total / trials as f64)
}
