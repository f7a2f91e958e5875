use std::sync::{Arc, OnceLock};

use super::{CorpusError, DomainCatalog, DomainId, ItemId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Interaction {
    pub item: ItemId,
    pub timestamp: u64,
    pub domain: DomainId,
}

/// One user's interactions inside a single domain, sorted by timestamp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSequence {
    pub user: String,
    pub domain: DomainId,
    pub events: Vec<Interaction>,
}

/// A user's chronologically interleaved, domain-tagged history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedSequence {
    pub user: String,
    pub events: Vec<Interaction>,
}

impl MergedSequence {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn items(&self) -> Vec<ItemId> {
        self.events.iter().map(|e| e.item).collect()
    }

    pub fn domains(&self) -> Vec<DomainId> {
        self.events.iter().map(|e| e.domain).collect()
    }

    pub fn count_in(&self, domain: DomainId) -> usize {
        self.events.iter().filter(|e| e.domain == domain).count()
    }

    /// The subsequence of events that belong to `domain`.
    pub fn restrict_to(&self, domain: DomainId) -> MergedSequence {
        MergedSequence {
            user: self.user.clone(),
            events: self.events.iter().filter(|e| e.domain == domain).copied().collect(),
        }
    }

    /// Keeps only the most recent `max_len` events.
    pub fn truncate_front(&mut self, max_len: usize) {
        if self.events.len() > max_len {
            let cut = self.events.len() - max_len;
            self.events.drain(..cut);
        }
    }

    /// Splits the merged history back into per-domain sequences, in catalog
    /// domain order. Domains without events are omitted.
    pub fn split_domains(&self, n_domains: usize) -> Vec<UserSequence> {
        let mut per: Vec<Vec<Interaction>> = vec![Vec::new(); n_domains];
        for e in &self.events {
            per[e.domain.index()].push(*e);
        }
        per.into_iter()
            .enumerate()
            .filter(|(_, ev)| !ev.is_empty())
            .map(|(d, events)| UserSequence {
                user: self.user.clone(),
                domain: DomainId(d as u16),
                events,
            })
            .collect()
    }
}

/// Merges one user's per-domain sequences by timestamp.
///
/// Ties are broken by catalog domain order, then by input order, then by
/// position within the input, so the result is fully deterministic.
pub fn interleave(per_domain: &[UserSequence]) -> Result<MergedSequence, CorpusError> {
    let user = match per_domain.first() {
        Some(s) => s.user.clone(),
        None => return Err(CorpusError::EmptyInput),
    };
    if let Some(other) = per_domain.iter().find(|s| s.user != user) {
        return Err(CorpusError::MixedUsers(user, other.user.clone()));
    }
    let total: usize = per_domain.iter().map(|s| s.events.len()).sum();
    if total == 0 {
        return Err(CorpusError::EmptyInput);
    }
    let mut keyed = Vec::with_capacity(total);
    for (input, seq) in per_domain.iter().enumerate() {
        if seq.events.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
            return Err(CorpusError::NotSorted(seq.user.clone()));
        }
        for (pos, e) in seq.events.iter().enumerate() {
            keyed.push(((e.timestamp, e.domain, input, pos), *e));
        }
    }
    keyed.sort_unstable_by_key(|(k, _)| *k);
    Ok(MergedSequence {
        user,
        events: keyed.into_iter().map(|(_, e)| e).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserRecord {
    pub user: String,
    /// Per-domain sequences, in catalog domain order.
    pub sequences: Vec<UserSequence>,
}

/// An immutable multi-domain interaction corpus.
#[derive(Debug)]
pub struct Corpus {
    catalog: Arc<DomainCatalog>,
    users: Vec<UserRecord>,
    merged: OnceLock<Vec<MergedSequence>>,
}

impl Clone for Corpus {
    fn clone(&self) -> Self {
        let merged = OnceLock::new();
        if let Some(m) = self.merged.get() {
            let _ = merged.set(m.clone());
        }
        Self {
            catalog: self.catalog.clone(),
            users: self.users.clone(),
            merged,
        }
    }
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.catalog == other.catalog && self.users == other.users
    }
}

impl Corpus {
    pub fn new(catalog: Arc<DomainCatalog>, users: Vec<UserRecord>) -> Result<Self, CorpusError> {
        let mut seen = std::collections::HashSet::new();
        for u in &users {
            if !seen.insert(u.user.as_str()) {
                return Err(CorpusError::DuplicateUser(u.user.clone()));
            }
            for s in &u.sequences {
                if s.user != u.user {
                    return Err(CorpusError::MixedUsers(u.user.clone(), s.user.clone()));
                }
                for e in &s.events {
                    if catalog.domain_of(e.item) != Some(e.domain) || e.domain != s.domain {
                        return Err(CorpusError::UnknownItem(format!(
                            "{} (user {})",
                            e.item, u.user
                        )));
                    }
                }
            }
        }
        Ok(Self {
            catalog,
            users,
            merged: OnceLock::new(),
        })
    }

    /// Builds a corpus from already-interleaved sequences.
    pub fn from_merged(
        catalog: Arc<DomainCatalog>,
        merged: Vec<MergedSequence>,
    ) -> Result<Self, CorpusError> {
        let n = catalog.n_domains();
        let users = merged
            .iter()
            .map(|m| UserRecord {
                user: m.user.clone(),
                sequences: m.split_domains(n),
            })
            .collect();
        let corpus = Self::new(catalog, users)?;
        for m in &merged {
            if m.events.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
                return Err(CorpusError::NotSorted(m.user.clone()));
            }
        }
        let _ = corpus.merged.set(merged);
        Ok(corpus)
    }

    pub fn catalog(&self) -> &DomainCatalog {
        &self.catalog
    }

    pub fn catalog_arc(&self) -> Arc<DomainCatalog> {
        self.catalog.clone()
    }

    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_interactions(&self) -> usize {
        self.users
            .iter()
            .flat_map(|u| &u.sequences)
            .map(|s| s.events.len())
            .sum()
    }

    /// One merged sequence per user (users with no events are skipped).
    pub fn merged(&self) -> &[MergedSequence] {
        self.merged.get_or_init(|| {
            self.users
                .iter()
                .filter_map(|u| interleave(&u.sequences).ok())
                .collect()
        })
    }

    /// Per-user target-domain-only sequences; users without target events are skipped.
    pub fn target_sequences(&self) -> Vec<MergedSequence> {
        let t = self.catalog.target();
        self.merged()
            .iter()
            .map(|m| m.restrict_to(t))
            .filter(|m| !m.is_empty())
            .collect()
    }
}
