use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CorpusError;

/// Dense item index. `0` is reserved for padding; real items start at `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemId(pub u32);

impl ItemId {
    pub const PADDING: ItemId = ItemId(0);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Position of a domain in the catalog order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DomainId(pub u16);

impl DomainId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainRole {
    Target,
    Source,
}

impl DomainRole {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainRole::Target => "target",
            DomainRole::Source => "source",
        }
    }
}

/// The domain universe and the partition of the item vocabulary into
/// per-domain vocabularies.
///
/// Item ids are assigned canonically: grouped by catalog domain order, then by
/// item name. Two catalogs built from the same (domain, item) sets therefore
/// agree on every id and on the fingerprint, regardless of input order.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainCatalog {
    domains: Vec<String>,
    target: DomainId,
    item_names: Vec<String>,
    item_domain: Vec<DomainId>,
    vocab_of: Vec<Vec<ItemId>>,
    by_name: HashMap<String, ItemId>,
    fingerprint: String,
}

impl DomainCatalog {
    /// Builds a catalog from an ordered domain list and `(item, domain)` pairs.
    ///
    /// Duplicate `(item, domain)` pairs are fine; an item listed under two
    /// different domains is rejected.
    pub fn new<I, S, D>(domains: Vec<(String, DomainRole)>, items: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = (S, D)>,
        S: Into<String>,
        D: AsRef<str>,
    {
        let targets: Vec<usize> = domains
            .iter()
            .enumerate()
            .filter(|(_, (_, r))| *r == DomainRole::Target)
            .map(|(i, _)| i)
            .collect();
        if targets.len() != 1 {
            return Err(CorpusError::InvalidCatalog(format!(
                "expected exactly one target domain, found {}",
                targets.len()
            )));
        }
        if domains.len() < 2 {
            return Err(CorpusError::InvalidCatalog(
                "at least one source domain is required".into(),
            ));
        }
        if domains.len() > u16::MAX as usize {
            return Err(CorpusError::InvalidCatalog("too many domains".into()));
        }
        let mut domain_index = HashMap::new();
        for (i, (name, _)) in domains.iter().enumerate() {
            if domain_index.insert(name.clone(), DomainId(i as u16)).is_some() {
                return Err(CorpusError::InvalidCatalog(format!("duplicate domain `{name}`")));
            }
        }

        let mut assigned: HashMap<String, DomainId> = HashMap::new();
        for (item, domain) in items {
            let item = item.into();
            let domain = domain.as_ref();
            let d = *domain_index
                .get(domain)
                .ok_or_else(|| CorpusError::UnknownDomain(domain.to_string()))?;
            match assigned.get(&item) {
                Some(&prev) if prev != d => {
                    return Err(CorpusError::UnknownItemDomain {
                        item,
                        first: domains[prev.index()].0.clone(),
                        second: domain.to_string(),
                    })
                }
                Some(_) => {}
                None => {
                    assigned.insert(item, d);
                }
            }
        }

        let mut sorted: Vec<(DomainId, String)> =
            assigned.into_iter().map(|(name, d)| (d, name)).collect();
        sorted.sort();
        if sorted.len() >= u32::MAX as usize {
            return Err(CorpusError::InvalidCatalog("vocabulary too large".into()));
        }

        let mut item_names = Vec::with_capacity(sorted.len() + 1);
        let mut item_domain = Vec::with_capacity(sorted.len() + 1);
        let mut vocab_of = vec![Vec::new(); domains.len()];
        let mut by_name = HashMap::with_capacity(sorted.len());
        item_names.push(String::from("<pad>"));
        item_domain.push(DomainId(u16::MAX));
        for (i, (d, name)) in sorted.into_iter().enumerate() {
            let id = ItemId(i as u32 + 1);
            vocab_of[d.index()].push(id);
            by_name.insert(name.clone(), id);
            item_names.push(name);
            item_domain.push(d);
        }

        let mut hasher = Sha256::new();
        for (name, role) in &domains {
            hasher.update(format!("D\t{name}\t{}\n", role.as_str()).as_bytes());
        }
        for (name, d) in item_names.iter().zip(&item_domain).skip(1) {
            hasher.update(format!("I\t{name}\t{}\n", d.0).as_bytes());
        }
        let fingerprint = hex::encode(&hasher.finalize()[..16]);

        Ok(Self {
            target: DomainId(targets[0] as u16),
            domains: domains.into_iter().map(|(n, _)| n).collect(),
            item_names,
            item_domain,
            vocab_of,
            by_name,
            fingerprint,
        })
    }

    pub fn n_domains(&self) -> usize {
        self.domains.len()
    }

    /// Number of real items (excluding padding).
    pub fn n_items(&self) -> usize {
        self.item_names.len() - 1
    }

    pub fn target(&self) -> DomainId {
        self.target
    }

    pub fn is_target(&self, item: ItemId) -> bool {
        self.domain_of(item) == Some(self.target)
    }

    pub fn source_domains(&self) -> impl Iterator<Item = DomainId> + '_ {
        (0..self.domains.len() as u16)
            .map(DomainId)
            .filter(move |d| *d != self.target)
    }

    pub fn domain_ids(&self) -> impl Iterator<Item = DomainId> {
        (0..self.domains.len() as u16).map(DomainId)
    }

    pub fn role(&self, domain: DomainId) -> DomainRole {
        if domain == self.target {
            DomainRole::Target
        } else {
            DomainRole::Source
        }
    }

    pub fn domain_name(&self, domain: DomainId) -> &str {
        &self.domains[domain.index()]
    }

    pub fn domain_by_name(&self, name: &str) -> Option<DomainId> {
        self.domains
            .iter()
            .position(|d| d == name)
            .map(|i| DomainId(i as u16))
    }

    pub fn contains_domain(&self, domain: DomainId) -> bool {
        domain.index() < self.domains.len()
    }

    pub fn domain_of(&self, item: ItemId) -> Option<DomainId> {
        match item.index() {
            0 => None,
            i => self.item_domain.get(i).copied(),
        }
    }

    pub fn item_name(&self, item: ItemId) -> &str {
        &self.item_names[item.index()]
    }

    pub fn item_by_name(&self, name: &str) -> Option<ItemId> {
        self.by_name.get(name).copied()
    }

    /// Items of one domain, in ascending id order.
    pub fn vocab(&self, domain: DomainId) -> &[ItemId] {
        &self.vocab_of[domain.index()]
    }

    pub fn target_vocab(&self) -> &[ItemId] {
        self.vocab(self.target)
    }

    /// Hash binding models to this exact vocabulary.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// `(domain name, role)` pairs in catalog order.
    pub fn domain_entries(&self) -> Vec<(String, DomainRole)> {
        self.domain_ids()
            .map(|d| (self.domain_name(d).to_string(), self.role(d)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doms() -> Vec<(String, DomainRole)> {
        vec![
            ("books".into(), DomainRole::Target),
            ("movies".into(), DomainRole::Source),
        ]
    }

    #[test]
    fn ids_are_canonical() {
        let a = DomainCatalog::new(doms(), [("m2", "movies"), ("b1", "books"), ("m1", "movies")]).unwrap();
        let b = DomainCatalog::new(doms(), [("m1", "movies"), ("m2", "movies"), ("b1", "books")]).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.item_by_name("b1"), Some(ItemId(1)));
        assert_eq!(a.item_by_name("m1"), Some(ItemId(2)));
        assert_eq!(a.vocab(DomainId(1)), &[ItemId(2), ItemId(3)]);
        assert!(a.is_target(ItemId(1)));
        assert_eq!(a.domain_of(ItemId::PADDING), None);
    }

    #[test]
    fn rejects_item_in_two_domains() {
        let err = DomainCatalog::new(doms(), [("x", "movies"), ("x", "books")]).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownItemDomain { .. }));
    }

    #[test]
    fn needs_one_target_and_a_source() {
        let two_targets = vec![
            ("a".to_string(), DomainRole::Target),
            ("b".to_string(), DomainRole::Target),
        ];
        assert!(DomainCatalog::new(two_targets, Vec::<(String, String)>::new()).is_err());
        let only_target = vec![("a".to_string(), DomainRole::Target)];
        assert!(DomainCatalog::new(only_target, Vec::<(String, String)>::new()).is_err());
    }

    #[test]
    fn fingerprint_changes_with_vocab() {
        let a = DomainCatalog::new(doms(), [("b1", "books")]).unwrap();
        let b = DomainCatalog::new(doms(), [("b1", "books"), ("b2", "books")]).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
