use super::{Corpus, DomainId, ItemId, MergedSequence};

/// A held-out next-item instance: predict `label` after `context`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalInstance {
    pub user: String,
    pub context: Vec<ItemId>,
    /// Domain tag of each context item.
    pub context_domains: Vec<DomainId>,
    pub label: ItemId,
    /// Domain of the label item; determines which per-domain test set it joins.
    pub domain: DomainId,
}

impl EvalInstance {
    /// Drops context items outside `domain`.
    pub fn restrict_context(&self, domain: DomainId) -> EvalInstance {
        let (context, context_domains) = self
            .context
            .iter()
            .zip(&self.context_domains)
            .filter(|(_, d)| **d == domain)
            .map(|(i, d)| (*i, *d))
            .unzip();
        EvalInstance {
            user: self.user.clone(),
            context,
            context_domains,
            label: self.label,
            domain: self.domain,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LeaveOneOut {
    /// Each kept user's sequence without its last two events.
    pub train: Vec<MergedSequence>,
    pub valid: Vec<EvalInstance>,
    pub test: Vec<EvalInstance>,
    /// Users excluded because their merged sequence has fewer than 3 events.
    pub too_short: Vec<String>,
}

impl LeaveOneOut {
    pub fn valid_in(&self, domain: DomainId) -> Vec<EvalInstance> {
        self.valid.iter().filter(|i| i.domain == domain).cloned().collect()
    }

    pub fn test_in(&self, domain: DomainId) -> Vec<EvalInstance> {
        self.test.iter().filter(|i| i.domain == domain).cloned().collect()
    }
}

/// Last event to test, second-to-last to validation, the rest to training.
pub fn leave_one_out_split(corpus: &Corpus) -> LeaveOneOut {
    split_sequences(corpus.merged())
}

pub fn split_sequences(sequences: &[MergedSequence]) -> LeaveOneOut {
    let mut out = LeaveOneOut::default();
    for seq in sequences {
        let n = seq.len();
        if n < 3 {
            out.too_short.push(seq.user.clone());
            continue;
        }
        let items = seq.items();
        let domains = seq.domains();
        out.valid.push(EvalInstance {
            user: seq.user.clone(),
            context: items[..n - 2].to_vec(),
            context_domains: domains[..n - 2].to_vec(),
            label: items[n - 2],
            domain: domains[n - 2],
        });
        out.test.push(EvalInstance {
            user: seq.user.clone(),
            context: items[..n - 1].to_vec(),
            context_domains: domains[..n - 1].to_vec(),
            label: items[n - 1],
            domain: domains[n - 1],
        });
        out.train.push(MergedSequence {
            user: seq.user.clone(),
            events: seq.events[..n - 2].to_vec(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Interaction;

    fn mk(user: &str, items: &[u32]) -> MergedSequence {
        MergedSequence {
            user: user.into(),
            events: items
                .iter()
                .enumerate()
                .map(|(t, &i)| Interaction {
                    item: ItemId(i),
                    timestamp: t as u64,
                    domain: DomainId((i % 2) as u16),
                })
                .collect(),
        }
    }

    #[test]
    fn definition() {
        let s = split_sequences(&[mk("u", &[1, 2, 3, 4])]);
        assert_eq!(s.train[0].items(), vec![ItemId(1), ItemId(2)]);
        assert_eq!(s.valid[0].context, vec![ItemId(1), ItemId(2)]);
        assert_eq!(s.valid[0].label, ItemId(3));
        assert_eq!(s.test[0].context, vec![ItemId(1), ItemId(2), ItemId(3)]);
        assert_eq!(s.test[0].label, ItemId(4));
        assert_eq!(s.test[0].domain, DomainId(0));
    }

    #[test]
    fn short_sequences_are_reported() {
        let s = split_sequences(&[mk("a", &[1, 2, 3, 4]), mk("b", &[1, 2, 3, 4, 5]), mk("c", &[1, 2])]);
        assert_eq!(s.test.len(), 2);
        assert_eq!(s.too_short, vec!["c".to_string()]);
    }

    #[test]
    fn restrict_context_filters_domains() {
        let s = split_sequences(&[mk("u", &[1, 2, 3, 4, 5])]);
        let r = s.test[0].restrict_context(DomainId(1));
        assert_eq!(r.context, vec![ItemId(1), ItemId(3)]);
    }
}
