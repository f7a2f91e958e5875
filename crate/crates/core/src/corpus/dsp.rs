use super::{CorpusError, DomainCatalog, DomainId, MergedSequence};

/// Domain-specific prediction pairs of a merged sequence.
///
/// Each returned `(i, t)` (1-based) links an in-domain event `i` to the next
/// in-domain event `t`; the model sees the full mixed prefix `1..=i` and is
/// trained to predict the item at `t`. Pairs are sorted by `i`.
pub fn extract_dsp_pairs(
    catalog: &DomainCatalog,
    seq: &MergedSequence,
    domain: DomainId,
) -> Result<Vec<(usize, usize)>, CorpusError> {
    if !catalog.contains_domain(domain) {
        return Err(CorpusError::UnknownDomain(format!("#{}", domain.0)));
    }
    Ok(pairs_by_domain(seq.events.iter().map(|e| e.domain), domain))
}

/// Pair extraction over a bare domain-tag stream.
pub fn pairs_by_domain<I>(tags: I, domain: DomainId) -> Vec<(usize, usize)>
where
    I: IntoIterator<Item = DomainId>,
{
    let mut pairs = Vec::new();
    let mut last: Option<usize> = None;
    for (pos, tag) in tags.into_iter().enumerate() {
        if tag != domain {
            continue;
        }
        let here = pos + 1;
        if let Some(prev) = last {
            pairs.push((prev, here));
        }
        last = Some(here);
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    const T: DomainId = DomainId(0);
    const S: DomainId = DomainId(1);

    #[test]
    fn all_in_domain() {
        assert_eq!(pairs_by_domain([T, T, T, T], T), vec![(1, 2), (2, 3), (3, 4)]);
    }

    #[test]
    fn skips_out_of_domain_gap() {
        assert_eq!(pairs_by_domain([T, S, S, T, T], T), vec![(1, 4), (4, 5)]);
    }

    #[test]
    fn no_in_domain_items() {
        assert!(pairs_by_domain([S, S, S], T).is_empty());
        assert!(pairs_by_domain([S, T, S], T).is_empty());
    }
}
