use std::collections::HashMap;
use std::io::{self, Write};

use crate::corpus::{DomainCatalog, ItemId, MergedSequence};
use crate::predictor::PredictorModel;

use super::{MappingRecord, RegeneratedSequence};

/// Suffix appended to a user id for the regenerated copy in a composed dataset.
pub const REGENERATED_SUFFIX: &str = "@regen";

/// Shortest regenerated sequence admitted into a composed dataset.
pub const MIN_REGENERATED_LEN: usize = 3;

/// Union of regenerated sequences and the original target-only sequences.
///
/// Per user, the original target sequence comes first (when non-empty),
/// followed by the regenerated one under `"{user}@regen"`. The regenerated
/// copy is dropped when it is shorter than [`MIN_REGENERATED_LEN`] or equals
/// the original. Placeholder positions are removed.
pub fn compose_dataset(regenerated: &[RegeneratedSequence], original_target: &[MergedSequence]) -> Vec<MergedSequence> {
    let regen: HashMap<&str, &RegeneratedSequence> =
        regenerated.iter().map(|r| (r.user.as_str(), r)).collect();
    let mut out = Vec::new();
    let mut emit = |orig: Option<&MergedSequence>, r: Option<&RegeneratedSequence>| {
        let orig = orig.filter(|o| !o.is_empty());
        if let Some(o) = orig {
            out.push(o.clone());
        }
        if let Some(r) = r {
            let mut m = r.as_merged();
            m.events.retain(|e| e.item != ItemId::PADDING);
            let same = orig.is_some_and(|o| o.items() == m.items());
            if m.len() >= MIN_REGENERATED_LEN && !same {
                m.user.push_str(REGENERATED_SUFFIX);
                out.push(m);
            }
        }
    };
    let mut seen = std::collections::HashSet::new();
    for o in original_target {
        seen.insert(o.user.as_str());
        emit(Some(o), regen.get(o.user.as_str()).copied());
    }
    for r in regenerated.iter().filter(|r| !seen.contains(r.user.as_str())) {
        emit(None, Some(r));
    }
    out
}

/// `user_id,position,source_item,decision,target_item,alpha_g,beta_g,alpha_l,beta_l`
pub fn write_mapping_csv<W: Write>(mut w: W, catalog: &DomainCatalog, records: &[MappingRecord]) -> io::Result<()> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    writeln!(w, "user_id,position,source_item,decision,target_item,alpha_g,beta_g,alpha_l,beta_l")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.user,
            r.position,
            catalog.item_name(r.source_item),
            r.decision.label(),
            r.target_item().map(|i| catalog.item_name(i)).unwrap_or(""),
            opt(r.weights.alpha_g),
            opt(r.weights.beta_g),
            opt(r.weights.alpha_l),
            opt(r.weights.beta_l),
        )?;
    }
    w.flush()
}

/// `item_id,domain_id,h1..hd`: raw item embeddings of a neural model.
/// Writes nothing but the header for a Markov model.
pub fn write_embeddings_csv<W: Write>(mut w: W, model: &PredictorModel, catalog: &DomainCatalog) -> io::Result<()> {
    let Some(net) = model.network() else {
        return writeln!(w, "item_id,domain_id");
    };
    let d = net.shape().hidden;
    write!(w, "item_id,domain_id")?;
    for k in 1..=d {
        write!(w, ",h{k}")?;
    }
    writeln!(w)?;
    for i in 1..=catalog.n_items() as u32 {
        let item = ItemId(i);
        let domain = catalog.domain_of(item).expect("catalog item");
        write!(w, "{},{}", catalog.item_name(item), catalog.domain_name(domain))?;
        for v in net.item_embedding(item) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DomainId, Interaction};

    fn seq(user: &str, items: &[u32]) -> MergedSequence {
        MergedSequence {
            user: user.into(),
            events: items
                .iter()
                .enumerate()
                .map(|(t, &i)| Interaction { item: ItemId(i), timestamp: t as u64, domain: DomainId(0) })
                .collect(),
        }
    }

    fn regen(user: &str, items: &[u32]) -> RegeneratedSequence {
        let m = seq(user, items);
        RegeneratedSequence {
            user: m.user,
            origin: (0..items.len()).collect(),
            events: m.events,
            records: Vec::new(),
            degenerate: items.is_empty(),
        }
    }

    #[test]
    fn dedups_and_filters() {
        let out = compose_dataset(
            &[regen("a", &[1, 2, 3]), regen("b", &[1, 2, 3, 4, 5]), regen("c", &[1, 2]), regen("d", &[3, 3, 3])],
            &[seq("a", &[1, 2, 3]), seq("b", &[1, 2, 3]), seq("c", &[1])],
        );
        let users: Vec<&str> = out.iter().map(|s| s.user.as_str()).collect();
        assert_eq!(users, ["a", "b", "b@regen", "c", "d@regen"]);
        assert!(out.len() <= 2 * 4);
    }
}
