use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};

use super::{CorpusError, DomainCatalog, ItemId, MergedSequence};

/// Frequency, long-tail coverage and length statistics of a set of sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    /// `(item, count)` sorted by descending count, ties by ascending id.
    pub item_frequency: Vec<(ItemId, usize)>,
    pub longtail: LongTailShares,
    pub length_histogram: BTreeMap<usize, usize>,
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
    pub avg_length: f64,
}

/// Interaction share of the Top-10% / Mid-40% / Tail-50% items by frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongTailShares {
    pub top: f64,
    pub mid: f64,
    pub tail: f64,
}

pub fn dataset_stats(sequences: &[MergedSequence]) -> Result<DatasetStats, CorpusError> {
    let non_empty: Vec<&MergedSequence> = sequences.iter().filter(|s| !s.is_empty()).collect();
    if non_empty.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let mut counts: HashMap<ItemId, usize> = HashMap::new();
    let mut length_histogram = BTreeMap::new();
    let mut n_interactions = 0;
    for s in &non_empty {
        *length_histogram.entry(s.len()).or_insert(0) += 1;
        n_interactions += s.len();
        for e in &s.events {
            *counts.entry(e.item).or_insert(0) += 1;
        }
    }
    let mut item_frequency: Vec<(ItemId, usize)> = counts.into_iter().collect();
    item_frequency.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    let n_items = item_frequency.len();
    let top_end = (n_items as f64 * 0.1).ceil() as usize;
    let mid_end = ((n_items as f64 * 0.5).ceil() as usize).max(top_end);
    let share = |r: std::ops::Range<usize>| {
        item_frequency[r].iter().map(|(_, c)| *c).sum::<usize>() as f64 / n_interactions as f64
    };
    let top = share(0..top_end);
    let mid = share(top_end..mid_end);
    let tail = 1.0 - top - mid;

    Ok(DatasetStats {
        longtail: LongTailShares { top, mid, tail },
        length_histogram,
        n_users: non_empty.len(),
        n_items,
        n_interactions,
        avg_length: n_interactions as f64 / non_empty.len() as f64,
        item_frequency,
    })
}

impl DatasetStats {
    /// `metric,value` rows: users, items, interactions, avg_length, top10, mid40, tail50.
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "metric,value")?;
        writeln!(w, "users,{}", self.n_users)?;
        writeln!(w, "items,{}", self.n_items)?;
        writeln!(w, "interactions,{}", self.n_interactions)?;
        writeln!(w, "avg_length,{:.6}", self.avg_length)?;
        writeln!(w, "top10_share,{:.6}", self.longtail.top)?;
        writeln!(w, "mid40_share,{:.6}", self.longtail.mid)?;
        writeln!(w, "tail50_share,{:.6}", self.longtail.tail)?;
        Ok(())
    }

    /// `rank,item_id,count` rows, rank 1 = most frequent.
    pub fn write_frequency_csv<W: Write>(&self, mut w: W, catalog: &DomainCatalog) -> io::Result<()> {
        writeln!(w, "rank,item_id,count")?;
        for (rank, (item, count)) in self.item_frequency.iter().enumerate() {
            writeln!(w, "{},{},{}", rank + 1, catalog.item_name(*item), count)?;
        }
        Ok(())
    }

    /// `length,users` rows.
    pub fn write_length_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "length,users")?;
        for (len, n) in &self.length_histogram {
            writeln!(w, "{len},{n}")?;
        }
        Ok(())
    }
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
                .map(|(t, &i)| Interaction {
                    item: ItemId(i),
                    timestamp: t as u64,
                    domain: DomainId(0),
                })
                .collect(),
        }
    }

    #[test]
    fn uniform_items_match_count_shares() {
        let s = dataset_stats(&[seq("u", &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10])]).unwrap();
        assert!((s.longtail.top - 0.1).abs() < 1e-12);
        assert!((s.longtail.mid - 0.4).abs() < 1e-12);
        assert!((s.longtail.tail - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dominant_item_in_top_share() {
        // item 1 holds 90 of 100 interactions
        let mut items = vec![1u32; 90];
        items.extend(2..=11);
        let s = dataset_stats(&[seq("u", &items)]).unwrap();
        let direct = 90.0 / 100.0;
        assert!(s.longtail.top >= direct - 1e-12);
        assert_eq!(s.item_frequency[0], (ItemId(1), 90));
    }

    #[test]
    fn totals_and_histogram() {
        let s = dataset_stats(&[seq("a", &[1, 2, 3]), seq("b", &[1, 2, 3]), seq("c", &[4, 5])]).unwrap();
        assert_eq!(s.n_users, 3);
        assert_eq!(s.n_items, 5);
        assert_eq!(s.n_interactions, 8);
        assert_eq!(s.length_histogram.get(&3), Some(&2));
        assert_eq!(s.length_histogram.values().sum::<usize>(), s.n_users);
        let sum = s.longtail.top + s.longtail.mid + s.longtail.tail;
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_is_error() {
        assert!(matches!(dataset_stats(&[]), Err(CorpusError::EmptyInput)));
    }
}
