//! Line-oriented event-record files.
//!
//! Events: `user_id<TAB>item_id<TAB>domain_id<TAB>timestamp`, one per line.
//! Catalog sidecar: `domain_id<TAB>target|source`; line order is the catalog
//! domain order. In both files, blank lines and lines starting with `#` are
//! ignored.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use super::{
    interleave, Corpus, CorpusError, DomainCatalog, DomainId, DomainRole, Interaction,
    MergedSequence, UserSequence,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOptions {
    /// Keep at most this many of the most recent merged events per user.
    pub max_len: Option<usize>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { max_len: Some(128) }
    }
}

struct RawEvent {
    user: String,
    item: String,
    domain: String,
    timestamp: u64,
}

fn content_lines<R: BufRead>(reader: R) -> impl Iterator<Item = io::Result<(usize, String)>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)))
        .filter(|r| match r {
            Ok((_, l)) => {
                let t = l.trim();
                !t.is_empty() && !t.starts_with('#')
            }
            Err(_) => true,
        })
}

pub fn read_catalog<R: BufRead>(reader: R) -> Result<Vec<(String, DomainRole)>, CorpusError> {
    let mut out = Vec::new();
    for line in content_lines(reader) {
        let (no, line) = line?;
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        if fields.len() != 2 {
            return Err(CorpusError::Parse {
                line: no,
                message: format!("expected 2 tab-separated fields, found {}", fields.len()),
            });
        }
        let role = match fields[1].trim() {
            "target" => DomainRole::Target,
            "source" => DomainRole::Source,
            other => {
                return Err(CorpusError::Parse {
                    line: no,
                    message: format!("role must be `target` or `source`, found `{other}`"),
                })
            }
        };
        out.push((fields[0].trim().to_string(), role));
    }
    if out.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    Ok(out)
}

fn read_raw_events<R: BufRead>(reader: R) -> Result<Vec<RawEvent>, CorpusError> {
    let mut out = Vec::new();
    for line in content_lines(reader) {
        let (no, line) = line?;
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        if fields.len() != 4 {
            return Err(CorpusError::Parse {
                line: no,
                message: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        if fields[..3].iter().any(|f| f.is_empty()) {
            return Err(CorpusError::Parse {
                line: no,
                message: "empty identifier".into(),
            });
        }
        let timestamp = fields[3].trim().parse::<u64>().map_err(|e| CorpusError::Parse {
            line: no,
            message: format!("bad timestamp `{}`: {e}", fields[3]),
        })?;
        out.push(RawEvent {
            user: fields[0].to_string(),
            item: fields[1].to_string(),
            domain: fields[2].to_string(),
            timestamp,
        });
    }
    if out.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    Ok(out)
}

fn assemble(
    catalog: Arc<DomainCatalog>,
    raw: Vec<RawEvent>,
    opts: IngestOptions,
) -> Result<Corpus, CorpusError> {
    let n_domains = catalog.n_domains();
    let mut order: Vec<String> = Vec::new();
    let mut per_user: HashMap<String, Vec<Vec<Interaction>>> = HashMap::new();
    for r in raw {
        let domain = catalog
            .domain_by_name(&r.domain)
            .ok_or_else(|| CorpusError::UnknownDomain(r.domain.clone()))?;
        let item = catalog
            .item_by_name(&r.item)
            .ok_or_else(|| CorpusError::UnknownItem(r.item.clone()))?;
        let actual = catalog.domain_of(item).expect("catalog item has a domain");
        if actual != domain {
            return Err(CorpusError::UnknownItemDomain {
                item: r.item,
                first: catalog.domain_name(actual).to_string(),
                second: r.domain,
            });
        }
        let slot = per_user.entry(r.user.clone()).or_insert_with(|| {
            order.push(r.user.clone());
            vec![Vec::new(); n_domains]
        });
        slot[domain.index()].push(Interaction {
            item,
            timestamp: r.timestamp,
            domain,
        });
    }

    let mut merged = Vec::with_capacity(order.len());
    for user in order {
        let per_domain = per_user.remove(&user).expect("user present");
        let seqs: Vec<UserSequence> = per_domain
            .into_iter()
            .enumerate()
            .filter(|(_, ev)| !ev.is_empty())
            .map(|(d, mut events)| {
                events.sort_by_key(|e| e.timestamp);
                UserSequence {
                    user: user.clone(),
                    domain: DomainId(d as u16),
                    events,
                }
            })
            .collect();
        let mut m = interleave(&seqs)?;
        if let Some(max_len) = opts.max_len {
            m.truncate_front(max_len);
        }
        merged.push(m);
    }
    Corpus::from_merged(catalog, merged)
}

/// Parses an event stream, deriving the item vocabulary from it.
pub fn ingest_reader<R: BufRead>(
    events: R,
    domains: Vec<(String, DomainRole)>,
    opts: IngestOptions,
) -> Result<Corpus, CorpusError> {
    let raw = read_raw_events(events)?;
    let catalog = DomainCatalog::new(
        domains,
        raw.iter().map(|r| (r.item.clone(), r.domain.as_str())),
    )?;
    assemble(Arc::new(catalog), raw, opts)
}

/// Parses an event stream against an existing catalog; unknown items are errors.
pub fn ingest_reader_with_catalog<R: BufRead>(
    events: R,
    catalog: Arc<DomainCatalog>,
    opts: IngestOptions,
) -> Result<Corpus, CorpusError> {
    let raw = read_raw_events(events)?;
    assemble(catalog, raw, opts)
}

pub fn ingest(
    events_path: &Path,
    catalog_path: &Path,
    opts: IngestOptions,
) -> Result<Corpus, CorpusError> {
    let domains = read_catalog(BufReader::new(File::open(catalog_path)?))?;
    ingest_reader(BufReader::new(File::open(events_path)?), domains, opts)
}

pub fn ingest_with_catalog(
    events_path: &Path,
    catalog: Arc<DomainCatalog>,
    opts: IngestOptions,
) -> Result<Corpus, CorpusError> {
    ingest_reader_with_catalog(BufReader::new(File::open(events_path)?), catalog, opts)
}

/// Writes sequences in merged order, one event per line.
pub fn write_events<W: Write>(
    mut w: W,
    catalog: &DomainCatalog,
    sequences: &[MergedSequence],
) -> io::Result<()> {
    for s in sequences {
        for e in &s.events {
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                s.user,
                catalog.item_name(e.item),
                catalog.domain_name(e.domain),
                e.timestamp
            )?;
        }
    }
    w.flush()
}

pub fn write_catalog<W: Write>(mut w: W, catalog: &DomainCatalog) -> io::Result<()> {
    for d in catalog.domain_ids() {
        writeln!(w, "{}\t{}", catalog.domain_name(d), catalog.role(d).as_str())?;
    }
    w.flush()
}

pub fn export(corpus: &Corpus, events_path: &Path, catalog_path: &Path) -> io::Result<()> {
    write_events(BufWriter::new(File::create(events_path)?), corpus.catalog(), corpus.merged())?;
    write_catalog(BufWriter::new(File::create(catalog_path)?), corpus.catalog())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn domains() -> Vec<(String, DomainRole)> {
        vec![
            ("T".into(), DomainRole::Target),
            ("S".into(), DomainRole::Source),
        ]
    }

    #[test]
    fn empty_file() {
        let err = ingest_reader("# only a comment\n\n".as_bytes(), domains(), IngestOptions::default());
        assert!(matches!(err, Err(CorpusError::EmptyInput)));
    }

    #[test]
    fn three_lines_one_user() {
        let text = "u1\ta\tT\t3\nu1\tb\tT\t1\nu1\tc\tT\t2\n";
        let c = ingest_reader(text.as_bytes(), domains(), IngestOptions::default()).unwrap();
        assert_eq!(c.n_users(), 1);
        assert_eq!(c.n_interactions(), 3);
        let names: Vec<&str> = c.merged()[0]
            .events
            .iter()
            .map(|e| c.catalog().item_name(e.item))
            .collect();
        assert_eq!(names, vec!["b", "c", "a"]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "u1\ta\tT\t3\n# c\nu1\tb\tT\n";
        match ingest_reader(text.as_bytes(), domains(), IngestOptions::default()) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "u1\ta\tT\t-4\n";
        assert!(matches!(
            ingest_reader(text.as_bytes(), domains(), IngestOptions::default()),
            Err(CorpusError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn item_under_two_domains() {
        let text = "u1\ta\tT\t1\nu2\ta\tS\t1\n";
        assert!(matches!(
            ingest_reader(text.as_bytes(), domains(), IngestOptions::default()),
            Err(CorpusError::UnknownItemDomain { .. })
        ));
    }

    #[test]
    fn truncates_to_most_recent() {
        let text: String = (0..10).map(|t| format!("u\ti{t}\tT\t{t}\n")).collect();
        let c = ingest_reader(text.as_bytes(), domains(), IngestOptions { max_len: Some(4) }).unwrap();
        let m = &c.merged()[0];
        assert_eq!(m.len(), 4);
        assert_eq!(c.catalog().item_name(m.events[0].item), "i6");
    }

    #[test]
    fn catalog_round_trip() {
        let mut buf = Vec::new();
        let c = ingest_reader("u\ta\tT\t1\n".as_bytes(), domains(), IngestOptions::default()).unwrap();
        write_catalog(&mut buf, c.catalog()).unwrap();
        assert_eq!(read_catalog(buf.as_slice()).unwrap(), domains());
    }
}
