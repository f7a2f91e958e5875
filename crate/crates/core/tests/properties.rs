use proptest::prelude::*;

use taesar::contrastive::{regenerate_sequence, ExpertSet, RegenerationConfig, TransformDecision};
use taesar::corpus::{
    extract_dsp_pairs, interleave, split_sequences, DomainCatalog, DomainId, DomainRole, Interaction,
    MergedSequence,
};
use taesar::predictor::{fit_markov, fit_markov_dsp};

const PER_DOMAIN: usize = 3;

fn catalog(n_domains: usize) -> DomainCatalog {
    let domains = (0..n_domains)
        .map(|d| (format!("d{d}"), if d == 0 { DomainRole::Target } else { DomainRole::Source }))
        .collect();
    let items: Vec<(String, String)> = (0..n_domains)
        .flat_map(|d| (0..PER_DOMAIN).map(move |i| (format!("d{d}i{i}"), format!("d{d}"))))
        .collect();
    DomainCatalog::new(domains, items.iter().map(|(a, b)| (a.as_str(), b.as_str()))).unwrap()
}

/// `(domain, item-within-domain, timestamp gap)` triples to a merged sequence.
fn build(cat: &DomainCatalog, user: &str, steps: &[(usize, usize, u64)]) -> MergedSequence {
    let mut t = 0;
    let events = steps
        .iter()
        .map(|&(d, i, gap)| {
            t += gap;
            let item = cat.vocab(DomainId(d as u16))[i];
            Interaction { item, timestamp: t, domain: DomainId(d as u16) }
        })
        .collect();
    MergedSequence { user: user.into(), events }
}

fn steps(n_domains: usize, len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<(usize, usize, u64)>> {
    prop::collection::vec((0..n_domains, 0..PER_DOMAIN, 0u64..3), len)
}

/// Markov experts fitted on `train` plus one sequence that visits every
/// domain twice, so that each domain has prediction pairs.
fn markov_experts(cat: &DomainCatalog, train: &[MergedSequence]) -> ExpertSet {
    let cover: Vec<_> = (0..2).flat_map(|_| (0..cat.n_domains()).map(|d| (d, 0, 1))).collect();
    let mut train = train.to_vec();
    train.push(build(cat, "cover", &cover));
    let train = &train[..];
    let sources: Vec<_> = cat
        .source_domains()
        .map(|d| fit_markov_dsp(cat, train, d, 0.1).unwrap())
        .collect();
    ExpertSet::new(
        cat,
        fit_markov(cat, train, 0.1).unwrap(),
        fit_markov_dsp(cat, train, cat.target(), 0.1).unwrap(),
        sources,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn interleave_inverts_split_domains(n in 2usize..5, s in steps(4, 1..30)) {
        let cat = catalog(n);
        let s: Vec<_> = s.into_iter().map(|(d, i, g)| (d % n, i, g)).collect();
        let merged = build(&cat, "u", &s);
        let parts = merged.split_domains(cat.n_domains());
        let back = interleave(&parts).unwrap();
        prop_assert!(back.events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        let mut a = merged.events.clone();
        let mut b = back.events.clone();
        a.sort_by_key(|e| (e.timestamp, e.domain, e.item));
        b.sort_by_key(|e| (e.timestamp, e.domain, e.item));
        prop_assert_eq!(a, b);
        for p in &parts {
            prop_assert_eq!(back.restrict_to(p.domain).events, p.events.clone());
        }
    }

    #[test]
    fn dsp_pairs_link_consecutive_in_domain_events(s in steps(3, 0..40)) {
        let cat = catalog(3);
        let seq = build(&cat, "u", &s);
        for d in cat.domain_ids() {
            let pairs = extract_dsp_pairs(&cat, &seq, d).unwrap();
            prop_assert_eq!(pairs.len(), seq.count_in(d).saturating_sub(1));
            for &(i, t) in &pairs {
                prop_assert!(i < t);
                prop_assert_eq!(seq.events[i - 1].domain, d);
                prop_assert_eq!(seq.events[t - 1].domain, d);
                prop_assert!(seq.events[i..t - 1].iter().all(|e| e.domain != d));
            }
            prop_assert!(pairs.windows(2).all(|w| w[0].1 == w[1].0));
        }
    }

    #[test]
    fn leave_one_out_partitions_each_sequence(lens in prop::collection::vec(steps(2, 0..12), 1..8)) {
        let cat = catalog(2);
        let seqs: Vec<_> = lens.iter().enumerate().map(|(u, s)| build(&cat, &format!("u{u}"), s)).collect();
        let split = split_sequences(&seqs);
        let kept: Vec<_> = seqs.iter().filter(|s| s.len() >= 3).collect();
        prop_assert_eq!(split.train.len(), kept.len());
        prop_assert_eq!(split.too_short.len(), seqs.len() - kept.len());
        for (((s, tr), va), te) in kept.iter().zip(&split.train).zip(&split.valid).zip(&split.test) {
            let items = s.items();
            let n = items.len();
            prop_assert_eq!(&tr.items()[..], &items[..n - 2]);
            prop_assert_eq!(&va.context[..], &items[..n - 2]);
            prop_assert_eq!(va.label, items[n - 2]);
            prop_assert_eq!(&te.context[..], &items[..n - 1]);
            prop_assert_eq!(te.label, items[n - 1]);
            prop_assert_eq!(te.domain, s.events[n - 1].domain);
        }
    }

    #[test]
    fn regeneration_keeps_targets_and_decides_every_source(
        train in prop::collection::vec(steps(3, 2..15), 3..6),
        input in steps(3, 1..20),
    ) {
        let cat = catalog(3);
        let train: Vec<_> = train.iter().enumerate().map(|(u, s)| build(&cat, &format!("t{u}"), s)).collect();
        let experts = markov_experts(&cat, &train);
        let seq = build(&cat, "ann", &input);
        let out = regenerate_sequence(&seq, &experts, &cat, &RegenerationConfig::default()).unwrap();

        prop_assert!(out.events.iter().all(|e| cat.is_target(e.item)));
        prop_assert!(out.origin.windows(2).all(|w| w[0] < w[1]));
        let n_source = seq.len() - seq.count_in(cat.target());
        prop_assert_eq!(out.records.len(), n_source);
        for r in &out.records {
            prop_assert_eq!(seq.events[r.position - 1].item, r.source_item);
            prop_assert!(!cat.is_target(r.source_item));
            if r.position == 1 {
                prop_assert_eq!(&r.decision, &TransformDecision::Discard);
            }
        }
        let replaced = out.records.iter().filter(|r| r.target_item().is_some()).count();
        prop_assert_eq!(out.events.len(), seq.count_in(cat.target()) + replaced);
        for (e, &o) in out.events.iter().zip(&out.origin) {
            let orig = seq.events[o];
            prop_assert_eq!(e.timestamp, orig.timestamp);
            if cat.is_target(orig.item) {
                prop_assert_eq!(e.item, orig.item);
            }
        }
        prop_assert_eq!(out.origin_len(), seq.len());
    }

    #[test]
    fn truncation_matches_regenerating_the_prefix(
        train in prop::collection::vec(steps(2, 2..15), 3..6),
        input in steps(2, 1..20),
        cut in 0usize..20,
    ) {
        let cat = catalog(2);
        let train: Vec<_> = train.iter().enumerate().map(|(u, s)| build(&cat, &format!("t{u}"), s)).collect();
        let experts = markov_experts(&cat, &train);
        let seq = build(&cat, "ann", &input);
        let cut = cut.min(seq.len());
        let cfg = RegenerationConfig::default();
        let full = regenerate_sequence(&seq, &experts, &cat, &cfg).unwrap();
        let prefix = MergedSequence { user: seq.user.clone(), events: seq.events[..cut].to_vec() };
        if cut == 0 {
            prop_assert!(full.truncated(0).events.is_empty());
        } else {
            let direct = regenerate_sequence(&prefix, &experts, &cat, &cfg).unwrap();
            let t = full.truncated(cut);
            prop_assert_eq!(t.events, direct.events);
            prop_assert_eq!(t.origin, direct.origin);
            prop_assert_eq!(t.records, direct.records);
        }
    }
}

#[test]
fn all_target_sequence_is_its_own_regeneration() {
    let cat = catalog(2);
    let seq = build(&cat, "u", &[(0, 0, 1), (0, 1, 1), (0, 2, 1), (0, 0, 1)]);
    let experts = markov_experts(&cat, std::slice::from_ref(&seq));
    let out = regenerate_sequence(&seq, &experts, &cat, &RegenerationConfig::default()).unwrap();
    assert_eq!(out.events, seq.events);
    assert!(out.records.is_empty());
    assert_eq!(out.origin, vec![0, 1, 2, 3]);
}
