use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{DomainCatalog, MergedSequence};
use crate::predictor::{build_dsp_data, Network, PredictorError, PredictorModel, TrainSeq};

use super::EvaluationError;

/// Pairwise cosine similarity of per-domain mean loss gradients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientConflictMatrix {
    pub labels: Vec<String>,
    /// Row-major, `labels.len()` squared.
    pub matrix: Vec<Vec<f64>>,
    /// Per domain, the cosine between the mean gradients of two disjoint
    /// halves of its batches (`None` with a single batch).
    pub within: Vec<Option<f64>>,
}

impl GradientConflictMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i][j]
    }

    pub fn mean_off_diagonal(&self) -> f64 {
        let n = self.labels.len();
        if n < 2 {
            return f64::NAN;
        }
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    total += self.matrix[i][j];
                }
            }
        }
        total / (n * (n - 1)) as f64
    }

    pub fn mean_within(&self) -> f64 {
        let v: Vec<f64> = self.within.iter().flatten().copied().collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    /// Header `domain,<labels…>`, one row per domain, then a `within` row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "domain,{}", self.labels.join(","))?;
        for (l, row) in self.labels.iter().zip(&self.matrix) {
            let vals: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(w, "{l},{}", vals.join(","))?;
        }
        let within: Vec<String> = self
            .within
            .iter()
            .map(|v| v.map(|x| format!("{x:.6}")).unwrap_or_default())
            .collect();
        writeln!(w, "within,{}", within.join(","))?;
        w.flush()
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

fn batch_gradient(net: &Network<f64>, batch: &[&TrainSeq]) -> Vec<f64> {
    let n: usize = batch.iter().map(|s| s.n_targets()).sum();
    let mut g = vec![0.0; net.n_params()];
    for s in batch {
        net.loss_and_grad::<ChaCha8Rng>(s, 1.0 / n as f64, &mut g, None);
    }
    g
}

fn mean_of(grads: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; grads[0].len()];
    for g in grads {
        for (a, b) in m.iter_mut().zip(g) {
            *a += b;
        }
    }
    let n = grads.len() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// For every domain, batches its domain-specific prediction pairs (targets
/// at that domain's items only), averages the full-parameter loss gradient
/// of `model` over the batches, and compares domains by cosine similarity.
pub fn gradient_conflict(
    model: &PredictorModel,
    catalog: &DomainCatalog,
    sequences: &[MergedSequence],
    batch_size: usize,
    seed: u64,
) -> Result<GradientConflictMatrix, EvaluationError> {
    model.check_catalog(catalog)?;
    let max_len = model.config.max_len;
    let sets: Vec<(String, Vec<TrainSeq>)> = catalog
        .domain_ids()
        .map(|d| {
            let (data, _) = build_dsp_data(sequences, d, max_len, false);
            (catalog.domain_name(d).to_string(), data)
        })
        .collect();
    gradient_conflict_sets(model, &sets, batch_size, seed)
}

/// [`gradient_conflict`] over explicitly labelled training sets.
pub fn gradient_conflict_sets(
    model: &PredictorModel,
    sets: &[(String, Vec<TrainSeq>)],
    batch_size: usize,
    seed: u64,
) -> Result<GradientConflictMatrix, EvaluationError> {
    let net = model
        .network()
        .ok_or_else(|| PredictorError::InvalidArgument("gradient conflict needs a neural model".into()))?
        .cast::<f64>();
    if batch_size == 0 {
        return Err(PredictorError::InvalidArgument("batch_size must be positive".into()).into());
    }
    let mut labels = Vec::new();
    let mut means = Vec::new();
    let mut within = Vec::new();
    for (k, (name, data)) in sets.iter().enumerate() {
        let mut data: Vec<&TrainSeq> = data.iter().filter(|s| s.n_targets() > 0).collect();
        if data.is_empty() {
            return Err(EvaluationError::EmptyDomainBatch(name.clone()));
        }
        data.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64)));
        let grads: Vec<Vec<f64>> = data.chunks(batch_size).map(|b| batch_gradient(&net, b)).collect();
        let half = if grads.len() >= 2 {
            let (a, b): (Vec<_>, Vec<_>) = grads.iter().cloned().enumerate().partition(|(i, _)| i % 2 == 0);
            let a: Vec<Vec<f64>> = a.into_iter().map(|x| x.1).collect();
            let b: Vec<Vec<f64>> = b.into_iter().map(|x| x.1).collect();
            Some(cosine(&mean_of(&a), &mean_of(&b)))
        } else {
            None
        };
        labels.push(name.clone());
        means.push(mean_of(&grads));
        within.push(half);
    }
    let n = labels.len();
    let mut matrix = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let c = cosine(&means[i], &means[j]);
            matrix[i][j] = c;
            matrix[j][i] = c;
        }
    }
    Ok(GradientConflictMatrix {
        labels,
        matrix,
        within,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DomainId, DomainRole, Interaction, ItemId};
    use crate::predictor::{Backend, PredictorConfig, Role};
    use rand::Rng;

    fn setup() -> (DomainCatalog, Vec<MergedSequence>, PredictorModel) {
        let items: Vec<(String, &str)> = (0..12).map(|i| (format!("a{i}"), if i < 6 { "A" } else { "B" })).collect();
        let cat = DomainCatalog::new(
            vec![("A".into(), DomainRole::Target), ("B".into(), DomainRole::Source)],
            items.iter().map(|(n, d)| (n.clone(), *d)),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seqs: Vec<MergedSequence> = (0..30)
            .map(|u| {
                let mut events: Vec<Interaction> = (0..10)
                    .map(|t| {
                        let i = rng.random_range(1..=6u32);
                        Interaction { item: ItemId(i), timestamp: t, domain: DomainId(0) }
                    })
                    .collect();
                for e in events.iter_mut().skip(1).step_by(2) {
                    e.item = ItemId(e.item.0 + 6);
                    e.domain = DomainId(1);
                }
                MergedSequence { user: format!("u{u}"), events }
            })
            .collect();
        let cfg = PredictorConfig { hidden_size: 8, layers: 1, heads: 1, inner_size: 8, max_len: 32, ..Default::default() };
        let net = Network::random(cfg.shape(12), 0.2, &mut rng);
        let model = PredictorModel::new(Role::Base, Backend::Neural(net), cfg, &cat);
        (cat, seqs, model)
    }

    #[test]
    fn symmetric_with_unit_diagonal() {
        let (cat, seqs, model) = setup();
        let m = gradient_conflict(&model, &cat, &seqs, 8, 1).unwrap();
        assert_eq!(m.labels, ["A", "B"]);
        for i in 0..2 {
            assert!((m.get(i, i) - 1.0).abs() < 1e-6);
            for j in 0..2 {
                assert_eq!(m.get(i, j), m.get(j, i));
                assert!((-1.0..=1.0).contains(&m.get(i, j)));
            }
        }
        assert!(m.within.iter().all(|w| w.is_some()));
        let mut csv = Vec::new();
        m.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 4);
    }

    #[test]
    fn empty_domain_is_an_error() {
        let (cat, mut seqs, model) = setup();
        for s in &mut seqs {
            s.events.retain(|e| e.domain == DomainId(0));
        }
        assert!(matches!(
            gradient_conflict(&model, &cat, &seqs, 8, 1),
            Err(EvaluationError::EmptyDomainBatch(_))
        ));
    }

    #[test]
    fn cloned_data_is_fully_aligned() {
        let (_, seqs, model) = setup();
        let (data, _) = build_dsp_data(&seqs, DomainId(0), 32, false);
        let sets = vec![("A".to_string(), data.clone()), ("A'".to_string(), data)];
        let m = gradient_conflict_sets(&model, &sets, 10, 3).unwrap();
        assert!((m.get(0, 1) - 1.0).abs() < 1e-6, "{}", m.get(0, 1));
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[1.0, 2.0], &[2.0, 4.0]) - 1.0).abs() < 1e-12);
        assert!((cosine(&[1.0, 0.0], &[-1.0, 0.0]) + 1.0).abs() < 1e-12);
    }
}
