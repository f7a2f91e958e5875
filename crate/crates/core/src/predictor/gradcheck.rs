use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{Network, TrainSeq};
use super::PredictorError;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter index where the maximum occurred.
    pub worst_index: usize,
    pub n_checked: usize,
}

fn mean_loss(net: &Network<f64>, batch: &[TrainSeq], n_targets: usize) -> f64 {
    batch.iter().map(|s| net.loss(s)).sum::<f64>() / n_targets as f64
}

/// Compares backpropagated gradients with central finite differences on
/// `n_samples` randomly chosen parameters (the unused padding row is never
/// sampled). Dropout is off. Relative error is
/// `|g_a − g_n| / max(|g_a|, |g_n|, 1e-8)`.
pub fn gradient_check(
    net: &Network<f64>,
    batch: &[TrainSeq],
    epsilon: f64,
    tolerance: f64,
    n_samples: usize,
    seed: u64,
) -> Result<GradCheckReport, PredictorError> {
    if !(1e-6..=1e-4).contains(&epsilon) {
        return Err(PredictorError::InvalidArgument(format!(
            "epsilon must lie in [1e-6, 1e-4], got {epsilon}"
        )));
    }
    let n_targets: usize = batch.iter().map(|s| s.n_targets()).sum();
    if n_targets == 0 {
        return Err(PredictorError::InvalidArgument("batch has no targets".into()));
    }
    let mut analytic = vec![0.0; net.n_params()];
    for s in batch {
        net.loss_and_grad::<ChaCha8Rng>(s, 1.0 / n_targets as f64, &mut analytic, None);
    }

    let pad = net.shape().hidden;
    let pool = net.n_params() - pad;
    let picks = sample(&mut ChaCha8Rng::seed_from_u64(seed), pool, n_samples.min(pool));
    let mut probe = net.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        n_checked: 0,
    };
    for k in picks.iter() {
        let idx = k + pad;
        let orig = probe.params()[idx];
        probe.params_mut()[idx] = orig + epsilon;
        let up = mean_loss(&probe, batch, n_targets);
        probe.params_mut()[idx] = orig - epsilon;
        let down = mean_loss(&probe, batch, n_targets);
        probe.params_mut()[idx] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic[idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = idx;
        }
        report.n_checked += 1;
    }
    if report.max_rel_error > tolerance {
        return Err(PredictorError::CheckFailed {
            max_rel_error: report.max_rel_error,
            tolerance,
        });
    }
    Ok(report)
}
