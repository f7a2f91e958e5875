use std::f64::consts::LN_2;

use crate::predictor::PredictiveDistribution;

use super::ContrastiveError;

/// Shannon entropy in nats, with `0·ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// `1 − H(p)/ln n`: 0 for the uniform distribution, 1 for a point mass.
pub fn entropy_confidence(dist: &PredictiveDistribution) -> Result<f64, ContrastiveError> {
    confidence_of(dist.probs())
}

pub(crate) fn confidence_of(p: &[f64]) -> Result<f64, ContrastiveError> {
    if p.len() < 2 {
        return Err(ContrastiveError::DegenerateSupport(p.len()));
    }
    Ok((1.0 - entropy(p) / (p.len() as f64).ln()).clamp(0.0, 1.0))
}

/// Jensen–Shannon divergence in nats, in `[0, ln 2]`.
pub fn jsd(p: &PredictiveDistribution, q: &PredictiveDistribution) -> Result<f64, ContrastiveError> {
    if p.support() != q.support() {
        return Err(ContrastiveError::SupportMismatch);
    }
    Ok(jsd_of(p.probs(), q.probs()))
}

pub(crate) fn jsd_of(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += a * (a / m).ln();
        }
        if b > 0.0 {
            total += b * (b / m).ln();
        }
    }
    (0.5 * total).clamp(0.0, LN_2)
}
