//! Versioned model checkpoints.
//!
//! Layout: the 8-byte magic `TAESARCK`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a JSON header (config, role, catalog
//! fingerprint, backend kind), then the body: raw little-endian `f32`
//! parameters for the neural backend or a JSON transition table for the
//! Markov backend.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::DomainCatalog;

use super::{Backend, MarkovTable, Network, PredictorConfig, PredictorError, PredictorModel, Role};

const MAGIC: &[u8; 8] = b"TAESARCK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    role: Role,
    config: PredictorConfig,
    fingerprint: String,
    n_items: usize,
    backend: String,
    n_params: usize,
}

impl PredictorModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let (kind, body, n_params) = match &self.backend {
            Backend::Neural(net) => {
                let mut b = Vec::with_capacity(net.n_params() * 4);
                for p in net.params() {
                    b.extend_from_slice(&p.to_le_bytes());
                }
                ("neural", b, net.n_params())
            }
            Backend::Markov(t) => (
                "markov",
                serde_json::to_vec(t).expect("table serialises"),
                0,
            ),
        };
        let header = serde_json::to_vec(&Header {
            version: VERSION,
            role: self.role,
            config: self.config.clone(),
            fingerprint: self.catalog_fingerprint().to_string(),
            n_items: self.n_items(),
            backend: kind.into(),
            n_params,
        })
        .expect("header serialises");
        let mut out = Vec::with_capacity(20 + header.len() + body.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&body);
        out
    }

    /// Decodes a checkpoint; with `catalog`, rejects a fingerprint mismatch.
    pub fn from_bytes(bytes: &[u8], catalog: Option<&DomainCatalog>) -> Result<Self, PredictorError> {
        let bad = |m: &str| PredictorError::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body_start = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[20..body_start]).map_err(|e| bad(&e.to_string()))?;
        if let Some(c) = catalog {
            if c.fingerprint() != header.fingerprint {
                return Err(PredictorError::VocabMismatch {
                    expected: header.fingerprint,
                    found: c.fingerprint().to_string(),
                });
            }
        }
        let body = &bytes[body_start..];
        let backend = match header.backend.as_str() {
            "neural" => {
                if body.len() != header.n_params * 4 {
                    return Err(bad("parameter payload has the wrong length"));
                }
                let params: Vec<f32> = body
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                let net = Network::from_params(header.config.shape(header.n_items), params)
                    .ok_or_else(|| bad("parameter count does not match config"))?;
                Backend::Neural(net)
            }
            "markov" => {
                let t: MarkovTable = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
                Backend::Markov(t)
            }
            other => return Err(bad(&format!("unknown backend `{other}`"))),
        };
        Ok(PredictorModel::with_fingerprint(
            header.role,
            backend,
            header.config,
            header.fingerprint,
            header.n_items,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<(), PredictorError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path, catalog: Option<&DomainCatalog>) -> Result<Self, PredictorError> {
        Self::from_bytes(&fs::read(path)?, catalog)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DomainRole, ItemId};
    use rand::SeedableRng;

    fn catalog(extra: bool) -> DomainCatalog {
        let mut items = vec![("a", "T"), ("b", "T"), ("x", "S")];
        if extra {
            items.push(("y", "S"));
        }
        DomainCatalog::new(
            vec![("T".into(), DomainRole::Target), ("S".into(), DomainRole::Source)],
            items,
        )
        .unwrap()
    }

    #[test]
    fn neural_round_trip_and_fingerprint_guard() {
        let cat = catalog(false);
        let cfg = PredictorConfig {
            hidden_size: 4,
            heads: 1,
            inner_size: 4,
            layers: 1,
            max_len: 5,
            ..Default::default()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let net = Network::random(cfg.shape(cat.n_items()), 0.1, &mut rng);
        let m = PredictorModel::new(Role::TargetExpert, Backend::Neural(net), cfg, &cat);
        let back = PredictorModel::from_bytes(&m.to_bytes(), Some(&cat)).unwrap();
        assert_eq!(back, m);
        assert!(matches!(
            PredictorModel::from_bytes(&m.to_bytes(), Some(&catalog(true))),
            Err(PredictorError::VocabMismatch { .. })
        ));
        assert!(PredictorModel::from_bytes(b"garbage", None).is_err());
    }

    #[test]
    fn markov_round_trip() {
        let cat = catalog(false);
        let mut t = MarkovTable::new(3, 0.5).unwrap();
        t.observe(ItemId(1), ItemId(2));
        let m = PredictorModel::new(Role::Base, Backend::Markov(t), PredictorConfig::default(), &cat);
        assert_eq!(PredictorModel::from_bytes(&m.to_bytes(), Some(&cat)).unwrap(), m);
    }
}
