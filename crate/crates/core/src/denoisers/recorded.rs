use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use super::remote::{decode_payload, encode_payload};
use super::{Denoiser, DenoiserCapabilities, DenoiserRequest, DenoiserResponse};
use crate::error::{Error, Result};

/// Hex SHA-256 over every field of a request, bit-exact on the reals.
pub fn request_digest(req: &DenoiserRequest<'_>) -> String {
    let mut h = Sha256::new();
    h.update(req.t.to_bits().to_le_bytes());
    h.update((req.condition.len() as u64).to_le_bytes());
    h.update(req.condition.as_bytes());
    for v in req.origin.iter().chain(&req.extent) {
        h.update((*v as u64).to_le_bytes());
    }
    h.update((req.channels as u64).to_le_bytes());
    for v in req.values {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Passes calls through and remembers each (request digest, response) pair.
pub struct RecordingDenoiser<D> {
    inner: D,
    table: Mutex<BTreeMap<String, Vec<f32>>>,
}

impl<D: Denoiser> RecordingDenoiser<D> {
    pub fn new(inner: D) -> Self {
        Self {
            inner,
            table: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn into_replay(self) -> ReplayDenoiser {
        let caps = self.inner.capabilities();
        ReplayDenoiser {
            table: self.table.into_inner().unwrap_or_else(|p| p.into_inner()),
            caps,
        }
    }
}

impl<D: Denoiser> Denoiser for RecordingDenoiser<D> {
    fn name(&self) -> String {
        format!("recording({})", self.inner.name())
    }
    fn capabilities(&self) -> DenoiserCapabilities {
        self.inner.capabilities()
    }
    fn velocity(&self, req: &DenoiserRequest<'_>) -> Result<DenoiserResponse> {
        let resp = self.inner.velocity(req)?;
        self.table
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(request_digest(req), resp.velocity.clone());
        Ok(resp)
    }
}

/// Answers from a stored digest table; unseen requests are an error.
#[derive(Debug, Clone)]
pub struct ReplayDenoiser {
    table: BTreeMap<String, Vec<f32>>,
    caps: DenoiserCapabilities,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ReplayFile {
    capabilities: DenoiserCapabilities,
    responses: BTreeMap<String, String>,
}

impl ReplayDenoiser {
    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ReplayFile {
            capabilities: self.caps,
            responses: self.table.iter().map(|(k, v)| (k.clone(), encode_payload(v))).collect(),
        };
        let text = serde_json::to_string(&file).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: ReplayFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let table = file
            .responses
            .into_iter()
            .map(|(k, v)| decode_payload(&v).map(|d| (k, d)))
            .collect::<Result<_>>()?;
        Ok(Self {
            table,
            caps: file.capabilities,
        })
    }
}

impl Denoiser for ReplayDenoiser {
    fn name(&self) -> String {
        format!("replay({} responses)", self.table.len())
    }
    fn capabilities(&self) -> DenoiserCapabilities {
        self.caps
    }
    fn velocity(&self, req: &DenoiserRequest<'_>) -> Result<DenoiserResponse> {
        let key = request_digest(req);
        self.table
            .get(&key)
            .map(|v| DenoiserResponse::new(v.clone()))
            .ok_or_else(|| Error::Capability(format!("no recorded response for request {key}")))
    }
}
