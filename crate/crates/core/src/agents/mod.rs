//! Speaker (meaning to sequence) and listener (sequence to meaning) networks.
//!
//! The two agents never share parameters.

mod listener;
mod speaker;

pub use listener::{Listener, ListenerArch, ListenerTrace};
pub use speaker::{DecodeMode, DecodeTrace, Generation, Speaker, SpeakerArch};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::Vocabulary;
use crate::nn::{self, Adam, Manifest, Parameterized};

/// Header stored with every agent checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentHeader {
    pub role: String,
    pub n_entities: usize,
    pub n_actions: usize,
    pub vocab_digest: String,
    pub embedding: usize,
    pub hidden: usize,
}

impl AgentHeader {
    fn new(role: &str, vocab: &Vocabulary, embedding: usize, hidden: usize) -> Self {
        AgentHeader {
            role: role.into(),
            n_entities: vocab.n_entities,
            n_actions: vocab.n_actions,
            vocab_digest: vocab.digest(),
            embedding,
            hidden,
        }
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::new(self.n_entities, self.n_actions)
    }
}

pub(crate) fn save_agent<M: Parameterized>(
    dir: &Path,
    model: &M,
    header: &AgentHeader,
    optimizer: Option<&Adam>,
) -> Result<Manifest> {
    nn::save_checkpoint(dir, model, serde_json::to_value(header)?, optimizer)
}

pub(crate) fn read_header(dir: &Path, role: &str) -> Result<AgentHeader> {
    let text = std::fs::read_to_string(dir.join(nn::MANIFEST_FILE))
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.display())))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let header: AgentHeader = serde_json::from_value(manifest.header)
        .map_err(|e| Error::Checkpoint(format!("bad agent header: {e}")))?;
    if header.role != role {
        return Err(Error::Checkpoint(format!(
            "expected a {role} checkpoint, found {}",
            header.role
        )));
    }
    let vocab = header.vocabulary()?;
    if vocab.digest() != header.vocab_digest {
        return Err(Error::Checkpoint("vocabulary digest mismatch".into()));
    }
    Ok(header)
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
