//! Versioned snapshots of a running chain.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chain::Chain;
use super::state::SamplerState;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "qdtm-checkpoint/1";

/// Seating, flags and random-stream position of a chain. Counts are not
/// stored; they are rebuilt from the seating on restore.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    /// Digest of the configuration that produced the chain.
    pub config_digest: String,
    pub iteration: usize,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    /// Word position of the stream, as a decimal string.
    pub rng_word_pos: String,
    pub seating: Vec<Vec<u32>>,
    pub table_topics: Vec<Vec<Option<u32>>>,
    pub flags: Vec<Vec<bool>>,
}

impl Checkpoint {
    pub fn capture(chain: &Chain, config_digest: &str) -> Checkpoint {
        let state = chain.state();
        let rng = chain.rng();
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config_digest: config_digest.to_string(),
            iteration: chain.iterations(),
            rng_seed: rng.get_seed(),
            rng_stream: rng.get_stream(),
            rng_word_pos: rng.get_word_pos().to_string(),
            seating: state.seating().to_vec(),
            table_topics: state.table_topics(),
            flags: state.flags().to_vec(),
        }
    }

    /// Checks the format tag and that the checkpoint came from `digest`.
    pub fn verify(&self, config_digest: &str) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::FormatTag {
                expected: CHECKPOINT_FORMAT,
                found: self.format.clone(),
            });
        }
        if self.config_digest != config_digest {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint was written for configuration {}, current is {}",
                self.config_digest, config_digest
            )));
        }
        Ok(())
    }

    pub fn rng(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .rng_word_pos
            .parse()
            .map_err(|_| Error::CheckpointMismatch(format!("bad stream position {:?}", self.rng_word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.rng_seed);
        rng.set_stream(self.rng_stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }

    /// Reseats the tokens of `blank`, an unseated state built from the same
    /// inputs as the checkpointed one.
    pub fn restore_state(&self, blank: &SamplerState) -> Result<SamplerState> {
        SamplerState::from_assignments(
            blank.docs.clone(),
            blank.vocab_size,
            blank.new_topic_density,
            blank.hyper(),
            blank.concepts.clone(),
            blank.promotion.clone(),
            &self.seating,
            &self.table_topics,
            Some(&self.flags),
        )
        .map_err(|e| Error::CheckpointMismatch(e.to_string()))
    }

    /// Writes atomically through a sibling temporary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path)?;
        let c: Checkpoint = serde_json::from_slice(&bytes)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::FormatTag {
                expected: CHECKPOINT_FORMAT,
                found: c.format,
            });
        }
        Ok(c)
    }
}
