//! The reader contract and its backends.
//!
//! A reader maps (question, context) to a no-answer probability and start/end
//! distributions over token positions. Position 0 is the null sentinel;
//! positions `1..=n` carry character offsets into the context.

mod oracle;
#[cfg(feature = "remote")]
mod remote;
mod verify;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::span::Span;

pub use oracle::{
    noisy_oracle_read, oracle_read, AnnotationGold, ExampleGold, GoldSource, NoiseConfig, NoisyOracleReader,
    OracleReader,
};
#[cfg(feature = "remote")]
pub use remote::{remote_read, RemoteReader};
pub use verify::{
    compute_scores, decode, decode_span, verdict, Decoding, Polarity, SpanOrder, VerificationScores, VerifierConfig,
};

pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReaderInput {
    pub qid: String,
    pub question: String,
    pub context: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderOutput {
    pub qid: String,
    pub no_answer_prob: f64,
    pub start_probs: Vec<f64>,
    pub end_probs: Vec<f64>,
    /// Character interval of each position `1..=n`; `offsets[i]` is position `i + 1`.
    pub offsets: Vec<(usize, usize)>,
}

impl ReaderOutput {
    /// Number of non-null positions.
    pub fn positions(&self) -> usize {
        self.start_probs.len().saturating_sub(1)
    }

    /// Checks the simplex and offset invariants. `context_len`, when given,
    /// bounds the offsets.
    pub fn validate(&self, context_len: Option<usize>) -> Result<()> {
        let bad = |field: &str, message: String| Err(Error::Protocol { field: field.into(), message });
        if !(0.0..=1.0).contains(&self.no_answer_prob) {
            return bad("no_answer_prob", format!("{} outside [0, 1]", self.no_answer_prob));
        }
        if self.start_probs.is_empty() {
            return bad("start_probs", "empty vector".into());
        }
        if self.start_probs.len() != self.end_probs.len() {
            return bad(
                "end_probs",
                format!("length {} differs from start_probs length {}", self.end_probs.len(), self.start_probs.len()),
            );
        }
        for (field, v) in [("start_probs", &self.start_probs), ("end_probs", &self.end_probs)] {
            if let Some(p) = v.iter().find(|p| !p.is_finite() || **p < 0.0) {
                return bad(field, format!("invalid probability {p}"));
            }
            let sum: f64 = v.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                return bad(field, format!("sums to {sum}, expected 1"));
            }
        }
        if self.offsets.len() != self.positions() {
            return bad("offsets", format!("{} offsets for {} positions", self.offsets.len(), self.positions()));
        }
        for (i, &(s, e)) in self.offsets.iter().enumerate() {
            if s >= e {
                return bad("offsets", format!("position {} has empty interval [{s}, {e})", i + 1));
            }
            if i > 0 {
                let (ps, pe) = self.offsets[i - 1];
                if s < ps || e < pe {
                    return bad("offsets", format!("position {} decreases", i + 1));
                }
            }
            if let Some(len) = context_len {
                if e > len {
                    return bad("offsets", format!("position {} ends at {e} past context length {len}", i + 1));
                }
            }
        }
        Ok(())
    }
}

/// A reader input plus where its context sits in the source document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadRequest {
    pub input: ReaderInput,
    pub doc_id: String,
    pub context_span: Span,
}

pub trait Reader: Send + Sync {
    /// One output per request, in request order.
    fn read_batch(&self, batch: &[ReadRequest]) -> Result<Vec<ReaderOutput>>;
}
