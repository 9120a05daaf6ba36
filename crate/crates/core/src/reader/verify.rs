//! Rear verification: the answerability decision over reader probabilities,
//! followed by best-span decoding.

use serde::{Deserialize, Serialize};

use super::ReaderOutput;
use crate::error::{Error, Result};
use crate::span::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Null answer when both the difference and the mixture exceed delta.
    NullWhenAbove,
    /// Answer when both the difference and the mixture exceed delta.
    AnswerWhenAbove,
}

/// Which (start, end) position pairs count as candidate spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanOrder {
    /// start <= end: single-token answers allowed.
    Inclusive,
    /// start < end.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub delta: f64,
    pub polarity: Polarity,
    pub max_answer_chars: usize,
    pub span_order: SpanOrder,
}

impl VerifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_answer_chars == 0 {
            return Err(Error::Config("max_answer_chars must be at least 1".into()));
        }
        if !self.beta1.is_finite() || !self.beta2.is_finite() {
            return Err(Error::Config("beta weights must be finite".into()));
        }
        Ok(())
    }

    fn first_end(&self, k: usize) -> usize {
        match self.span_order {
            SpanOrder::Inclusive => k,
            SpanOrder::Strict => k + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationScores {
    pub score_ext: f64,
    pub score_has: f64,
    pub score_null: f64,
    pub score_diff: f64,
    pub mixture: f64,
    pub answerable: bool,
}

pub fn verdict(score_diff: f64, mixture: f64, cfg: &VerifierConfig) -> bool {
    let above = score_diff > cfg.delta && mixture > cfg.delta;
    match cfg.polarity {
        Polarity::NullWhenAbove => !above,
        Polarity::AnswerWhenAbove => above,
    }
}

/// Best `start[k] + end[l]` over feasible pairs, in O(n) via a running
/// maximum of the start probabilities.
fn best_pair_sum(out: &ReaderOutput, cfg: &VerifierConfig) -> Option<f64> {
    let n = out.positions();
    let mut best_start = f64::NEG_INFINITY;
    let mut best = None::<f64>;
    for l in 1..=n {
        let k_max = match cfg.span_order {
            SpanOrder::Inclusive => l,
            SpanOrder::Strict => l - 1,
        };
        if k_max >= 1 {
            best_start = best_start.max(out.start_probs[k_max]);
            let v = best_start + out.end_probs[l];
            best = Some(best.map_or(v, |b: f64| b.max(v)));
        }
    }
    best
}

pub fn compute_scores(out: &ReaderOutput, cfg: &VerifierConfig) -> Result<VerificationScores> {
    if out.positions() == 0 {
        return Err(Error::DegenerateInput { qid: out.qid.clone(), message: "no token positions".into() });
    }
    let score_has = best_pair_sum(out, cfg)
        .ok_or_else(|| Error::DegenerateInput { qid: out.qid.clone(), message: "no feasible start/end pair".into() })?;
    let y = out.no_answer_prob;
    let score_ext = y - (1.0 - y);
    let score_null = out.start_probs[0] + out.end_probs[0];
    let score_diff = score_null - score_has;
    let mixture = cfg.beta1 * score_diff + cfg.beta2 * score_ext;
    Ok(VerificationScores {
        score_ext,
        score_has,
        score_null,
        score_diff,
        mixture,
        answerable: verdict(score_diff, mixture, cfg),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoding {
    pub scores: VerificationScores,
    pub span: Option<Span>,
    /// Token positions (1-based) of the chosen span.
    pub positions: Option<(usize, usize)>,
    pub diagnostic: Option<String>,
}

/// Verdict plus argmax span under the length cap. Ties go to the smallest
/// start position, then the smallest end position.
pub fn decode(out: &ReaderOutput, cfg: &VerifierConfig) -> Result<Decoding> {
    let scores = compute_scores(out, cfg)?;
    if !scores.answerable {
        return Ok(Decoding { scores, span: None, positions: None, diagnostic: None });
    }
    let n = out.positions();
    let mut best: Option<(f64, usize, usize)> = None;
    for k in 1..=n {
        let begin = out.offsets[k - 1].0;
        for l in cfg.first_end(k)..=n {
            let (_, end) = out.offsets[l - 1];
            if end.saturating_sub(begin) > cfg.max_answer_chars {
                break;
            }
            let v = out.start_probs[k] + out.end_probs[l];
            if best.is_none_or(|(b, _, _)| v > b) {
                best = Some((v, k, l));
            }
        }
    }
    match best {
        Some((_, k, l)) => Ok(Decoding {
            scores,
            span: Some(Span { start: out.offsets[k - 1].0, end: out.offsets[l - 1].1 }),
            positions: Some((k, l)),
            diagnostic: None,
        }),
        None => {
            let msg =
                format!("{}: no span within {} characters; treating as unanswerable", out.qid, cfg.max_answer_chars);
            log::warn!("{msg}");
            let mut scores = scores;
            scores.answerable = false;
            Ok(Decoding { scores, span: None, positions: None, diagnostic: Some(msg) })
        }
    }
}

pub fn decode_span(out: &ReaderOutput, cfg: &VerifierConfig) -> Result<Option<Span>> {
    Ok(decode(out, cfg)?.span)
}
