//! Gold-derived readers for testing and calibration.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ReadRequest, Reader, ReaderInput, ReaderOutput};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::model::AnnotatedDocument;
use crate::preprocess::{stable_hash, AnswerText, ExampleKind, Granularity, QAExample};
use crate::span::{char_len, merge_adjacent_spans, project_span, Span};
use crate::templates::{generate_ner_questions, generate_relation_questions, Direction};

fn check_pairing(inp: &ReaderInput, gold: &QAExample) -> Result<usize> {
    let misuse = |m: &str| Error::OracleMisuse { qid: inp.qid.clone(), message: m.into() };
    if gold.qid != inp.qid {
        return Err(misuse("gold qid differs from input qid"));
    }
    if gold.context != inp.context {
        return Err(misuse("gold context differs from input context"));
    }
    let n = char_len(&inp.context);
    if n == 0 {
        return Err(misuse("empty context"));
    }
    Ok(n)
}

fn one_hot(len: usize, at: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[at] = 1.0;
    v
}

fn char_offsets(n: usize) -> Vec<(usize, usize)> {
    (0..n).map(|i| (i, i + 1)).collect()
}

/// One token per character. Character `i` sits at position `i + 1`.
pub fn oracle_read(inp: &ReaderInput, gold: &QAExample) -> Result<ReaderOutput> {
    let n = check_pairing(inp, gold)?;
    let (start, end, y) = match gold.answer_span() {
        Some(s) => (s.start + 1, s.end, 0.0),
        None => (0, 0, 1.0),
    };
    Ok(ReaderOutput {
        qid: inp.qid.clone(),
        no_answer_prob: y,
        start_probs: one_hot(n + 1, start),
        end_probs: one_hot(n + 1, end),
        offsets: char_offsets(n),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub boundary_jitter: usize,
    pub flip_prob: f64,
    pub temperature: f64,
}

fn softened(len: usize, at: usize, temperature: f64) -> Vec<f64> {
    // softmax over logits that are 1/T at the target and 0 elsewhere
    let off = (-1.0 / temperature).exp();
    let z = 1.0 + off * (len - 1) as f64;
    let mut v = vec![off / z; len];
    v[at] = 1.0 / z;
    v
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn rng_for(seed: u64, qid: &str) -> ChaCha8Rng {
    let h = stable_hash(&[&seed.to_string(), qid]);
    let mixed = u64::from_str_radix(&h[..16], 16).expect("hex digest");
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Oracle output with jittered boundaries, random answerability flips and
/// temperature-softened distributions. Deterministic in (seed, qid).
pub fn noisy_oracle_read(inp: &ReaderInput, gold: &QAExample, noise: &NoiseConfig, seed: u64) -> Result<ReaderOutput> {
    let n = check_pairing(inp, gold)?;
    if noise.temperature.is_nan() || noise.temperature <= 0.0 || !(0.0..=1.0).contains(&noise.flip_prob) {
        return Err(Error::Config("noise needs temperature > 0 and flip_prob in [0, 1]".into()));
    }
    let mut rng = rng_for(seed, &inp.qid);
    let flip = rng.gen::<f64>() < noise.flip_prob;
    let j = noise.boundary_jitter as i64;
    let mut jitter = || if j == 0 { 0 } else { rng.gen_range(-j..=j) };
    let (dj_start, dj_end) = (jitter(), jitter());
    let clamp = |x: i64| x.clamp(0, n as i64 - 1) as usize;

    let answer: Option<Span> = match (gold.answer_span(), flip) {
        (Some(s), false) => {
            let mut a = clamp(s.start as i64 + dj_start);
            let mut b = clamp(s.end as i64 - 1 + dj_end);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            Some(Span { start: a, end: b + 1 })
        }
        (Some(_), true) | (None, false) => None,
        (None, true) => match gold.plausible_answers.first() {
            Some(p) => Some(p.span()),
            None => {
                let start = rng.gen_range(0..n);
                let len = rng.gen_range(1..=(n - start).min(4));
                Some(Span { start, end: start + len })
            }
        },
    };
    let t = noise.temperature;
    let (start, end, y) = match answer {
        Some(s) => (s.start + 1, s.end, logistic(-1.0 / t)),
        None => (0, 0, logistic(1.0 / t)),
    };
    Ok(ReaderOutput {
        qid: inp.qid.clone(),
        no_answer_prob: y,
        start_probs: softened(n + 1, start, t),
        end_probs: softened(n + 1, end, t),
        offsets: char_offsets(n),
    })
}

/// Supplies the gold example an oracle answers from.
pub trait GoldSource: Send + Sync {
    fn gold(&self, req: &ReadRequest) -> Result<QAExample>;
}

/// Gold keyed by qid, for datasets that already carry their answers.
#[derive(Debug, Default)]
pub struct ExampleGold {
    by_qid: HashMap<String, QAExample>,
}

impl ExampleGold {
    pub fn new(examples: &[QAExample]) -> Self {
        ExampleGold { by_qid: examples.iter().map(|e| (e.qid.clone(), e.clone())).collect() }
    }
}

impl GoldSource for ExampleGold {
    fn gold(&self, req: &ReadRequest) -> Result<QAExample> {
        self.by_qid
            .get(&req.input.qid)
            .cloned()
            .ok_or_else(|| Error::OracleMisuse { qid: req.input.qid.clone(), message: "no gold example".into() })
    }
}

struct DocGold {
    text: String,
    answers: HashMap<String, Vec<Span>>,
}

/// Gold derived from annotations: every question the templates can render
/// maps to its annotated answer spans; anything else has no answer.
pub struct AnnotationGold {
    docs: HashMap<String, DocGold>,
    bridge: std::collections::BTreeSet<char>,
}

impl AnnotationGold {
    pub fn new(docs: &[AnnotatedDocument], cfg: &PipelineConfig) -> Result<Self> {
        let mut map = HashMap::new();
        for doc in docs {
            let mut answers: HashMap<String, Vec<Span>> = HashMap::new();
            let ner = generate_ner_questions(doc, &cfg.types, &cfg.templates);
            let (relation, _) = generate_relation_questions(doc, &cfg.templates)?;
            for d in ner.into_iter().chain(relation) {
                let spans = answers.entry(d.question).or_default();
                spans.extend(d.answer_spans);
                spans.sort();
                spans.dedup();
            }
            map.insert(doc.doc_id.clone(), DocGold { text: doc.text.clone(), answers });
        }
        Ok(AnnotationGold { docs: map, bridge: cfg.text.bridge_chars.clone() })
    }

    /// Annotated answer spans for a question, in document coordinates.
    pub fn answers(&self, doc_id: &str, question: &str) -> Option<&[Span]> {
        self.docs.get(doc_id)?.answers.get(question).map(Vec::as_slice)
    }
}

impl GoldSource for AnnotationGold {
    fn gold(&self, req: &ReadRequest) -> Result<QAExample> {
        let misuse = |m: String| Error::OracleMisuse { qid: req.input.qid.clone(), message: m };
        let doc = self.docs.get(&req.doc_id).ok_or_else(|| misuse(format!("unknown document {}", req.doc_id)))?;
        if req.context_span.slice(&doc.text)? != req.input.context {
            return Err(misuse("context does not match the document at context_span".into()));
        }
        let local: Vec<Span> = doc
            .answers
            .get(&req.input.question)
            .map(|spans| spans.iter().filter_map(|s| project_span(*s, &req.context_span).ok().flatten()).collect())
            .unwrap_or_default();
        let merged = merge_adjacent_spans(&local, &req.input.context, &self.bridge)?;
        // a reader returns one span; extra spans in the same context are lost
        let answers = match merged.first() {
            Some(s) => vec![AnswerText { text: s.slice(&req.input.context)?.to_string(), answer_start: s.start }],
            None => vec![],
        };
        Ok(QAExample {
            qid: req.input.qid.clone(),
            question: req.input.question.clone(),
            context: req.input.context.clone(),
            granularity: Granularity::Sentence,
            context_span: req.context_span,
            is_impossible: answers.is_empty(),
            answers,
            plausible_answers: vec![],
            doc_id: req.doc_id.clone(),
            template_id: String::new(),
            direction: Direction::Ner,
            answer_type: String::new(),
            category: String::new(),
            kind: ExampleKind::Answer,
        })
    }
}

pub struct OracleReader<G> {
    pub gold: G,
}

impl<G: GoldSource> Reader for OracleReader<G> {
    fn read_batch(&self, batch: &[ReadRequest]) -> Result<Vec<ReaderOutput>> {
        batch.iter().map(|r| oracle_read(&r.input, &self.gold.gold(r)?)).collect()
    }
}

pub struct NoisyOracleReader<G> {
    pub gold: G,
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl<G: GoldSource> Reader for NoisyOracleReader<G> {
    fn read_batch(&self, batch: &[ReadRequest]) -> Result<Vec<ReaderOutput>> {
        batch.iter().map(|r| noisy_oracle_read(&r.input, &self.gold.gold(r)?, &self.noise, self.seed)).collect()
    }
}
