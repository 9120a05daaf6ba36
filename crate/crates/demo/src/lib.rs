//! Browser demo: span merging and sentence splitting, the answerability
//! verifier with adjustable weights, and question generation from an
//! annotated document.
//!
//! Every export takes and returns JSON strings. Failures come back as
//! `{"error": "..."}`.

use serde::{Deserialize, Serialize};
use serde_json::json;
use wasm_bindgen::prelude::*;

use clinqa_core::config::PipelineConfig;
use clinqa_core::model::AnnotationRecord;
use clinqa_core::preprocess::{assemble_document, AnswerText, ExampleKind, Granularity, QAExample};
use clinqa_core::reader::{
    decode, noisy_oracle_read, NoiseConfig, Polarity, ReaderInput, ReaderOutput, VerifierConfig,
};
use clinqa_core::span::{char_len, merge_adjacent_spans, project_span, split_sentences, Span};
use clinqa_core::templates::Direction;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

#[derive(Serialize)]
struct Piece {
    start: usize,
    end: usize,
    text: String,
}

fn piece(s: Span, text: &str) -> Result<Piece, String> {
    Ok(Piece { start: s.start, end: s.end, text: s.slice(text).map_err(err)?.to_string() })
}

/// Merges `spans` (a JSON list of `[start, end]`) over `text`, then regroups
/// the original spans sentence by sentence.
pub fn explore_spans(text: &str, spans_json: &str) -> Result<String, String> {
    let cfg = PipelineConfig::demo();
    let raw: Vec<(usize, usize)> = serde_json::from_str(spans_json).map_err(err)?;
    let len = char_len(text);
    let spans = raw.iter().map(|&(s, e)| Span::within(s, e, len)).collect::<Result<Vec<_>, _>>().map_err(err)?;
    let merged = merge_adjacent_spans(&spans, text, &cfg.text.bridge_chars).map_err(err)?;
    let mut sentences = Vec::new();
    for s in split_sentences(text, &cfg.text.sentence_delimiters) {
        let inside: Vec<Span> = spans.iter().filter_map(|x| project_span(*x, &s.span).ok().flatten()).collect();
        let local = merge_adjacent_spans(&inside, &s.text, &cfg.text.bridge_chars).map_err(err)?;
        let answers = local.iter().map(|l| piece(l.shift(s.span.start), text)).collect::<Result<Vec<_>, _>>()?;
        sentences.push(
            json!({"index": s.index, "start": s.span.start, "end": s.span.end, "text": s.text, "answers": answers}),
        );
    }
    let merged = merged.iter().map(|m| piece(*m, text)).collect::<Result<Vec<_>, _>>()?;
    Ok(json!({"merged": merged, "sentences": sentences}).to_string())
}

#[derive(Deserialize)]
pub struct NoisyRequest {
    pub context: String,
    /// Gold answer as `[start, end]`, or null for no answer.
    pub answer: Option<(usize, usize)>,
    pub boundary_jitter: usize,
    pub flip_prob: f64,
    pub temperature: f64,
    pub seed: u64,
}

/// A simulated reader output for one context and gold answer.
pub fn simulate_reader(request_json: &str) -> Result<String, String> {
    let r: NoisyRequest = serde_json::from_str(request_json).map_err(err)?;
    let n = char_len(&r.context);
    let answers = match r.answer {
        Some((s, e)) => {
            let span = Span::within(s, e, n).map_err(err)?;
            vec![AnswerText { text: span.slice(&r.context).map_err(err)?.to_string(), answer_start: s }]
        }
        None => vec![],
    };
    let gold = QAExample {
        qid: "demo".into(),
        question: String::new(),
        context: r.context.clone(),
        granularity: Granularity::Paragraph,
        context_span: Span { start: 0, end: n },
        is_impossible: answers.is_empty(),
        answers,
        plausible_answers: vec![],
        doc_id: "demo".into(),
        template_id: String::new(),
        direction: Direction::Ner,
        answer_type: String::new(),
        category: String::new(),
        kind: ExampleKind::Answer,
    };
    let input = ReaderInput { qid: "demo".into(), question: String::new(), context: r.context };
    let noise = NoiseConfig { boundary_jitter: r.boundary_jitter, flip_prob: r.flip_prob, temperature: r.temperature };
    let out = noisy_oracle_read(&input, &gold, &noise, r.seed).map_err(err)?;
    serde_json::to_string(&out).map_err(err)
}

/// Scores a reader output and decodes its answer under the given weights.
pub fn verify(
    output_json: &str,
    context: &str,
    beta1: f64,
    beta2: f64,
    delta: f64,
    null_when_above: bool,
) -> Result<String, String> {
    let out: ReaderOutput = serde_json::from_str(output_json).map_err(err)?;
    out.validate(Some(char_len(context))).map_err(err)?;
    let polarity = if null_when_above { Polarity::NullWhenAbove } else { Polarity::AnswerWhenAbove };
    let cfg = VerifierConfig { beta1, beta2, delta, polarity, ..VerifierConfig::default() };
    let d = decode(&out, &cfg).map_err(err)?;
    let answer = d.span.map(|s| piece(s, context)).transpose()?;
    Ok(json!({"scores": d.scores, "answer": answer, "diagnostic": d.diagnostic}).to_string())
}

/// SQuAD-style examples for one annotation record (the JSONL input format).
pub fn generate_questions(record_json: &str) -> Result<String, String> {
    let cfg = PipelineConfig::demo();
    let record: AnnotationRecord = serde_json::from_str(record_json).map_err(err)?;
    let doc = record.into_document().map_err(err)?;
    doc.validate(Some(&cfg.types)).map_err(err)?;
    let assembled = assemble_document(&doc, &cfg).map_err(err)?;
    let examples: Vec<_> = assembled
        .examples
        .iter()
        .map(|e| {
            json!({
                "question": e.question,
                "context": e.context,
                "granularity": e.granularity.as_str(),
                "answer": e.answers.first().map(|a| &a.text),
                "plausible": e.plausible_answers.iter().map(|a| &a.text).collect::<Vec<_>>(),
                "impossible": e.is_impossible,
            })
        })
        .collect();
    let notes: Vec<_> = assembled.diagnostics.iter().map(|d| &d.message).collect();
    Ok(json!({"examples": examples, "diagnostics": notes}).to_string())
}

fn or_error(r: Result<String, String>) -> String {
    r.unwrap_or_else(|e| json!({ "error": e }).to_string())
}

#[wasm_bindgen(js_name = exploreSpans)]
pub fn explore_spans_js(text: &str, spans_json: &str) -> String {
    or_error(explore_spans(text, spans_json))
}

#[wasm_bindgen(js_name = simulateReader)]
pub fn simulate_reader_js(request_json: &str) -> String {
    or_error(simulate_reader(request_json))
}

#[wasm_bindgen(js_name = verify)]
pub fn verify_js(
    output_json: &str,
    context: &str,
    beta1: f64,
    beta2: f64,
    delta: f64,
    null_when_above: bool,
) -> String {
    or_error(verify(output_json, context, beta1, beta2, delta, null_when_above))
}

#[wasm_bindgen(js_name = generateQuestions)]
pub fn generate_questions_js(record_json: &str) -> String {
    or_error(generate_questions(record_json))
}
