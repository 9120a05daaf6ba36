//! From question drafts to single-span QA examples.
//!
//! Multi-span answers are first merged across punctuation gaps. When more
//! than one span survives, the paragraph is split into sentences (and, as a
//! fallback, clauses) so that each emitted example has one or zero answers.
//! Impossible questions are built by pairing a question with a sentence that
//! holds a same-class answer of a different left entity.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::model::AnnotatedDocument;
use crate::span::{char_len, merge_adjacent_spans, project_span, split_clauses, split_sentences, Sentence, Span};
use crate::templates::{
    generate_ner_questions, generate_relation_questions, Diagnostic, Direction, DraftSource, QuestionDraft,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Paragraph,
    Sentence,
    Clause,
}

impl Granularity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Granularity::Paragraph => "paragraph",
            Granularity::Sentence => "sentence",
            Granularity::Clause => "clause",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerText {
    pub text: String,
    pub answer_start: usize,
}

impl AnswerText {
    pub fn span(&self) -> Span {
        Span { start: self.answer_start, end: self.answer_start + char_len(&self.text) }
    }
}

/// How an example came about; part of the qid so that a natural empty and a
/// constructed impossible example over the same context stay distinct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleKind {
    Answer,
    NaturalEmpty,
    Constructed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub qid: String,
    pub question: String,
    pub context: String,
    pub granularity: Granularity,
    pub context_span: Span,
    pub answers: Vec<AnswerText>,
    pub is_impossible: bool,
    pub plausible_answers: Vec<AnswerText>,
    pub doc_id: String,
    pub template_id: String,
    pub direction: Direction,
    pub answer_type: String,
    pub category: String,
    pub kind: ExampleKind,
}

impl QAExample {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Error::InvalidDocument {
            doc_id: self.doc_id.clone(),
            message: format!("example {}: {m}", self.qid),
        };
        if self.is_impossible != self.answers.is_empty() {
            return Err(bad("is_impossible disagrees with answers"));
        }
        if self.answers.len() > 1 {
            return Err(bad("more than one answer"));
        }
        if !self.is_impossible && !self.plausible_answers.is_empty() {
            return Err(bad("plausible answers on an answerable example"));
        }
        for a in self.answers.iter().chain(&self.plausible_answers) {
            if a.text.is_empty() || a.span().slice(&self.context)? != a.text {
                return Err(bad("answer text does not match context"));
            }
        }
        Ok(())
    }

    pub fn answer_span(&self) -> Option<Span> {
        self.answers.first().map(AnswerText::span)
    }
}

pub fn stable_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0x1f]);
    }
    h.finalize().iter().take(12).map(|b| format!("{b:02x}")).collect()
}

fn unit_interval(parts: &[&str]) -> f64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0x1f]);
    }
    let bytes: [u8; 8] = h.finalize()[..8].try_into().expect("8 bytes");
    (u64::from_be_bytes(bytes) >> 11) as f64 / (1u64 << 53) as f64
}

struct Builder<'a> {
    draft: &'a QuestionDraft,
    doc: &'a AnnotatedDocument,
}

impl Builder<'_> {
    fn example(
        &self,
        granularity: Granularity,
        context: &str,
        context_span: Span,
        answer: Option<Span>,
        plausible: &[Span],
        kind: ExampleKind,
    ) -> Result<QAExample> {
        let text_of = |s: &Span| -> Result<AnswerText> {
            Ok(AnswerText { text: s.slice(context)?.to_string(), answer_start: s.start })
        };
        let fill = match &self.draft.filled_entity {
            Some(id) => id.clone(),
            None => self.draft.answer_entity_type.clone(),
        };
        let span_key = format!("{}:{}", context_span.start, context_span.end);
        let kind_key = format!("{kind:?}");
        let qid = stable_hash(&[
            &self.doc.doc_id,
            &self.draft.template_id,
            &fill,
            self.draft.direction.as_str(),
            granularity.as_str(),
            &span_key,
            &kind_key,
        ]);
        let answers = answer.iter().map(text_of).collect::<Result<Vec<_>>>()?;
        Ok(QAExample {
            qid,
            question: self.draft.question.clone(),
            context: context.to_string(),
            granularity,
            context_span,
            is_impossible: answers.is_empty(),
            answers,
            plausible_answers: plausible.iter().map(text_of).collect::<Result<_>>()?,
            doc_id: self.doc.doc_id.clone(),
            template_id: self.draft.template_id.clone(),
            direction: self.draft.direction,
            answer_type: self.draft.answer_entity_type.clone(),
            category: self.draft.category().to_string(),
            kind,
        })
    }
}

#[derive(Debug, Default)]
pub struct Resolved {
    pub examples: Vec<QAExample>,
    pub diagnostics: Vec<Diagnostic>,
}

fn spans_inside(spans: &[Span], segment: &Span) -> Result<Vec<Span>> {
    let mut out = Vec::new();
    for s in spans {
        if let Some(local) = project_span(*s, segment)? {
            out.push(local);
        }
    }
    Ok(out)
}

fn keep_natural_empty(cfg: &PipelineConfig, doc_id: &str, question: &str, span: &Span) -> bool {
    if !cfg.dataset.include_natural_empties {
        return false;
    }
    let key = format!("{}:{}", span.start, span.end);
    unit_interval(&[&cfg.dataset.seed.to_string(), doc_id, question, &key]) < cfg.dataset.natural_empty_fraction
}

/// Turns one draft into examples holding at most one answer span each.
pub fn resolve_multispan(draft: &QuestionDraft, doc: &AnnotatedDocument, cfg: &PipelineConfig) -> Result<Resolved> {
    let bridge = &cfg.text.bridge_chars;
    let b = Builder { draft, doc };
    let mut out = Resolved::default();
    let merged = merge_adjacent_spans(&draft.answer_spans, &doc.text, bridge)?;
    let paragraph = Span { start: 0, end: char_len(&doc.text) };

    if merged.len() <= 1 || !cfg.enable_splitting {
        let Some(first) = merged.first() else {
            return Ok(out);
        };
        if merged.len() > 1 {
            out.diagnostics.push(Diagnostic::new(
                &doc.doc_id,
                format!("splitting disabled; `{}` keeps 1 of {} spans", draft.question, merged.len()),
            ));
        }
        out.examples.push(b.example(
            Granularity::Paragraph,
            &doc.text,
            paragraph,
            Some(*first),
            &[],
            ExampleKind::Answer,
        )?);
        return Ok(out);
    }

    for sentence in split_sentences(&doc.text, &cfg.text.sentence_delimiters) {
        let local = merge_adjacent_spans(&spans_inside(&draft.answer_spans, &sentence.span)?, &sentence.text, bridge)?;
        match local.len() {
            0 => {
                if keep_natural_empty(cfg, &doc.doc_id, &draft.question, &sentence.span) {
                    out.examples.push(b.example(
                        Granularity::Sentence,
                        &sentence.text,
                        sentence.span,
                        None,
                        &[],
                        ExampleKind::NaturalEmpty,
                    )?);
                }
            }
            1 => out.examples.push(b.example(
                Granularity::Sentence,
                &sentence.text,
                sentence.span,
                Some(local[0]),
                &[],
                ExampleKind::Answer,
            )?),
            _ => resolve_clauses(&b, &sentence, &local, cfg, &mut out)?,
        }
    }
    Ok(out)
}

fn resolve_clauses(
    b: &Builder,
    sentence: &Sentence,
    merged_local: &[Span],
    cfg: &PipelineConfig,
    out: &mut Resolved,
) -> Result<()> {
    let bridge = &cfg.text.bridge_chars;
    let clauses = split_clauses(sentence, &cfg.text.clause_delimiters);
    let per_clause: Result<Vec<Vec<Span>>> = clauses
        .iter()
        .map(|c| spans_inside(&b.draft.answer_spans, &c.span).and_then(|s| merge_adjacent_spans(&s, &c.text, bridge)))
        .collect();

    let Ok(per_clause) = per_clause else {
        out.diagnostics.push(Diagnostic::new(
            &b.doc.doc_id,
            format!(
                "`{}`: answer crosses a clause in sentence {}; keeping the first span",
                b.draft.question, sentence.index
            ),
        ));
        out.examples.push(b.example(
            Granularity::Sentence,
            &sentence.text,
            sentence.span,
            Some(merged_local[0]),
            &[],
            ExampleKind::Answer,
        )?);
        return Ok(());
    };

    for (clause, spans) in clauses.iter().zip(per_clause) {
        match spans.len() {
            0 => {
                if keep_natural_empty(cfg, &b.doc.doc_id, &b.draft.question, &clause.span) {
                    out.examples.push(b.example(
                        Granularity::Clause,
                        &clause.text,
                        clause.span,
                        None,
                        &[],
                        ExampleKind::NaturalEmpty,
                    )?);
                }
            }
            n => {
                if n > 1 {
                    out.diagnostics.push(Diagnostic::new(
                        &b.doc.doc_id,
                        format!(
                            "`{}`: {n} spans remain in clause {}; keeping the first",
                            b.draft.question, clause.span
                        ),
                    ));
                }
                out.examples.push(b.example(
                    Granularity::Clause,
                    &clause.text,
                    clause.span,
                    Some(spans[0]),
                    &[],
                    ExampleKind::Answer,
                )?);
            }
        }
    }
    Ok(())
}

/// Impossible questions with plausible answers from same-class dependencies
/// of a different left entity.
pub fn construct_impossible(
    doc: &AnnotatedDocument,
    drafts: &[QuestionDraft],
    cfg: &PipelineConfig,
) -> Result<Vec<QAExample>> {
    let sentences = split_sentences(&doc.text, &cfg.text.sentence_delimiters);
    let sentence_of = |s: &Span| sentences.iter().position(|x| x.span.contains(s));
    let mut out = Vec::new();

    for draft in drafts.iter().filter(|d| d.direction == Direction::QueryRight) {
        let (DraftSource::Dependency { relation_class, .. }, Some(left_id)) = (&draft.source, &draft.filled_entity)
        else {
            continue;
        };
        let Some(left) = doc.entity(left_id) else { continue };
        let true_answers: Vec<&str> = draft.answer_spans.iter().map(|s| s.slice(&doc.text)).collect::<Result<_>>()?;

        let mut by_sentence: BTreeMap<usize, Vec<Span>> = BTreeMap::new();
        for dep in &doc.dependencies {
            let (from, to) = doc.endpoints(dep)?;
            let class = format!("{}-{}", from.entity_type, to.entity_type);
            if &class != relation_class || from.id == left.id || from.text == left.text {
                continue;
            }
            if let Some(si) = sentence_of(&to.span) {
                by_sentence.entry(si).or_default().push(to.span);
            }
        }

        let b = Builder { draft, doc };
        for (si, mut spans) in by_sentence {
            let sentence = &sentences[si];
            let answer_here = draft.answer_spans.iter().any(|s| s.overlaps(&sentence.span))
                || true_answers.iter().any(|t| sentence.text.contains(t));
            if answer_here {
                continue;
            }
            spans.sort();
            spans.dedup();
            let local: Vec<Span> =
                spans.iter().filter_map(|s| project_span(*s, &sentence.span).ok().flatten()).collect();
            out.push(b.example(
                Granularity::Sentence,
                &sentence.text,
                sentence.span,
                None,
                &local,
                ExampleKind::Constructed,
            )?);
        }
    }
    Ok(out)
}

#[derive(Debug, Default)]
pub struct Assembled {
    pub examples: Vec<QAExample>,
    pub diagnostics: Vec<Diagnostic>,
}

/// All drafts of one document, after the doc_kind template filter.
pub fn document_drafts(
    doc: &AnnotatedDocument,
    cfg: &PipelineConfig,
) -> Result<(Vec<QuestionDraft>, Vec<QuestionDraft>, Vec<Diagnostic>)> {
    let templates = cfg.templates_for_kind(&doc.doc_kind);
    let ner = generate_ner_questions(doc, &cfg.types, &templates);
    let (relation, diagnostics) = generate_relation_questions(doc, &templates)?;
    Ok((ner, relation, diagnostics))
}

pub fn assemble_document(doc: &AnnotatedDocument, cfg: &PipelineConfig) -> Result<Assembled> {
    let mut out = Assembled::default();
    let (ner, relation, diagnostics) = document_drafts(doc, cfg)?;
    out.diagnostics.extend(diagnostics);
    for draft in ner.iter().chain(&relation) {
        let r = resolve_multispan(draft, doc, cfg)?;
        out.examples.extend(r.examples);
        out.diagnostics.extend(r.diagnostics);
    }
    if cfg.dataset.construct_impossible {
        out.examples.extend(construct_impossible(doc, &relation, cfg)?);
    }
    Ok(out)
}

/// Builds the full example list. qids are content hashes; a repeated qid
/// is reported as an error.
pub fn assemble_dataset(docs: &[AnnotatedDocument], cfg: &PipelineConfig) -> Result<Assembled> {
    let mut out = Assembled::default();
    for doc in docs {
        let a = assemble_document(doc, cfg)?;
        out.examples.extend(a.examples);
        out.diagnostics.extend(a.diagnostics);
    }
    check_qids(&out.examples)?;
    Ok(out)
}

pub fn check_qids(examples: &[QAExample]) -> Result<()> {
    let mut seen = HashSet::new();
    for e in examples {
        if !seen.insert(e.qid.as_str()) {
            return Err(Error::QidCollision { qid: e.qid.clone() });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<QAExample>,
    pub dev: Vec<QAExample>,
    pub test: Vec<QAExample>,
    pub seed: u64,
    pub ratios: [f64; 3],
}

/// Largest-remainder apportionment of `n` items over `ratios`.
fn apportion(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for i in order.into_iter().cycle() {
        if rest == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            counts[i] += 1;
            rest -= 1;
        }
    }
    counts
}

/// Assigns whole documents to train/dev/test. Documents are ordered by a
/// seeded hash of their id and cut by largest-remainder counts.
pub fn split_dataset(examples: &[QAExample], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || ratios.iter().any(|r| *r < 0.0) {
        return Err(Error::Config(format!("split ratios must be nonnegative and sum to 1, got {sum}")));
    }
    let mut docs: Vec<&str> = Vec::new();
    let mut seen = HashSet::new();
    for e in examples {
        if seen.insert(e.doc_id.as_str()) {
            docs.push(&e.doc_id);
        }
    }
    let seed_s = seed.to_string();
    let mut keyed: Vec<(String, &str)> = docs.iter().map(|d| (stable_hash(&[&seed_s, d]), *d)).collect();
    keyed.sort();
    let [n_train, n_dev, _] = apportion(keyed.len(), &ratios);
    let mut assignment = std::collections::HashMap::new();
    for (i, (_, d)) in keyed.iter().enumerate() {
        let bucket = if i < n_train {
            0
        } else if i < n_train + n_dev {
            1
        } else {
            2
        };
        assignment.insert(*d, bucket);
    }
    let mut split = DatasetSplit { train: vec![], dev: vec![], test: vec![], seed, ratios };
    for e in examples {
        match assignment[e.doc_id.as_str()] {
            0 => split.train.push(e.clone()),
            1 => split.dev.push(e.clone()),
            _ => split.test.push(e.clone()),
        }
    }
    Ok(split)
}
