//! Per-sentence answers to final answers, yes/no mapping, and whole-document
//! extraction.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::model::AnnotatedDocument;
use crate::preprocess::{document_drafts, stable_hash};
use crate::reader::{decode, ReadRequest, Reader, ReaderInput};
use crate::span::{char_len, merge_adjacent_spans, project_span, split_sentences, Sentence, Span};
use crate::templates::{instantiate, Diagnostic, Direction, QuestionDraft};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerPart {
    pub sentence_index: usize,
    /// Document coordinates.
    pub span: Span,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub question: String,
    pub doc_id: String,
    pub answerable: bool,
    pub text: String,
    pub parts: Vec<AnswerPart>,
}

impl FinalAnswer {
    pub fn unanswerable(question: &str, doc_id: &str) -> Self {
        FinalAnswer {
            question: question.into(),
            doc_id: doc_id.into(),
            answerable: false,
            text: String::new(),
            parts: vec![],
        }
    }

    fn from_parts(question: &str, doc_id: &str, mut parts: Vec<AnswerPart>, separator: &str) -> Self {
        parts.sort_by_key(|p| (p.sentence_index, p.span));
        let text = parts.iter().map(|p| p.text.as_str()).collect::<Vec<_>>().join(separator);
        FinalAnswer { question: question.into(), doc_id: doc_id.into(), answerable: !parts.is_empty(), text, parts }
    }
}

/// A reader answer for one sentence, in sentence-local coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceAnswer {
    pub sentence_index: usize,
    pub sentence_start: usize,
    pub answer: Option<(Span, String)>,
}

/// Joins the non-empty sentence answers in sentence order.
pub fn merge_answers(question: &str, doc_id: &str, per_sentence: &[SentenceAnswer], separator: &str) -> FinalAnswer {
    let parts = per_sentence
        .iter()
        .filter_map(|s| {
            s.answer.as_ref().map(|(span, text)| AnswerPart {
                sentence_index: s.sentence_index,
                span: span.shift(s.sentence_start),
                text: text.clone(),
            })
        })
        .collect();
    FinalAnswer::from_parts(question, doc_id, parts, separator)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YesNo {
    Yes,
    No,
    Unanswerable,
}

/// "no" when the answer contains any negation word, "yes" otherwise.
pub fn to_yes_no(ans: &FinalAnswer, negation_lexicon: &[String]) -> Result<YesNo> {
    if negation_lexicon.iter().all(|w| w.is_empty()) {
        return Err(Error::Config("negation lexicon is empty".into()));
    }
    if !ans.answerable {
        return Ok(YesNo::Unanswerable);
    }
    let negated = negation_lexicon.iter().any(|w| !w.is_empty() && ans.text.contains(w.as_str()));
    Ok(if negated { YesNo::No } else { YesNo::Yes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Ner,
    Relation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartRecord {
    pub sentence_index: usize,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// One line of the extraction output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub doc_id: String,
    pub key: String,
    pub answer: String,
    pub parts: Vec<PartRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    /// Entity type for NER keys, relation class otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl ExtractionRecord {
    pub fn from_answer(ans: &FinalAnswer, task: Task, category: &str) -> Self {
        ExtractionRecord {
            doc_id: ans.doc_id.clone(),
            key: ans.question.clone(),
            answer: ans.text.clone(),
            parts: ans
                .parts
                .iter()
                .map(|p| PartRecord {
                    sentence_index: p.sentence_index,
                    start: p.span.start,
                    end: p.span.end,
                    text: p.text.clone(),
                })
                .collect(),
            task: Some(task),
            category: Some(category.to_string()),
        }
    }

    pub fn to_answer(&self) -> Result<FinalAnswer> {
        let parts = self
            .parts
            .iter()
            .map(|p| {
                Ok(AnswerPart {
                    sentence_index: p.sentence_index,
                    span: Span::new(p.start, p.end)?,
                    text: p.text.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FinalAnswer {
            question: self.key.clone(),
            doc_id: self.doc_id.clone(),
            answerable: !self.parts.is_empty() || !self.answer.is_empty(),
            text: self.answer.clone(),
            parts,
        })
    }

    fn position(&self) -> usize {
        self.parts.first().map_or(usize::MAX, |p| p.start)
    }
}

pub fn sort_records(records: &mut [ExtractionRecord]) {
    records.sort_by(|a, b| {
        (a.doc_id.as_str(), a.key.as_str(), a.position()).cmp(&(b.doc_id.as_str(), b.key.as_str(), b.position()))
    });
}

/// The gold-standard answer for annotated spans: merged within each
/// sentence, joined across sentences with the separator.
pub fn reference_answer(
    doc: &AnnotatedDocument,
    question: &str,
    spans: &[Span],
    cfg: &PipelineConfig,
) -> Result<FinalAnswer> {
    let mut parts = Vec::new();
    for sentence in split_sentences(&doc.text, &cfg.text.sentence_delimiters) {
        let mut local = Vec::new();
        for s in spans {
            if let Some(l) = project_span(*s, &sentence.span)? {
                local.push(l);
            }
        }
        for m in merge_adjacent_spans(&local, &sentence.text, &cfg.text.bridge_chars)? {
            parts.push(AnswerPart {
                sentence_index: sentence.index,
                span: m.shift(sentence.span.start),
                text: m.slice(&sentence.text)?.to_string(),
            });
        }
    }
    Ok(FinalAnswer::from_parts(question, &doc.doc_id, parts, &cfg.separator))
}

fn draft_record(doc: &AnnotatedDocument, d: &QuestionDraft, cfg: &PipelineConfig) -> Result<ExtractionRecord> {
    let task = if d.direction == Direction::Ner { Task::Ner } else { Task::Relation };
    Ok(ExtractionRecord::from_answer(&reference_answer(doc, &d.question, &d.answer_spans, cfg)?, task, d.category()))
}

/// Gold extraction records for annotated documents: one per drafted question.
pub fn gold_records(docs: &[AnnotatedDocument], cfg: &PipelineConfig) -> Result<Vec<ExtractionRecord>> {
    let mut out = Vec::new();
    for doc in docs {
        let (ner, relation, _) = document_drafts(doc, cfg)?;
        let mut seen = BTreeSet::new();
        for d in ner.iter().chain(&relation) {
            if seen.insert(d.question.clone()) {
                out.push(draft_record(doc, d, cfg)?);
            }
        }
    }
    sort_records(&mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentInput {
    pub doc_id: String,
    pub doc_kind: String,
    pub text: String,
}

impl From<&AnnotatedDocument> for DocumentInput {
    fn from(d: &AnnotatedDocument) -> Self {
        DocumentInput { doc_id: d.doc_id.clone(), doc_kind: d.doc_kind.clone(), text: d.text.clone() }
    }
}

#[derive(Debug, Default)]
pub struct Extraction {
    pub records: Vec<ExtractionRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

/// A reader failure part-way through a document.
#[derive(Debug)]
pub struct ExtractionError {
    pub doc_id: String,
    pub completed: Vec<ExtractionRecord>,
    pub qid: String,
    pub source: Error,
}

impl fmt::Display for ExtractionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "document {}: reader failed at {} after {} completed record(s): {}",
            self.doc_id,
            self.qid,
            self.completed.len(),
            self.source
        )
    }
}

impl std::error::Error for ExtractionError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

#[derive(Debug, Clone)]
struct Query {
    question: String,
    task: Task,
    category: String,
}

struct Run<'a> {
    doc: &'a DocumentInput,
    segments: Vec<Sentence>,
    cfg: &'a PipelineConfig,
    reader: &'a dyn Reader,
}

impl Run<'_> {
    /// split -> read -> merge for every query. On reader failure, returns the
    /// answers of the queries that finished.
    fn answer(&self, queries: &[Query]) -> std::result::Result<Vec<FinalAnswer>, (Vec<FinalAnswer>, String, Error)> {
        let mut requests = Vec::new();
        let mut owner = Vec::new();
        for (qi, q) in queries.iter().enumerate() {
            for seg in &self.segments {
                let span_key = format!("{}:{}", seg.span.start, seg.span.end);
                requests.push(ReadRequest {
                    input: ReaderInput {
                        qid: stable_hash(&[&self.doc.doc_id, &q.question, &span_key]),
                        question: q.question.clone(),
                        context: seg.text.clone(),
                    },
                    doc_id: self.doc.doc_id.clone(),
                    context_span: seg.span,
                });
                owner.push(qi);
            }
        }

        let mut per_query: Vec<Vec<SentenceAnswer>> = vec![Vec::new(); queries.len()];
        let finish = |per_query: &[Vec<SentenceAnswer>], upto: usize| -> Vec<FinalAnswer> {
            queries
                .iter()
                .zip(per_query)
                .take(upto)
                .map(|(q, sa)| merge_answers(&q.question, &self.doc.doc_id, sa, &self.cfg.separator))
                .collect()
        };

        let batch_size = self.cfg.extraction.batch_size.max(1);
        for (bi, chunk) in requests.chunks(batch_size).enumerate() {
            let base = bi * batch_size;
            let result = self.reader.read_batch(chunk).and_then(|outs| {
                if outs.len() != chunk.len() {
                    return Err(Error::Protocol {
                        field: "outputs".into(),
                        message: "reader returned wrong count".into(),
                    });
                }
                outs.iter()
                    .zip(chunk)
                    .map(|(out, req)| {
                        out.validate(Some(char_len(&req.input.context)))?;
                        Ok((decode(out, &self.cfg.verifier)?, req))
                    })
                    .collect::<Result<Vec<_>>>()
            });
            match result {
                Ok(decoded) => {
                    for (i, (d, req)) in decoded.into_iter().enumerate() {
                        let seg = self.segments.iter().find(|s| s.span == req.context_span).expect("segment");
                        let answer = match d.span {
                            Some(s) => Some((
                                s,
                                s.slice(&req.input.context)
                                    .map_err(|e| (Vec::new(), req.input.qid.clone(), e))?
                                    .to_string(),
                            )),
                            None => None,
                        };
                        per_query[owner[base + i]].push(SentenceAnswer {
                            sentence_index: seg.index,
                            sentence_start: seg.span.start,
                            answer,
                        });
                    }
                }
                Err(e) => {
                    let done = owner[base];
                    return Err((finish(&per_query, done), chunk[0].input.qid.clone(), e));
                }
            }
        }
        Ok(finish(&per_query, queries.len()))
    }
}

/// Splits answer parts back into individual entity mentions.
fn entity_mentions(ans: &FinalAnswer, bridge: &BTreeSet<char>) -> Vec<String> {
    ans.parts
        .iter()
        .flat_map(|p| p.text.split(|c: char| bridge.contains(&c) && !c.is_whitespace()))
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Two-stage extraction over one document: NER questions first, then
/// relation templates filled with the recognized entities (and lexicon words
/// found in the text). Unanswerable questions are dropped.
pub fn extract_document(
    doc: &DocumentInput,
    cfg: &PipelineConfig,
    reader: &dyn Reader,
) -> std::result::Result<Extraction, Box<ExtractionError>> {
    let mut out = Extraction::default();
    let templates = cfg.templates_for_kind(&doc.doc_kind);
    if templates.templates.is_empty() {
        out.diagnostics
            .push(Diagnostic::new(&doc.doc_id, format!("no templates registered for doc_kind `{}`", doc.doc_kind)));
        return Ok(out);
    }
    let segments = if cfg.enable_splitting {
        split_sentences(&doc.text, &cfg.text.sentence_delimiters)
    } else if doc.text.is_empty() {
        Vec::new()
    } else {
        vec![Sentence { index: 0, span: Span { start: 0, end: char_len(&doc.text) }, text: doc.text.clone() }]
    };
    let run = Run { doc, segments, cfg, reader };
    let fail = |completed: Vec<ExtractionRecord>, qid: String, source: Error| {
        Box::new(ExtractionError { doc_id: doc.doc_id.clone(), completed, qid, source })
    };
    let keep = |answers: &[FinalAnswer], queries: &[Query], records: &mut Vec<ExtractionRecord>| {
        for (a, q) in answers.iter().zip(queries) {
            if a.answerable {
                records.push(ExtractionRecord::from_answer(a, q.task, &q.category));
            }
        }
    };

    let ner_queries: Vec<Query> = cfg
        .types
        .ner_queryable_types
        .iter()
        .filter_map(|ty| {
            templates.ner_for_type(ty).map(|t| Query {
                question: t.pattern.clone(),
                task: Task::Ner,
                category: ty.clone(),
            })
        })
        .collect();
    let ner_answers = run.answer(&ner_queries).map_err(|(done, qid, e)| {
        let mut recs = Vec::new();
        keep(&done, &ner_queries, &mut recs);
        fail(recs, qid, e)
    })?;
    keep(&ner_answers, &ner_queries, &mut out.records);

    let mut mentions: std::collections::BTreeMap<&str, Vec<String>> = Default::default();
    for (a, q) in ner_answers.iter().zip(&ner_queries) {
        mentions.entry(q.category.as_str()).or_default().extend(entity_mentions(a, &cfg.text.bridge_chars));
    }

    let mut relation_queries: Vec<Query> = Vec::new();
    let mut asked = BTreeSet::new();
    for t in templates.templates.iter().filter(|t| t.direction != Direction::Ner) {
        let Some(class) = cfg.types.relation_classes.iter().find(|c| c.name == t.relation_class) else {
            out.diagnostics.push(Diagnostic::new(
                &doc.doc_id,
                format!("template {} names unknown relation class `{}`", t.template_id, t.relation_class),
            ));
            continue;
        };
        let fill_type = t.fill_type(class).expect("relation template");
        let lexicon =
            cfg.extraction.fill_lexicon.get(fill_type).into_iter().flatten().filter(|w| doc.text.contains(w.as_str()));
        let fills = mentions.get(fill_type).into_iter().flatten().chain(lexicon);
        for fill in fills {
            let question = instantiate(t, fill).map_err(|e| fail(out.records.clone(), String::new(), e))?;
            if asked.insert(question.clone()) {
                relation_queries.push(Query { question, task: Task::Relation, category: class.name.clone() });
            }
        }
    }
    let relation_answers = run.answer(&relation_queries).map_err(|(done, qid, e)| {
        let mut recs = out.records.clone();
        keep(&done, &relation_queries, &mut recs);
        fail(recs, qid, e)
    })?;
    keep(&relation_answers, &relation_queries, &mut out.records);

    sort_records(&mut out.records);
    Ok(out)
}
