//! SQuAD 2.0 file format.
//!
//! Besides the standard keys each `qas` entry carries the provenance fields
//! needed to rebuild a [`QAExample`] exactly: granularity, context span,
//! template, direction, answer type, category and example kind.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::preprocess::{AnswerText, ExampleKind, Granularity, QAExample};
use crate::span::Span;
use crate::templates::Direction;

pub const VERSION: &str = "v2.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquadFile {
    pub version: String,
    pub data: Vec<SquadArticle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquadArticle {
    pub title: String,
    pub paragraphs: Vec<SquadParagraph>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquadParagraph {
    pub context: String,
    pub qas: Vec<SquadQa>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquadQa {
    pub id: String,
    pub question: String,
    pub answers: Vec<AnswerText>,
    pub is_impossible: bool,
    #[serde(default)]
    pub plausible_answers: Vec<AnswerText>,
    pub granularity: Granularity,
    pub context_span: [usize; 2],
    pub template_id: String,
    pub direction: Direction,
    pub answer_type: String,
    pub category: String,
    pub kind: ExampleKind,
}

/// Groups consecutive examples by document and then by context span, so
/// flattening the file yields the original order.
pub fn to_squad(examples: &[QAExample]) -> SquadFile {
    let mut data: Vec<SquadArticle> = Vec::new();
    let mut last_span: Option<Span> = None;
    for e in examples {
        if data.last().map(|a| a.title != e.doc_id).unwrap_or(true) {
            data.push(SquadArticle { title: e.doc_id.clone(), paragraphs: Vec::new() });
            last_span = None;
        }
        let article = data.last_mut().expect("article");
        if last_span != Some(e.context_span) {
            article.paragraphs.push(SquadParagraph { context: e.context.clone(), qas: Vec::new() });
            last_span = Some(e.context_span);
        }
        article.paragraphs.last_mut().expect("paragraph").qas.push(SquadQa {
            id: e.qid.clone(),
            question: e.question.clone(),
            answers: e.answers.clone(),
            is_impossible: e.is_impossible,
            plausible_answers: e.plausible_answers.clone(),
            granularity: e.granularity,
            context_span: [e.context_span.start, e.context_span.end],
            template_id: e.template_id.clone(),
            direction: e.direction,
            answer_type: e.answer_type.clone(),
            category: e.category.clone(),
            kind: e.kind,
        });
    }
    SquadFile { version: VERSION.to_string(), data }
}

pub fn from_squad(file: &SquadFile) -> Result<Vec<QAExample>> {
    let mut out = Vec::new();
    for article in &file.data {
        for p in &article.paragraphs {
            for qa in &p.qas {
                let e = QAExample {
                    qid: qa.id.clone(),
                    question: qa.question.clone(),
                    context: p.context.clone(),
                    granularity: qa.granularity,
                    context_span: Span::new(qa.context_span[0], qa.context_span[1])?,
                    answers: qa.answers.clone(),
                    is_impossible: qa.is_impossible,
                    plausible_answers: qa.plausible_answers.clone(),
                    doc_id: article.title.clone(),
                    template_id: qa.template_id.clone(),
                    direction: qa.direction,
                    answer_type: qa.answer_type.clone(),
                    category: qa.category.clone(),
                    kind: qa.kind,
                };
                e.validate()?;
                out.push(e);
            }
        }
    }
    Ok(out)
}

pub fn emit_squad(examples: &[QAExample], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &to_squad(examples))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_squad(path: &Path) -> Result<Vec<QAExample>> {
    let file: SquadFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    from_squad(&file)
}
