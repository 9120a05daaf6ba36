//! Annotated documents, the type registry and the JSON Lines annotation format.

use std::collections::{BTreeSet, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::span::{char_len, Span};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub text: String,
    pub entity_type: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dependency {
    pub from: String,
    pub to: String,
}

/// The `left-right` class of a dependency, named after its endpoint types.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RelationClassRepr", into = "RelationClassRepr")]
pub struct RelationClass {
    pub left_type: String,
    pub right_type: String,
    pub name: String,
}

impl RelationClass {
    pub fn new(left_type: &str, right_type: &str) -> Self {
        RelationClass {
            left_type: left_type.to_string(),
            right_type: right_type.to_string(),
            name: format!("{left_type}-{right_type}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RelationClassRepr {
    left_type: String,
    right_type: String,
}

impl TryFrom<RelationClassRepr> for RelationClass {
    type Error = String;

    fn try_from(r: RelationClassRepr) -> std::result::Result<Self, String> {
        if r.left_type.is_empty() || r.right_type.is_empty() {
            return Err("relation class endpoint types must be non-empty".into());
        }
        Ok(RelationClass::new(&r.left_type, &r.right_type))
    }
}

impl From<RelationClass> for RelationClassRepr {
    fn from(c: RelationClass) -> Self {
        RelationClassRepr { left_type: c.left_type, right_type: c.right_type }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeRegistry {
    pub entity_types: BTreeSet<String>,
    pub ner_queryable_types: BTreeSet<String>,
    #[serde(default)]
    pub relation_classes: BTreeSet<RelationClass>,
}

impl TypeRegistry {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.ner_queryable_types.iter().find(|t| !self.entity_types.contains(*t)) {
            return Err(Error::Config(format!("NER-queryable type `{t}` is not a registered entity type")));
        }
        for c in &self.relation_classes {
            for t in [&c.left_type, &c.right_type] {
                if !self.entity_types.contains(t) {
                    return Err(Error::Config(format!("relation class `{}` uses unregistered type `{t}`", c.name)));
                }
            }
        }
        Ok(())
    }

    pub fn has_class(&self, name: &str) -> bool {
        self.relation_classes.iter().any(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedDocument {
    pub doc_id: String,
    pub doc_kind: String,
    pub text: String,
    pub entities: Vec<Entity>,
    pub dependencies: Vec<Dependency>,
}

impl AnnotatedDocument {
    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    /// Resolves both endpoints of a dependency.
    pub fn endpoints(&self, dep: &Dependency) -> Result<(&Entity, &Entity)> {
        let find = |id: &str| {
            self.entity(id)
                .ok_or_else(|| Error::DanglingReference { doc_id: self.doc_id.clone(), entity_id: id.to_string() })
        };
        Ok((find(&dep.from)?, find(&dep.to)?))
    }

    /// Checks every document invariant. Entity types are only checked when a
    /// registry is supplied.
    pub fn validate(&self, registry: Option<&TypeRegistry>) -> Result<()> {
        let invalid = |message: String| Error::InvalidDocument { doc_id: self.doc_id.clone(), message };
        let len = char_len(&self.text);
        let mut ids = HashSet::new();
        for e in &self.entities {
            if !ids.insert(e.id.as_str()) {
                return Err(invalid(format!("duplicate entity id `{}`", e.id)));
            }
            e.span.check(len)?;
            if e.span.slice(&self.text)? != e.text {
                return Err(invalid(format!("entity `{}` text does not match document at {}", e.id, e.span)));
            }
            if let Some(reg) = registry {
                if !reg.entity_types.contains(&e.entity_type) {
                    return Err(invalid(format!("entity `{}` has unregistered type `{}`", e.id, e.entity_type)));
                }
            }
        }
        for d in &self.dependencies {
            self.endpoints(d)?;
            if d.from == d.to {
                return Err(invalid(format!("self-dependency on `{}`", d.from)));
            }
        }
        Ok(())
    }

    /// Rejects entities that cross a sentence boundary.
    pub fn check_sentence_boundaries(&self, delimiters: &BTreeSet<char>) -> Result<()> {
        let sentences = crate::span::split_sentences(&self.text, delimiters);
        for e in &self.entities {
            for s in &sentences {
                crate::span::project_span(e.span, &s.span).map_err(|_| Error::InvalidDocument {
                    doc_id: self.doc_id.clone(),
                    message: format!("entity `{}` at {} crosses sentence {} at {}", e.id, e.span, s.index, s.span),
                })?;
            }
        }
        Ok(())
    }
}

/// One line of the annotation input file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub doc_id: String,
    #[serde(default)]
    pub doc_kind: String,
    pub text: String,
    #[serde(default)]
    pub entities: Vec<EntityRecord>,
    #[serde(default)]
    pub dependencies: Vec<Dependency>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: String,
    pub text: String,
    #[serde(rename = "type")]
    pub entity_type: String,
    pub start: usize,
}

impl AnnotationRecord {
    pub fn into_document(self) -> Result<AnnotatedDocument> {
        let len = char_len(&self.text);
        let entities = self
            .entities
            .into_iter()
            .map(|e| {
                let span = Span::within(e.start, e.start + char_len(&e.text), len)?;
                Ok(Entity { id: e.id, text: e.text, entity_type: e.entity_type, span })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AnnotatedDocument {
            doc_id: self.doc_id,
            doc_kind: self.doc_kind,
            text: self.text,
            entities,
            dependencies: self.dependencies,
        })
    }
}

impl From<&AnnotatedDocument> for AnnotationRecord {
    fn from(doc: &AnnotatedDocument) -> Self {
        AnnotationRecord {
            doc_id: doc.doc_id.clone(),
            doc_kind: doc.doc_kind.clone(),
            text: doc.text.clone(),
            entities: doc
                .entities
                .iter()
                .map(|e| EntityRecord {
                    id: e.id.clone(),
                    text: e.text.clone(),
                    entity_type: e.entity_type.clone(),
                    start: e.span.start,
                })
                .collect(),
            dependencies: doc.dependencies.clone(),
        }
    }
}

fn field_of(err: &Error) -> String {
    match err {
        Error::InvalidSpan { .. } => "entities".into(),
        Error::DanglingReference { .. } => "dependencies".into(),
        Error::InvalidDocument { message, .. } if message.contains("dependency") => "dependencies".into(),
        Error::InvalidDocument { .. } => "entities".into(),
        _ => "record".into(),
    }
}

/// Reads one annotated document per line, validating each against the
/// registry. Blank lines are skipped. Errors carry the 1-based line number.
pub fn read_annotations<R: BufRead>(reader: R, registry: Option<&TypeRegistry>) -> Result<Vec<AnnotatedDocument>> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord = serde_json::from_str(&line).map_err(|e| {
            let msg = e.to_string();
            let field = msg.split('`').nth(1).map(str::to_string).unwrap_or_else(|| "record".to_string());
            Error::Parse { line: lineno, field, message: msg }
        })?;
        let doc = record.into_document().and_then(|d| d.validate(registry).map(|_| d)).map_err(|e| Error::Parse {
            line: lineno,
            field: field_of(&e),
            message: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_annotations<W: std::io::Write>(mut w: W, docs: &[AnnotatedDocument]) -> Result<()> {
    for d in docs {
        serde_json::to_writer(&mut w, &AnnotationRecord::from(d))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
