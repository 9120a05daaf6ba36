//! Question templates and question drafting from annotations.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnnotatedDocument, Dependency, Entity, RelationClass, TypeRegistry};
use crate::span::Span;

pub const PLACEHOLDER: &str = "{X}";
pub const MAX_TEMPLATES_PER_SLOT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Fill the left entity, ask for the right one.
    QueryRight,
    /// Fill the right entity, ask for the left one.
    QueryLeft,
    /// No fill; ask for every entity of a type.
    Ner,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::QueryRight => "query_right",
            Direction::QueryLeft => "query_left",
            Direction::Ner => "ner",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTemplate {
    pub template_id: String,
    /// A relation class name, or an entity type name for NER templates.
    pub relation_class: String,
    pub direction: Direction,
    pub pattern: String,
}

impl QuestionTemplate {
    pub fn validate(&self) -> Result<()> {
        let slots = self.pattern.matches(PLACEHOLDER).count();
        let expected = if self.direction == Direction::Ner { 0 } else { 1 };
        if slots != expected {
            return Err(Error::TemplateMisuse {
                template_id: self.template_id.clone(),
                message: format!("pattern has {slots} placeholder(s), expected {expected}"),
            });
        }
        Ok(())
    }

    /// Type of the entity whose text fills the placeholder.
    pub fn fill_type<'a>(&self, class: &'a RelationClass) -> Option<&'a str> {
        match self.direction {
            Direction::QueryRight => Some(&class.left_type),
            Direction::QueryLeft => Some(&class.right_type),
            Direction::Ner => None,
        }
    }
}

/// Replaces the placeholder of a relation template with `fill_text`.
pub fn instantiate(template: &QuestionTemplate, fill_text: &str) -> Result<String> {
    let misuse = |message: &str| Error::TemplateMisuse {
        template_id: template.template_id.clone(),
        message: message.to_string(),
    };
    if template.direction == Direction::Ner {
        return Err(misuse("NER templates take no fill"));
    }
    if fill_text.is_empty() {
        return Err(misuse("empty fill text"));
    }
    if template.pattern.matches(PLACEHOLDER).count() != 1 {
        return Err(misuse("pattern must contain exactly one placeholder"));
    }
    Ok(template.pattern.replacen(PLACEHOLDER, fill_text, 1))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TemplateRegistry {
    pub templates: Vec<QuestionTemplate>,
}

impl TemplateRegistry {
    pub fn new(templates: Vec<QuestionTemplate>) -> Result<Self> {
        let reg = TemplateRegistry { templates };
        reg.validate()?;
        Ok(reg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut per_slot: HashMap<(&str, Direction), usize> = HashMap::new();
        let mut ids = std::collections::HashSet::new();
        for t in &self.templates {
            t.validate()?;
            if !ids.insert(t.template_id.as_str()) {
                return Err(Error::Config(format!("duplicate template id `{}`", t.template_id)));
            }
            let n = per_slot.entry((t.relation_class.as_str(), t.direction)).or_default();
            *n += 1;
            if *n > MAX_TEMPLATES_PER_SLOT {
                return Err(Error::Config(format!(
                    "more than {MAX_TEMPLATES_PER_SLOT} templates for {} / {}",
                    t.relation_class,
                    t.direction.as_str()
                )));
            }
        }
        Ok(())
    }

    pub fn for_class<'a>(&'a self, class: &'a str) -> impl Iterator<Item = &'a QuestionTemplate> + 'a {
        self.templates.iter().filter(move |t| t.relation_class == class && t.direction != Direction::Ner)
    }

    pub fn ner_for_type<'a>(&'a self, entity_type: &str) -> Option<&'a QuestionTemplate> {
        self.templates.iter().find(|t| t.direction == Direction::Ner && t.relation_class == entity_type)
    }

    /// Keeps only the templates whose ids are listed.
    pub fn subset(&self, ids: &[String]) -> TemplateRegistry {
        TemplateRegistry {
            templates: self.templates.iter().filter(|t| ids.contains(&t.template_id)).cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DraftSource {
    Dependency { dependency: Dependency, relation_class: String },
    EntityType { entity_type: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionDraft {
    pub question: String,
    pub doc_id: String,
    pub template_id: String,
    pub direction: Direction,
    pub source: DraftSource,
    /// Document coordinates, before merging.
    pub answer_spans: Vec<Span>,
    pub answer_entity_type: String,
    pub filled_entity: Option<String>,
}

impl QuestionDraft {
    /// Relation class name, or the entity type for NER drafts.
    pub fn category(&self) -> &str {
        match &self.source {
            DraftSource::Dependency { relation_class, .. } => relation_class,
            DraftSource::EntityType { entity_type } => entity_type,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub doc_id: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(doc_id: &str, message: impl Into<String>) -> Self {
        let d = Diagnostic { doc_id: doc_id.to_string(), message: message.into() };
        log::warn!("{}: {}", d.doc_id, d.message);
        d
    }
}

pub fn relation_class_of(dep: &Dependency, doc: &AnnotatedDocument) -> Result<RelationClass> {
    let (from, to) = doc.endpoints(dep)?;
    Ok(RelationClass::new(&from.entity_type, &to.entity_type))
}

/// Folds drafts with an identical question into the first one, taking the
/// union of their answer spans.
fn fold_duplicates(drafts: Vec<QuestionDraft>) -> Vec<QuestionDraft> {
    let mut index: HashMap<(String, String), usize> = HashMap::new();
    let mut out: Vec<QuestionDraft> = Vec::new();
    for d in drafts {
        match index.get(&(d.question.clone(), d.doc_id.clone())) {
            Some(&i) => {
                let kept = &mut out[i];
                for s in d.answer_spans {
                    if !kept.answer_spans.contains(&s) {
                        kept.answer_spans.push(s);
                    }
                }
                kept.answer_spans.sort();
            }
            None => {
                index.insert((d.question.clone(), d.doc_id.clone()), out.len());
                out.push(d);
            }
        }
    }
    out
}

/// Drafts relation questions in both directions for every dependency whose
/// class has templates. Answers aggregate per filled entity occurrence and
/// relation class.
pub fn generate_relation_questions(
    doc: &AnnotatedDocument,
    templates: &TemplateRegistry,
) -> Result<(Vec<QuestionDraft>, Vec<Diagnostic>)> {
    let mut diagnostics = Vec::new();
    let mut resolved: Vec<(&Dependency, &Entity, &Entity, RelationClass)> = Vec::new();
    for dep in &doc.dependencies {
        let (from, to) = doc.endpoints(dep)?;
        resolved.push((dep, from, to, RelationClass::new(&from.entity_type, &to.entity_type)));
    }

    let mut drafts = Vec::new();
    let mut skipped: BTreeMap<String, usize> = BTreeMap::new();
    for (dep, from, to, class) in &resolved {
        let mut any = false;
        for t in templates.for_class(&class.name) {
            any = true;
            let query_right = t.direction == Direction::QueryRight;
            let filled: &Entity = if query_right { from } else { to };
            let mut answer_spans: Vec<Span> = resolved
                .iter()
                .filter(|r| r.3 == *class)
                .map(|r| if query_right { (r.1, r.2) } else { (r.2, r.1) })
                .filter(|(fill, _)| fill.id == filled.id)
                .map(|(_, ans)| ans.span)
                .collect();
            answer_spans.sort();
            answer_spans.dedup();
            let answer_entity_type = match t.direction {
                Direction::QueryRight => class.right_type.clone(),
                _ => class.left_type.clone(),
            };
            drafts.push(QuestionDraft {
                question: instantiate(t, &filled.text)?,
                doc_id: doc.doc_id.clone(),
                template_id: t.template_id.clone(),
                direction: t.direction,
                source: DraftSource::Dependency { dependency: (*dep).clone(), relation_class: class.name.clone() },
                answer_spans,
                answer_entity_type,
                filled_entity: Some(filled.id.clone()),
            });
        }
        if !any {
            *skipped.entry(class.name.clone()).or_default() += 1;
        }
    }
    for (class, n) in skipped {
        diagnostics.push(Diagnostic::new(
            &doc.doc_id,
            format!("no templates for relation class `{class}`; skipped {n} dependency(ies)"),
        ));
    }
    Ok((fold_duplicates(drafts), diagnostics))
}

/// One draft per NER-queryable type present in the document.
pub fn generate_ner_questions(
    doc: &AnnotatedDocument,
    types: &TypeRegistry,
    templates: &TemplateRegistry,
) -> Vec<QuestionDraft> {
    let mut drafts = Vec::new();
    for ty in &types.ner_queryable_types {
        let mut spans: Vec<Span> = doc.entities.iter().filter(|e| &e.entity_type == ty).map(|e| e.span).collect();
        if spans.is_empty() {
            continue;
        }
        let Some(t) = templates.ner_for_type(ty) else {
            continue;
        };
        spans.sort();
        spans.dedup();
        drafts.push(QuestionDraft {
            question: t.pattern.clone(),
            doc_id: doc.doc_id.clone(),
            template_id: t.template_id.clone(),
            direction: Direction::Ner,
            source: DraftSource::EntityType { entity_type: ty.clone() },
            answer_spans: spans,
            answer_entity_type: ty.clone(),
            filled_entity: None,
        });
    }
    fold_duplicates(drafts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AnnotationRecord, EntityRecord};

    fn tpl(id: &str, class: &str, direction: Direction, pattern: &str) -> QuestionTemplate {
        QuestionTemplate { template_id: id.into(), relation_class: class.into(), direction, pattern: pattern.into() }
    }

    fn doc(text: &str, ents: &[(&str, &str, &str)], deps: &[(&str, &str)]) -> AnnotatedDocument {
        // entities located by first occurrence after the previous one
        let mut cursor = 0;
        let mut entities = Vec::new();
        for (id, t, ty) in ents {
            let byte = text[cursor..].find(t).expect("entity text") + cursor;
            let start = text[..byte].chars().count();
            cursor = byte + t.len();
            entities.push(EntityRecord { id: id.to_string(), text: t.to_string(), entity_type: ty.to_string(), start });
        }
        AnnotationRecord {
            doc_id: "d".into(),
            doc_kind: "k".into(),
            text: text.into(),
            entities,
            dependencies: deps.iter().map(|(f, t)| Dependency { from: f.to_string(), to: t.to_string() }).collect(),
        }
        .into_document()
        .unwrap()
    }

    fn family_registry(per_direction: usize) -> TemplateRegistry {
        let mut ts = vec![
            tpl(
                "fd1",
                "family_member-disease",
                Direction::QueryRight,
                "What disease has the patient's {X} suffered from?",
            ),
            tpl(
                "fd2",
                "family_member-disease",
                Direction::QueryLeft,
                "Which family member of the patient has suffered from {X}?",
            ),
        ];
        if per_direction > 1 {
            ts.push(tpl("fd3", "family_member-disease", Direction::QueryRight, "Which illness did the {X} have?"));
            ts.push(tpl("fd4", "family_member-disease", Direction::QueryLeft, "Who in the family had {X}?"));
        }
        TemplateRegistry::new(ts).unwrap()
    }

    #[test]
    fn class_name_joins_types() {
        let d = doc(
            "mother has diabetes",
            &[("a", "mother", "family_member"), ("b", "diabetes", "disease")],
            &[("a", "b")],
        );
        assert_eq!(relation_class_of(&d.dependencies[0], &d).unwrap().name, "family_member-disease");
        let d2 = doc("liver and lobe", &[("a", "liver", "body_part"), ("b", "lobe", "body_part")], &[("a", "b")]);
        assert_eq!(relation_class_of(&d2.dependencies[0], &d2).unwrap().name, "body_part-body_part");
        let dangling = Dependency { from: "a".into(), to: "zz".into() };
        assert!(matches!(relation_class_of(&dangling, &d), Err(Error::DanglingReference { .. })));
    }

    #[test]
    fn instantiates_both_directions() {
        let reg = family_registry(1);
        assert_eq!(
            instantiate(&reg.templates[0], "mother").unwrap(),
            "What disease has the patient's mother suffered from?"
        );
        assert_eq!(
            instantiate(&reg.templates[1], "diabetes").unwrap(),
            "Which family member of the patient has suffered from diabetes?"
        );
        assert!(matches!(instantiate(&reg.templates[0], ""), Err(Error::TemplateMisuse { .. })));
        let ner = tpl("n", "disease", Direction::Ner, "What disease does the patient have?");
        assert!(instantiate(&ner, "x").is_err());
    }

    #[test]
    fn registry_limits() {
        let mut ts: Vec<_> = (0..4).map(|i| tpl(&format!("t{i}"), "a-b", Direction::QueryRight, "{X}?")).collect();
        assert!(TemplateRegistry::new(ts.clone()).is_err());
        ts.pop();
        assert!(TemplateRegistry::new(ts).is_ok());
        assert!(tpl("x", "a-b", Direction::QueryRight, "no slot").validate().is_err());
        assert!(tpl("x", "a", Direction::Ner, "{X}").validate().is_err());
    }

    #[test]
    fn one_dependency_two_templates_per_direction() {
        let d = doc(
            "mother has diabetes",
            &[("a", "mother", "family_member"), ("b", "diabetes", "disease")],
            &[("a", "b")],
        );
        let (drafts, diags) = generate_relation_questions(&d, &family_registry(2)).unwrap();
        assert_eq!(drafts.len(), 4);
        assert!(diags.is_empty());
        assert_eq!(drafts.iter().filter(|d| d.direction == Direction::QueryLeft).count(), 2);
    }

    #[test]
    fn many_to_one_collects_all_answers() {
        let d = doc(
            "abdominal cavity: effusion, pneumatosis",
            &[
                ("bp", "abdominal cavity", "body_part"),
                ("e1", "effusion", "abnormality"),
                ("e2", "pneumatosis", "abnormality"),
            ],
            &[("bp", "e1"), ("bp", "e2")],
        );
        let reg = TemplateRegistry::new(vec![tpl(
            "ba",
            "body_part-abnormality",
            Direction::QueryRight,
            "What abnormalities are there in the {X} of the patient?",
        )])
        .unwrap();
        let (drafts, _) = generate_relation_questions(&d, &reg).unwrap();
        assert_eq!(drafts.len(), 1);
        assert_eq!(drafts[0].answer_spans.len(), 2);
        assert_eq!(drafts[0].answer_entity_type, "abnormality");
        for s in &drafts[0].answer_spans {
            let text = s.slice(&d.text).unwrap();
            assert!(d.entities.iter().any(|e| e.text == text && e.entity_type == "abnormality"));
        }
    }

    #[test]
    fn no_dependencies_no_drafts() {
        let d = doc("nothing", &[], &[]);
        assert!(generate_relation_questions(&d, &family_registry(1)).unwrap().0.is_empty());
    }

    #[test]
    fn unknown_class_skipped_with_diagnostic() {
        let d = doc("liver lobe", &[("a", "liver", "body_part"), ("b", "lobe", "body_part")], &[("a", "b")]);
        let (drafts, diags) = generate_relation_questions(&d, &family_registry(1)).unwrap();
        assert!(drafts.is_empty());
        assert_eq!(diags.len(), 1);
    }

    fn ner_setup() -> (TypeRegistry, TemplateRegistry) {
        let types = TypeRegistry {
            entity_types: ["disease", "abnormality", "body_part", "family_member"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            ner_queryable_types: ["disease", "abnormality", "body_part"].iter().map(|s| s.to_string()).collect(),
            relation_classes: Default::default(),
        };
        let templates = TemplateRegistry::new(vec![
            tpl("nd", "disease", Direction::Ner, "What disease does the patient have?"),
            tpl("na", "abnormality", Direction::Ner, "What abnormality does the patient have?"),
            tpl("nb", "body_part", Direction::Ner, "Which body parts are mentioned?"),
        ])
        .unwrap();
        (types, templates)
    }

    #[test]
    fn ner_draft_collects_type() {
        let (types, templates) = ner_setup();
        let d = doc(
            "effusion; nodule; calcification",
            &[("a", "effusion", "abnormality"), ("b", "nodule", "abnormality"), ("c", "calcification", "abnormality")],
            &[],
        );
        let drafts = generate_ner_questions(&d, &types, &templates);
        assert_eq!(drafts.len(), 1);
        assert_eq!(drafts[0].answer_spans.len(), 3);
        assert!(drafts.iter().all(|d| d.answer_entity_type != "disease"));
    }

    #[test]
    fn three_queryable_types_three_drafts() {
        let (types, templates) = ner_setup();
        let d = doc(
            "mother: diabetes; liver: nodule",
            &[
                ("m", "mother", "family_member"),
                ("a", "diabetes", "disease"),
                ("b", "liver", "body_part"),
                ("c", "nodule", "abnormality"),
            ],
            &[],
        );
        assert_eq!(generate_ner_questions(&d, &types, &templates).len(), 3);
    }

    #[test]
    fn drafting_is_deterministic_and_bidirectional() {
        let d = doc(
            "mother has diabetes; father has diabetes",
            &[
                ("m", "mother", "family_member"),
                ("d1", "diabetes", "disease"),
                ("f", "father", "family_member"),
                ("d2", "diabetes", "disease"),
            ],
            &[("m", "d1"), ("f", "d2")],
        );
        let reg = family_registry(1);
        let a = generate_relation_questions(&d, &reg).unwrap().0;
        let b = generate_relation_questions(&d, &reg).unwrap().0;
        assert_eq!(a, b);
        // two diabetes mentions render the same question; their answers fold together
        let left: Vec<_> = a.iter().filter(|d| d.direction == Direction::QueryLeft).collect();
        assert_eq!(left.len(), 1);
        assert_eq!(left[0].answer_spans.len(), 2);
        assert_eq!(a.iter().filter(|d| d.direction == Direction::QueryRight).count(), 2);
    }
}
