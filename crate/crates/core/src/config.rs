//! Pipeline configuration and the bundled demo registry.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RelationClass, TypeRegistry};
use crate::reader::{Polarity, SpanOrder, VerifierConfig};
use crate::templates::{Direction, QuestionTemplate, TemplateRegistry};

fn chars(s: &str) -> BTreeSet<char> {
    s.chars().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextConfig {
    pub sentence_delimiters: BTreeSet<char>,
    pub bridge_chars: BTreeSet<char>,
    pub clause_delimiters: BTreeSet<char>,
}

impl Default for TextConfig {
    fn default() -> Self {
        TextConfig {
            sentence_delimiters: chars("。；！？\n"),
            bridge_chars: chars("，、；,; "),
            clause_delimiters: chars("，、"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Emit answer-free sentences of split paragraphs as impossible examples.
    pub include_natural_empties: bool,
    /// Fraction of answer-free sentences kept when the flag above is set.
    pub natural_empty_fraction: f64,
    /// Build impossible questions with plausible answers.
    pub construct_impossible: bool,
    /// train / dev / test
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            include_natural_empties: false,
            natural_empty_fraction: 1.0,
            construct_impossible: true,
            ratios: [0.8, 0.1, 0.1],
            seed: 13,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    /// Candidate fill words per entity type, used for types that are not
    /// recovered by the NER stage. Only words present in the document are asked.
    pub fill_lexicon: BTreeMap<String, Vec<String>>,
    /// doc_kind -> template ids. An empty map enables every template for every kind.
    pub doc_kind_templates: BTreeMap<String, Vec<String>>,
    pub batch_size: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig { fill_lexicon: BTreeMap::new(), doc_kind_templates: BTreeMap::new(), batch_size: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Oracle,
    NoisyOracle {
        boundary_jitter: usize,
        flip_prob: f64,
        temperature: f64,
        seed: u64,
    },
    Remote {
        endpoint: Option<String>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_attempts")]
        attempts: u32,
    },
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_attempts() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub types: TypeRegistry,
    pub templates: TemplateRegistry,
    pub text: TextConfig,
    /// Joins per-sentence answers into the final answer.
    pub separator: String,
    /// Sentence splitting of multi-span answers, in generation and extraction.
    pub enable_splitting: bool,
    pub dataset: DatasetConfig,
    pub verifier: VerifierConfig,
    pub extraction: ExtractionConfig,
    pub negation_lexicon: Vec<String>,
    pub backend: BackendConfig,
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            types: TypeRegistry::default(),
            templates: TemplateRegistry::default(),
            text: TextConfig::default(),
            separator: "，".to_string(),
            enable_splitting: true,
            dataset: DatasetConfig::default(),
            verifier: VerifierConfig::default(),
            extraction: ExtractionConfig::default(),
            negation_lexicon: ["无", "否认", "未见", "未", "没有", "no", "denies", "denied", "without", "negative"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            backend: BackendConfig::Oracle,
            workers: 1,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.types.validate()?;
        self.templates.validate()?;
        let sum: f64 = self.dataset.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.dataset.ratios.iter().any(|r| *r < 0.0) {
            return Err(Error::Config(format!("split ratios must be nonnegative and sum to 1, got {sum}")));
        }
        if !(0.0..=1.0).contains(&self.dataset.natural_empty_fraction) {
            return Err(Error::Config("natural_empty_fraction must lie in [0, 1]".into()));
        }
        self.verifier.validate()?;
        if !self.verifier.delta.is_finite() {
            return Err(Error::Config("delta must be finite".into()));
        }
        if self.text.sentence_delimiters.is_empty() {
            return Err(Error::Config("at least one sentence delimiter is required".into()));
        }
        if self.separator.is_empty() {
            return Err(Error::Config("separator must be non-empty".into()));
        }
        if self.extraction.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        match &self.backend {
            BackendConfig::Remote { endpoint: None, .. } => {
                return Err(Error::Config("remote backend selected but no endpoint configured".into()));
            }
            BackendConfig::NoisyOracle { flip_prob, temperature, .. }
                if !(0.0..=1.0).contains(flip_prob) || temperature.is_nan() || *temperature <= 0.0 =>
            {
                return Err(Error::Config("noisy oracle needs flip_prob in [0,1] and temperature > 0".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Templates applicable to a document kind.
    pub fn templates_for_kind(&self, doc_kind: &str) -> TemplateRegistry {
        if self.extraction.doc_kind_templates.is_empty() {
            return self.templates.clone();
        }
        match self.extraction.doc_kind_templates.get(doc_kind) {
            Some(ids) => self.templates.subset(ids),
            None => TemplateRegistry::default(),
        }
    }

    /// English demo registry over four clinical entity types.
    pub fn demo() -> Self {
        let types = TypeRegistry {
            entity_types: ["family_member", "disease", "body_part", "abnormality"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            ner_queryable_types: ["disease", "body_part", "abnormality"].iter().map(|s| s.to_string()).collect(),
            relation_classes: [
                RelationClass::new("family_member", "disease"),
                RelationClass::new("body_part", "abnormality"),
            ]
            .into_iter()
            .collect(),
        };
        let t = |id: &str, class: &str, direction, pattern: &str| QuestionTemplate {
            template_id: id.into(),
            relation_class: class.into(),
            direction,
            pattern: pattern.into(),
        };
        let templates = TemplateRegistry {
            templates: vec![
                t("ner-disease", "disease", Direction::Ner, "What disease does the patient have?"),
                t("ner-abnormality", "abnormality", Direction::Ner, "What abnormality does the patient have?"),
                t("ner-body-part", "body_part", Direction::Ner, "Which body parts are involved?"),
                t(
                    "fd-right-1",
                    "family_member-disease",
                    Direction::QueryRight,
                    "What disease has the patient's {X} suffered from?",
                ),
                t(
                    "fd-left-1",
                    "family_member-disease",
                    Direction::QueryLeft,
                    "Which family member of the patient has suffered from {X}?",
                ),
                t(
                    "ba-right-1",
                    "body_part-abnormality",
                    Direction::QueryRight,
                    "What abnormalities are there in the {X} of the patient?",
                ),
                t("ba-left-1", "body_part-abnormality", Direction::QueryLeft, "Where is the {X} found?"),
            ],
        };
        let mut doc_kind_templates = BTreeMap::new();
        doc_kind_templates.insert(
            "family_history".to_string(),
            ["ner-disease", "fd-right-1", "fd-left-1"].iter().map(|s| s.to_string()).collect(),
        );
        doc_kind_templates.insert(
            "ct_report".to_string(),
            ["ner-abnormality", "ner-body-part", "ba-right-1", "ba-left-1"].iter().map(|s| s.to_string()).collect(),
        );
        let mut fill_lexicon = BTreeMap::new();
        fill_lexicon.insert(
            "family_member".to_string(),
            ["母亲", "父亲", "哥哥", "姐姐", "祖母", "外公", "mother", "father", "brother", "sister"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        );
        PipelineConfig {
            types,
            templates,
            extraction: ExtractionConfig { fill_lexicon, doc_kind_templates, batch_size: 64 },
            ..PipelineConfig::default()
        }
    }
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            beta1: 0.5,
            beta2: 0.5,
            delta: 0.0,
            polarity: Polarity::NullWhenAbove,
            max_answer_chars: 64,
            span_order: SpanOrder::Inclusive,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_config_is_valid() {
        PipelineConfig::demo().validate().unwrap();
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = PipelineConfig {
            backend: BackendConfig::NoisyOracle { boundary_jitter: 2, flip_prob: 0.1, temperature: 0.5, seed: 7 },
            ..PipelineConfig::demo()
        };
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_json_takes_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"separator": ","}"#).unwrap();
        assert_eq!(cfg.separator, ",");
        assert!(cfg.text.sentence_delimiters.contains(&'。'));
        assert_eq!(cfg.verifier.max_answer_chars, 64);
    }

    #[test]
    fn rejects_bad_ratios_and_missing_endpoint() {
        let mut cfg = PipelineConfig::demo();
        cfg.dataset.ratios = [0.5, 0.2, 0.2];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = PipelineConfig {
            backend: BackendConfig::Remote { endpoint: None, timeout_ms: 10, attempts: 1 },
            ..PipelineConfig::demo()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("endpoint")));
    }

    #[test]
    fn unknown_kind_has_no_templates() {
        let cfg = PipelineConfig::demo();
        assert!(cfg.templates_for_kind("discharge_note").templates.is_empty());
        assert_eq!(cfg.templates_for_kind("ct_report").templates.len(), 4);
    }
}
