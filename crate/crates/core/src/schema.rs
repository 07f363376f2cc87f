//! Domain inventories: intents, entity types, gazetteers and carrier templates.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Tag assigned by the slot tagger to tokens outside any entity.
pub const NULL_TAG: &str = "O";

const DEFAULT_SCHEMAS: &str = include_str!("../data/default_schemas.toml");

/// One domain's label inventory plus the material used to synthesize utterances for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSchema {
    pub name: String,
    pub intents: Vec<String>,
    pub entity_types: Vec<String>,
    /// Entity type -> example surface phrases.
    pub gazetteer: BTreeMap<String, Vec<String>>,
    /// Intent -> carrier templates. `{EntityType}` marks a slot filled from the gazetteer.
    pub templates: BTreeMap<String, Vec<String>>,
}

/// A piece of a parsed carrier template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TemplatePart {
    Word(String),
    Slot(String),
}

pub fn parse_template(template: &str) -> Vec<TemplatePart> {
    template
        .split_whitespace()
        .map(|w| match w.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
            Some(slot) => TemplatePart::Slot(slot.to_string()),
            None => TemplatePart::Word(w.to_lowercase()),
        })
        .collect()
}

impl DomainSchema {
    pub fn has_intent(&self, intent: &str) -> bool {
        self.intents.iter().any(|i| i == intent)
    }

    pub fn has_entity_type(&self, entity_type: &str) -> bool {
        self.entity_types.iter().any(|e| e == entity_type)
    }

    fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Schema(format!("domain {}: {msg}", self.name)));
        if self.name.is_empty() {
            return Err(Error::Schema("domain with empty name".into()));
        }
        if self.intents.is_empty() {
            return err("no intents".into());
        }
        if self.entity_types.is_empty() {
            return err("no entity types".into());
        }
        if has_duplicates(&self.intents) || has_duplicates(&self.entity_types) {
            return err("duplicate labels".into());
        }
        if self.entity_types.iter().any(|e| e == NULL_TAG) {
            return err(format!("entity type {NULL_TAG:?} is reserved"));
        }
        if !self.gazetteer.values().any(|phrases| !phrases.is_empty()) {
            return err("empty gazetteer".into());
        }
        for (etype, phrases) in &self.gazetteer {
            if !self.has_entity_type(etype) {
                return err(format!("gazetteer entry for unknown entity type {etype}"));
            }
            if phrases.iter().any(|p| p.split_whitespace().next().is_none()) {
                return err(format!("blank gazetteer phrase for {etype}"));
            }
        }
        for intent in &self.intents {
            let Some(templates) = self.templates.get(intent).filter(|t| !t.is_empty()) else {
                return err(format!("intent {intent} has no templates"));
            };
            for template in templates {
                self.validate_template(template)?;
            }
        }
        if let Some(stray) = self.templates.keys().find(|k| !self.has_intent(k)) {
            return err(format!("templates for unknown intent {stray}"));
        }
        Ok(())
    }

    fn validate_template(&self, template: &str) -> Result<()> {
        let parts = parse_template(template);
        if parts.is_empty() {
            return Err(Error::Schema(format!("{}: blank template", self.name)));
        }
        let mut previous_slot: Option<&str> = None;
        for part in &parts {
            match part {
                TemplatePart::Slot(etype) => {
                    let has_phrases = self.gazetteer.get(etype).is_some_and(|p| !p.is_empty());
                    if !self.has_entity_type(etype) || !has_phrases {
                        return Err(Error::Schema(format!(
                            "{}: template {template:?} uses {etype} without gazetteer phrases",
                            self.name
                        )));
                    }
                    // Adjacent chunks of one type are indistinguishable to a per-token tagger.
                    if previous_slot == Some(etype.as_str()) {
                        return Err(Error::Schema(format!(
                            "{}: template {template:?} has adjacent {etype} slots",
                            self.name
                        )));
                    }
                    previous_slot = Some(etype);
                }
                TemplatePart::Word(_) => previous_slot = None,
            }
        }
        Ok(())
    }
}

fn has_duplicates(labels: &[String]) -> bool {
    let set: BTreeSet<&String> = labels.iter().collect();
    set.len() != labels.len()
}

#[derive(Debug, Serialize, Deserialize)]
struct SchemaFile {
    schema_version: u32,
    #[serde(rename = "domain")]
    domains: Vec<DomainSchema>,
}

/// A validated set of domains, ordered by domain name.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaSet {
    domains: Vec<DomainSchema>,
}

impl SchemaSet {
    pub fn new(mut domains: Vec<DomainSchema>) -> Result<Self> {
        if domains.is_empty() {
            return Err(Error::Config("empty schema set".into()));
        }
        domains.sort_by(|a, b| a.name.cmp(&b.name));
        for pair in domains.windows(2) {
            if pair[0].name == pair[1].name {
                return Err(Error::Schema(format!("duplicate domain {}", pair[0].name)));
            }
        }
        let mut intents = BTreeMap::new();
        let mut entity_types = BTreeMap::new();
        for domain in &domains {
            domain.validate()?;
            for intent in &domain.intents {
                if let Some(other) = intents.insert(intent.as_str(), domain.name.as_str()) {
                    return Err(Error::Schema(format!(
                        "intent {intent} appears in both {other} and {}",
                        domain.name
                    )));
                }
            }
            for etype in &domain.entity_types {
                if let Some(other) = entity_types.insert(etype.as_str(), domain.name.as_str()) {
                    return Err(Error::Schema(format!(
                        "entity type {etype} appears in both {other} and {}",
                        domain.name
                    )));
                }
            }
        }
        Ok(Self { domains })
    }

    /// The three-domain benchmark bundled with the crate.
    pub fn default_benchmark() -> Self {
        Self::from_toml_str(DEFAULT_SCHEMAS).expect("bundled schemas are valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SchemaFile = toml::from_str(text)?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::FormatVersion {
                found: file.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        Self::new(file.domains)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let file = SchemaFile {
            schema_version: SCHEMA_VERSION,
            domains: self.domains.clone(),
        };
        Ok(toml::to_string(&file)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn domains(&self) -> &[DomainSchema] {
        &self.domains
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.domains.iter().map(|d| d.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&DomainSchema> {
        self.domains.iter().find(|d| d.name == name)
    }

    pub fn domain_of_intent(&self, intent: &str) -> Option<&DomainSchema> {
        self.domains.iter().find(|d| d.has_intent(intent))
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }
}
