//! Context profile: built-in readability contexts, seed corpora, gazetteers,
//! and the user-extension mechanism.
//!
//! The built-in profile covers 23 string contexts in six categories
//! (Cyberspace, Geo-Abstract, Temporal, Number, Personal Identifier,
//! Finance) and 6 number contexts (Base Formats, Other Formats). A registry
//! document is a single JSON file with top-level keys `contexts`,
//! `categories`, and `gazetteers`; user documents are merged on top of the
//! built-ins and may never redefine an existing name.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Embedded built-in registry document.
const DEFAULT_REGISTRY_JSON: &str = include_str!("../data/default_registry.json");

/// Default underscore group width for the FIXEDLENGTH context.
pub const DEFAULT_FIXED_GROUP_WIDTH: usize = 4;

/// Type group of a context: string-valued or number-valued parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TypeGroup {
    String,
    Number,
}

/// Tool combination used to judge inputs against a context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JudgeMethod {
    /// LLM or regex; either positive verdict wins (Cyberspace).
    LlmRegex,
    /// LLM or named-entity recognition (all other string categories).
    LlmNer,
    /// Regex alone (number base formats).
    Regex,
    /// Bearable-length rule plus format check (number other formats).
    RuleRegex,
}

/// One row of the context profile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadabilityContext {
    pub name: String,
    pub group: TypeGroup,
    pub category: String,
    pub judge_method: JudgeMethod,
    /// Example values shown in prompt option lists.
    pub examples: Vec<String>,
    /// Known-good values; search seeds and `min_distance` anchors.
    #[serde(default)]
    pub seeds: Vec<String>,
    /// Anchored pattern text, when the judge method uses one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regex: Option<String>,
}

impl ReadabilityContext {
    /// Generic catch-all contexts capture values that belong to the
    /// category but match no specific sibling context. They never carry
    /// a regex and accept sibling labels during NER judging.
    pub fn is_generic(&self) -> bool {
        matches!(self.name.as_str(), "LOCATION" | "TIME")
    }

    /// Seed list for a string context; number contexts have no seeds.
    pub fn string_seeds(&self) -> Result<&[String]> {
        if self.group != TypeGroup::String {
            return Err(Error::precondition(
                "get_seeds",
                format!("{} is a NUMBER context", self.name),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Registry(format!(
                "context {} has an empty seed list",
                self.name
            )));
        }
        Ok(&self.seeds)
    }
}

/// A prepared question/answer pair used as a few-shot example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryShot {
    pub question: String,
    pub answer: String,
}

/// A context category with its representative shot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub shot: CategoryShot,
}

fn default_fixed_group_width() -> usize {
    DEFAULT_FIXED_GROUP_WIDTH
}

/// On-disk registry document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryDocument {
    #[serde(default)]
    pub contexts: Vec<ReadabilityContext>,
    #[serde(default)]
    pub categories: Vec<Category>,
    #[serde(default)]
    pub gazetteers: BTreeMap<String, Vec<String>>,
    /// Underscore group width required by FIXEDLENGTH.
    #[serde(default = "default_fixed_group_width")]
    pub fixed_group_width: usize,
}

impl RegistryDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("registry document serializes")
    }

    /// Built-in profile as shipped.
    pub fn builtin() -> Self {
        serde_json::from_str(DEFAULT_REGISTRY_JSON).expect("embedded registry parses")
    }
}

/// Immutable, validated context registry. Safe for concurrent readers.
#[derive(Debug)]
pub struct ContextRegistry {
    contexts: Vec<ReadabilityContext>,
    categories: Vec<Category>,
    gazetteers: BTreeMap<String, BTreeSet<String>>,
    fixed_group_width: usize,
    compiled: HashMap<String, Regex>,
    index: HashMap<String, usize>,
}

impl ContextRegistry {
    /// Built-in contexts only.
    pub fn load_default() -> Result<Self> {
        Self::from_document(RegistryDocument::builtin())
    }

    /// Built-ins plus a user extension document. A user entry that
    /// duplicates any existing name is an error, never an override.
    pub fn load_with_extensions(user: &RegistryDocument) -> Result<Self> {
        let merged = merge_documents(RegistryDocument::builtin(), user)?;
        Self::from_document(merged)
    }

    /// Load a user extension document from a file and merge over built-ins.
    pub fn load_from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc = RegistryDocument::from_json(&text)?;
        Self::load_with_extensions(&doc)
    }

    /// Validate and index a complete document (no implicit built-ins).
    pub fn from_document(doc: RegistryDocument) -> Result<Self> {
        let name_re = Regex::new(r"^[A-Z][A-Z0-9_]*$").expect("static pattern");
        let mut index = HashMap::new();
        let mut compiled = HashMap::new();
        for (i, ctx) in doc.contexts.iter().enumerate() {
            if !name_re.is_match(&ctx.name) {
                return Err(Error::Registry(format!(
                    "context name {:?} must match [A-Z][A-Z0-9_]*",
                    ctx.name
                )));
            }
            if index.insert(ctx.name.clone(), i).is_some() {
                return Err(Error::DuplicateContext(ctx.name.clone()));
            }
            if ctx.examples.is_empty() {
                return Err(Error::Registry(format!(
                    "context {} has no examples",
                    ctx.name
                )));
            }
            match &ctx.regex {
                Some(pattern) => {
                    let re = Regex::new(pattern).map_err(|e| Error::InvalidRegex {
                        name: ctx.name.clone(),
                        source: Box::new(e),
                    })?;
                    compiled.insert(ctx.name.clone(), re);
                }
                None => {
                    let needs_regex = matches!(
                        ctx.judge_method,
                        JudgeMethod::Regex | JudgeMethod::RuleRegex | JudgeMethod::LlmRegex
                    ) && !matches!(ctx.name.as_str(), "LONGNUMBER" | "FIXEDLENGTH");
                    if needs_regex {
                        return Err(Error::Registry(format!(
                            "context {} ({:?}) requires a regex",
                            ctx.name, ctx.judge_method
                        )));
                    }
                }
            }
        }
        if doc.fixed_group_width == 0 {
            return Err(Error::Registry("fixed_group_width must be positive".into()));
        }
        let gazetteers = doc
            .gazetteers
            .into_iter()
            .map(|(label, terms)| {
                let set = terms.into_iter().map(|t| t.trim().to_lowercase()).collect();
                (label, set)
            })
            .collect();
        Ok(Self {
            contexts: doc.contexts,
            categories: doc.categories,
            gazetteers,
            fixed_group_width: doc.fixed_group_width,
            compiled,
            index,
        })
    }

    /// All contexts in profile order.
    pub fn contexts(&self) -> &[ReadabilityContext] {
        &self.contexts
    }

    /// Contexts of one type group, in profile order.
    pub fn contexts_of_group(&self, group: TypeGroup) -> impl Iterator<Item = &ReadabilityContext> {
        self.contexts.iter().filter(move |c| c.group == group)
    }

    /// Categories in stable order; drives few-shot packing.
    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn lookup(&self, name: &str) -> Result<&ReadabilityContext> {
        self.index
            .get(name)
            .map(|&i| &self.contexts[i])
            .ok_or_else(|| Error::UnknownContext(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Compiled pattern for a context, when it ships one.
    pub fn regex_for(&self, name: &str) -> Option<&Regex> {
        self.compiled.get(name)
    }

    /// Lowercased term set for a NER label.
    pub fn gazetteer(&self, label: &str) -> Option<&BTreeSet<String>> {
        self.gazetteers.get(label)
    }

    pub fn gazetteer_labels(&self) -> impl Iterator<Item = &str> {
        self.gazetteers.keys().map(String::as_str)
    }

    pub fn fixed_group_width(&self) -> usize {
        self.fixed_group_width
    }

    /// NER labels a context accepts: its own name, plus every sibling in
    /// its category when the context is a generic catch-all.
    pub fn accepted_labels(&self, context: &ReadabilityContext) -> Vec<&str> {
        if context.is_generic() {
            self.contexts
                .iter()
                .filter(|c| c.category == context.category)
                .map(|c| c.name.as_str())
                .collect()
        } else {
            vec![context.name.as_str()]
        }
    }

    /// Serialize the full registry back to a document.
    pub fn to_document(&self) -> RegistryDocument {
        RegistryDocument {
            contexts: self.contexts.clone(),
            categories: self.categories.clone(),
            gazetteers: self
                .gazetteers
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().cloned().collect()))
                .collect(),
            fixed_group_width: self.fixed_group_width,
        }
    }
}

/// Merge a user extension document on top of a base document.
/// Duplicate context names are errors; gazetteers merge by term union;
/// categories append in user order.
pub fn merge_documents(mut base: RegistryDocument, user: &RegistryDocument) -> Result<RegistryDocument> {
    let existing: BTreeSet<&str> = base.contexts.iter().map(|c| c.name.as_str()).collect();
    for ctx in &user.contexts {
        if existing.contains(ctx.name.as_str()) {
            return Err(Error::DuplicateContext(ctx.name.clone()));
        }
    }
    let mut seen_user = BTreeSet::new();
    for ctx in &user.contexts {
        if !seen_user.insert(ctx.name.as_str()) {
            return Err(Error::DuplicateContext(ctx.name.clone()));
        }
        base.contexts.push(ctx.clone());
    }
    for cat in &user.categories {
        if !base.categories.iter().any(|c| c.name == cat.name) {
            base.categories.push(cat.clone());
        }
    }
    for (label, terms) in &user.gazetteers {
        let entry = base.gazetteers.entry(label.clone()).or_default();
        entry.extend(terms.iter().cloned());
        entry.sort();
        entry.dedup();
    }
    Ok(base)
}
