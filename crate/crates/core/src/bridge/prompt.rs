use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::survey::{AttributeSchema, Level, Persona, Question};

use super::BridgeError;

pub const DEFAULT_TEMPLATE: &str = "You are answering a social survey. You are {persona_description}. \
Question: {question} Respond by choosing exactly one option: {options}.";

pub const DEFAULT_COUNTRY_PHRASE: &str = "a person from {country}";

const PLACEHOLDERS: [&str; 3] = ["{persona_description}", "{question}", "{options}"];

/// Phrases for the two levels of one attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhrasePair {
    pub level0: String,
    pub level1: String,
}

impl PhrasePair {
    pub fn new(level0: &str, level1: &str) -> Self {
        Self { level0: level0.to_string(), level1: level1.to_string() }
    }

    pub fn get(&self, level: Level) -> &str {
        match level {
            Level::Zero => &self.level0,
            Level::One => &self.level1,
        }
    }
}

/// How each option is written as a scored continuation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verbalization {
    /// `"3. Agree"`.
    #[default]
    NumberAndText,
    /// `"3"`.
    Number,
    /// `"Agree"`.
    Text,
}

impl Verbalization {
    pub fn render(self, number: usize, text: &str) -> String {
        match self {
            Verbalization::NumberAndText => format!("{number}. {text}"),
            Verbalization::Number => number.to_string(),
            Verbalization::Text => text.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub text: String,
    /// Must contain `{country}` once.
    pub country_phrase: String,
    /// Attribute name to level phrases, e.g. `who is married`.
    pub phrases: BTreeMap<String, PhrasePair>,
    #[serde(default)]
    pub verbalization: Verbalization,
}

impl PromptTemplate {
    /// The default text with phrases for the default four-attribute schema.
    pub fn default_for_default_schema() -> Self {
        let phrases = BTreeMap::from([
            ("gender".to_string(), PhrasePair::new("who is a man", "who is a woman")),
            ("education".to_string(), PhrasePair::new("who is college-educated", "who is not college-educated")),
            ("residence".to_string(), PhrasePair::new("who lives in an urban area", "who lives in a rural area")),
            ("marital_status".to_string(), PhrasePair::new("who is married", "who is not married")),
        ]);
        Self {
            text: DEFAULT_TEMPLATE.to_string(),
            country_phrase: DEFAULT_COUNTRY_PHRASE.to_string(),
            phrases,
            verbalization: Verbalization::default(),
        }
    }

    /// Default text with phrases built from the schema labels (`whose gender is Female`).
    pub fn from_schema_labels(schema: &AttributeSchema) -> Self {
        let phrases = schema
            .attributes()
            .iter()
            .map(|a| {
                let phrase = |l: Level| format!("whose {} is {}", a.name.replace('_', " "), a.label(l));
                (a.name.clone(), PhrasePair { level0: phrase(Level::Zero), level1: phrase(Level::One) })
            })
            .collect();
        Self {
            text: DEFAULT_TEMPLATE.to_string(),
            country_phrase: DEFAULT_COUNTRY_PHRASE.to_string(),
            phrases,
            verbalization: Verbalization::default(),
        }
    }

    pub fn validate(&self, schema: &AttributeSchema) -> Result<(), BridgeError> {
        for p in PLACEHOLDERS {
            let n = self.text.matches(p).count();
            if n != 1 {
                return Err(BridgeError::Template(format!("placeholder {p} appears {n} times, expected once")));
            }
        }
        if self.country_phrase.matches("{country}").count() != 1 {
            return Err(BridgeError::Template("country phrase must contain {country} exactly once".into()));
        }
        for a in schema.attributes() {
            let pair = self
                .phrases
                .get(&a.name)
                .ok_or_else(|| BridgeError::Template(format!("no phrase for attribute `{}`", a.name)))?;
            if pair.level0.is_empty() || pair.level1.is_empty() {
                return Err(BridgeError::Template(format!("empty phrase for attribute `{}`", a.name)));
            }
        }
        Ok(())
    }

    /// Country phrase followed by the phrases of the assigned attributes in schema order.
    pub fn persona_description(&self, schema: &AttributeSchema, persona: &Persona) -> Result<String, BridgeError> {
        let mut parts = Vec::new();
        for name in schema.names() {
            if let Some(level) = persona.level(name) {
                let pair = self
                    .phrases
                    .get(name)
                    .ok_or_else(|| BridgeError::Template(format!("no phrase for attribute `{name}`")))?;
                parts.push(pair.get(level).to_string());
            }
        }
        if let Some(unknown) = persona.assignments.keys().find(|k| schema.index_of(k).is_none()) {
            return Err(BridgeError::Template(format!("persona assigns unknown attribute `{unknown}`")));
        }
        let mut out = self.country_phrase.replace("{country}", &persona.country);
        if !parts.is_empty() {
            out.push(' ');
            out.push_str(&parts.join(", "));
        }
        Ok(out)
    }

    pub fn continuations(&self, question: &Question) -> Vec<String> {
        question.options.iter().enumerate().map(|(i, t)| self.verbalization.render(i + 1, t)).collect()
    }

    pub fn render(&self, schema: &AttributeSchema, persona: &Persona, question: &Question) -> Result<String, BridgeError> {
        let options: Vec<String> =
            question.options.iter().enumerate().map(|(i, t)| format!("{}. {}", i + 1, t)).collect();
        let description = self.persona_description(schema, persona)?;
        // Substitute in one pass so inserted text is never rescanned for placeholders.
        let mut out = String::with_capacity(self.text.len() + description.len() + 64);
        let mut rest = self.text.as_str();
        while let Some(start) = rest.find('{') {
            let hit = PLACEHOLDERS.iter().find(|p| rest[start..].starts_with(**p));
            out.push_str(&rest[..start]);
            match hit {
                Some(&p) => {
                    out.push_str(match p {
                        "{persona_description}" => &description,
                        "{question}" => &question.prompt_text,
                        _ => "",
                    });
                    if p == "{options}" {
                        out.push_str(&options.join("; "));
                    }
                    rest = &rest[start + p.len()..];
                }
                None => {
                    out.push('{');
                    rest = &rest[start + 1..];
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}
