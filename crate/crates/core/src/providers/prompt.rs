use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Template with `{name}` placeholders. Rendering fails on any placeholder
/// without a value; `{{` and `}}` produce literal braces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub text: String,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            text: text.into(),
        }
    }

    pub fn placeholders(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut rest = self.text.as_str();
        while let Some(start) = rest.find('{') {
            if rest[start..].starts_with("{{") {
                rest = &rest[start + 2..];
                continue;
            }
            match rest[start + 1..].find('}') {
                Some(end) => {
                    out.push(rest[start + 1..start + 1 + end].to_string());
                    rest = &rest[start + 2 + end..];
                }
                None => break,
            }
        }
        out
    }

    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<String> {
        let mut out = String::with_capacity(self.text.len());
        let mut chars = self.text.char_indices().peekable();
        while let Some((i, ch)) = chars.next() {
            match ch {
                '{' if matches!(chars.peek(), Some((_, '{'))) => {
                    chars.next();
                    out.push('{');
                }
                '}' if matches!(chars.peek(), Some((_, '}'))) => {
                    chars.next();
                    out.push('}');
                }
                '{' => {
                    let close = self.text[i + 1..]
                        .find('}')
                        .ok_or_else(|| Error::UnresolvedPlaceholder(self.text[i + 1..].to_string()))?;
                    let key = &self.text[i + 1..i + 1 + close];
                    let value = values
                        .get(key)
                        .ok_or_else(|| Error::UnresolvedPlaceholder(key.to_string()))?;
                    out.push_str(value);
                    let end = i + 1 + close;
                    while chars.next_if(|&(j, _)| j <= end).is_some() {}
                }
                c => out.push(c),
            }
        }
        Ok(out)
    }

    /// Augmentation prompt for rule/topic classes (text queries).
    pub fn rule_violation() -> Self {
        Self::new(
            "rule_violation",
            "Here is a rule that defines the topics of the queries that should not be answered by an LLM agent: \n\
             {label}: {description}\n\
             \n\
             Please generate {num_generate} **diverse** example queries that violate this rule. \n\
             The examples should be as **diverse** as possible so that the agent can learn from the examples if a query violates the rule. In addition, do not generate examples that are similar to the following existing examples:\n\
             {existing_queries}\n\
             \n\
             In your response, only list the examples with one example in each line, without any numbering or bullets.\n",
        )
    }

    /// Augmentation prompt for pet-breed images.
    pub fn pet_species() -> Self {
        Self::new(
            "pet_species",
            "Generate pictures of a pet belonging to {label} species in different scenarios.\n",
        )
    }

    /// Text used to embed a label.
    pub fn label_text() -> Self {
        Self::new("label_text", "{label}: {description}")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "rule_violation" => Some(Self::rule_violation()),
            "pet_species" => Some(Self::pet_species()),
            "label_text" => Some(Self::label_text()),
            _ => None,
        }
    }
}
