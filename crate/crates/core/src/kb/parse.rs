//! Readers for the two on-disk fact formats.

use std::io::BufRead;

use log::warn;
use serde_json::Value;

use crate::error::{RamError, Result};

/// A fact as read from disk, before vocabulary indexing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RawFact {
    pub relation: String,
    pub entities: Vec<String>,
    /// Role names parallel to `entities` (role-JSON input only).
    pub roles: Option<Vec<String>>,
}

impl RawFact {
    pub fn new(relation: impl Into<String>, entities: &[&str]) -> Self {
        Self {
            relation: relation.into(),
            entities: entities.iter().map(|s| s.to_string()).collect(),
            roles: None,
        }
    }

    pub fn arity(&self) -> usize {
        self.entities.len()
    }
}

fn tokenize(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Parse the tabular format: `relation<TAB>e1<TAB>e2…`, one fact per line.
///
/// Tokens are split on tabs when the line has any, otherwise on runs of
/// spaces. Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_tabular<R: BufRead>(reader: R) -> Result<Vec<RawFact>> {
    let mut facts = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tokens = tokenize(&line);
        if tokens.len() < 3 {
            return Err(RamError::Parse {
                line: idx + 1,
                msg: format!(
                    "too few tokens ({}); need a relation and at least two entities",
                    tokens.len()
                ),
            });
        }
        facts.push(RawFact {
            relation: tokens[0].to_string(),
            entities: tokens[1..].iter().map(|s| s.to_string()).collect(),
            roles: None,
        });
    }
    Ok(facts)
}

/// Output of [`parse_role_json`].
#[derive(Debug, Default, Clone)]
pub struct RoleJsonFacts {
    pub facts: Vec<RawFact>,
    /// Facts skipped because a role was multi-valued, a value was not an
    /// entity name, or fewer than two roles remained.
    pub dropped: usize,
}

/// Separator used to build a relation name from its sorted role names.
pub const ROLE_SIGNATURE_SEP: &str = "|";

/// Parse JSON-lines where each object maps role names to entity names.
///
/// Keys are taken in lexicographic order, which fixes the position of every
/// role. The relation of a fact is identified by its role signature (the
/// sorted keys joined with `|`).
pub fn parse_role_json<R: BufRead>(reader: R) -> Result<RoleJsonFacts> {
    let mut out = RoleJsonFacts::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| RamError::Parse {
            line: idx + 1,
            msg: format!("malformed JSON: {e}"),
        })?;
        let Value::Object(map) = value else {
            return Err(RamError::Parse {
                line: idx + 1,
                msg: "expected a JSON object".into(),
            });
        };
        if map.is_empty() {
            return Err(RamError::Parse {
                line: idx + 1,
                msg: "empty fact".into(),
            });
        }
        let mut keys: Vec<&String> = map.keys().collect();
        keys.sort();

        let mut roles = Vec::with_capacity(keys.len());
        let mut entities = Vec::with_capacity(keys.len());
        let mut skip = None;
        for key in keys {
            match &map[key] {
                Value::String(s) => entities.push(s.clone()),
                Value::Array(items) if items.len() == 1 && items[0].is_string() => {
                    entities.push(items[0].as_str().unwrap_or_default().to_string())
                }
                Value::Array(items) if items.len() > 1 => {
                    skip = Some(format!("role {key:?} has {} values", items.len()));
                    break;
                }
                other => {
                    skip = Some(format!("role {key:?} has non-entity value {other}"));
                    break;
                }
            }
            roles.push(key.clone());
        }
        if skip.is_none() && entities.len() < 2 {
            skip = Some("fewer than two role-entity pairs".into());
        }
        if let Some(reason) = skip {
            warn!("line {}: dropping fact: {reason}", idx + 1);
            out.dropped += 1;
            continue;
        }
        out.facts.push(RawFact {
            relation: roles.join(ROLE_SIGNATURE_SEP),
            entities,
            roles: Some(roles),
        });
    }
    if out.dropped > 0 {
        warn!("dropped {} role-JSON facts", out.dropped);
    }
    Ok(out)
}
