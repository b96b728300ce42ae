use std::collections::HashMap;

use indexmap::IndexMap;
use serde_json::Value;

use super::{validate_ontology, Ontology, OntologyError, OntologySource};

/// Lowercase, trimmed, with `_`, `-` and whitespace runs folded to one
/// space and surrounding quotes or markup removed.
pub fn normalize_label(s: &str) -> String {
    let trimmed = s.trim().trim_matches(|c: char| "\"'`*.,;:".contains(c) || c.is_whitespace());
    let mut out = String::with_capacity(trimmed.len());
    let mut gap = false;
    for c in trimmed.chars() {
        if c == '_' || c == '-' || c.is_whitespace() {
            gap = true;
        } else {
            if gap && !out.is_empty() {
                out.push(' ');
            }
            gap = false;
            out.extend(c.to_lowercase());
        }
    }
    out
}

fn clean_parent(s: &str) -> String {
    s.trim()
        .trim_matches(|c: char| "\"'`*#:".contains(c) || c.is_whitespace())
        .trim()
        .to_string()
}

/// Finds the outermost `{ ... }` span, preferring a fenced code block.
fn json_candidate(raw: &str) -> Option<&str> {
    let body = match raw.find("```") {
        Some(start) => {
            let after = &raw[start + 3..];
            let after = after.strip_prefix("json").unwrap_or(after);
            match after.find("```") {
                Some(end) => &after[..end],
                None => after,
            }
        }
        None => raw,
    };
    let open = body.find('{')?;
    let close = body.rfind('}')?;
    (close > open).then(|| &body[open..=close])
}

fn from_json(raw: &str) -> Option<Vec<(String, Vec<String>)>> {
    let v: Value = serde_json::from_str(json_candidate(raw)?).ok()?;
    let obj = match v.get("parents") {
        Some(Value::Object(inner)) => inner.clone(),
        _ => v.as_object()?.clone(),
    };
    let mut out = Vec::new();
    for (k, children) in obj {
        let list = children
            .as_array()?
            .iter()
            .map(|c| c.as_str().map(str::to_string))
            .collect::<Option<Vec<_>>>()?;
        out.push((k, list));
    }
    Some(out)
}

fn strip_bullet(line: &str) -> Option<&str> {
    let t = line.trim_start();
    for b in ["- ", "* ", "• ", "+ "] {
        if let Some(rest) = t.strip_prefix(b) {
            return Some(rest);
        }
    }
    None
}

fn strip_enumeration(line: &str) -> Option<&str> {
    let t = line.trim_start();
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &t[digits..];
    rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") "))
}

/// Header lines name a parent (optionally followed by `: a, b, c`);
/// bullet lines beneath add children.
fn from_bullets(raw: &str) -> Vec<(String, Vec<String>)> {
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    for line in raw.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let indented = line.starts_with(' ') || line.starts_with('\t');
        let bullet = strip_bullet(line);
        match bullet {
            Some(item) if indented || !out.is_empty() && !item.contains(':') => {
                if let Some((_, children)) = out.last_mut() {
                    children.extend(item.split(',').map(str::to_string));
                }
            }
            _ => {
                let header = bullet.or_else(|| strip_enumeration(line)).unwrap_or(line);
                let (name, inline) = match header.split_once(':') {
                    Some((n, rest)) => (n, rest),
                    None => (header, ""),
                };
                let name = clean_parent(name);
                if name.is_empty() {
                    continue;
                }
                let children = inline
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(str::to_string)
                    .collect();
                out.push((name, children));
            }
        }
    }
    out.retain(|(_, children)| !children.is_empty());
    out
}

/// Extracts and validates a parent → children mapping from a provider
/// reply. Children are matched against `labels` after normalization and
/// stored in the dataset's spelling; unmatched names are kept verbatim so
/// validation reports them.
pub fn parse_reply(raw: &str, labels: &[String], p: usize) -> Result<Ontology, OntologyError> {
    if raw.trim().is_empty() {
        return Err(OntologyError::UnparseableReply {
            reason: "empty reply".into(),
            violations: Vec::new(),
        });
    }
    let groups = match from_json(raw) {
        Some(g) => g,
        None => from_bullets(raw),
    };
    if groups.is_empty() {
        return Err(OntologyError::UnparseableReply {
            reason: "no parent classes found".into(),
            violations: Vec::new(),
        });
    }
    let canonical: HashMap<String, &String> = labels.iter().map(|l| (normalize_label(l), l)).collect();
    let mut parents: IndexMap<String, Vec<String>> = IndexMap::new();
    for (name, children) in groups {
        let entry = parents.entry(clean_parent(&name)).or_default();
        for c in children {
            let key = normalize_label(&c);
            if key.is_empty() {
                continue;
            }
            let stored = match canonical.get(&key) {
                Some(l) => (*l).clone(),
                None => c.trim().to_string(),
            };
            entry.push(stored);
        }
    }
    let o = Ontology {
        dataset: String::new(),
        p,
        n: labels.len(),
        source: OntologySource::Llm,
        parents,
        provenance: None,
    };
    let report = validate_ontology(&o, labels);
    if !report.passed() {
        return Err(OntologyError::UnparseableReply {
            reason: report.to_string(),
            violations: report.violations,
        });
    }
    Ok(o)
}
