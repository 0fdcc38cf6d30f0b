//! Extraction of labeled, bracketed keyword lists from free-form model replies.

use std::sync::LazyLock;

use regex::Regex;

use super::KeywordError;

static FACTUAL_HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bfactual\s+keywords[\s*:]*\[").expect("valid regex"));
static UNNUMBERED_CF_HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bcounterfactual\s+keywords[\s*:]*\[").expect("valid regex"));

fn numbered_cf_header(n: usize) -> Regex {
    Regex::new(&format!(r"(?i)\bcounterfactual\s+keywords\s*(?:set\s*)?#?{n}[\s*:]*\[")).expect("valid regex")
}

/// Splits the bracketed list starting right after `open` (the index past `[`).
/// Commas nested in (), [] or {} do not split. An unclosed list ends at the
/// end of its line.
fn split_list(text: &str, open: usize) -> Vec<String> {
    scan_list(text, open, false).unwrap_or_else(|| scan_list(text, open, true).unwrap_or_default())
}

fn scan_list(text: &str, open: usize, stop_at_newline: bool) -> Option<Vec<String>> {
    let mut items = Vec::new();
    let mut depth = 0usize;
    let mut current = String::new();
    let mut closed = false;
    for c in text[open..].chars() {
        match c {
            '(' | '[' | '{' => {
                depth += 1;
                current.push(c);
            }
            ')' | '}' => {
                depth = depth.saturating_sub(1);
                current.push(c);
            }
            ']' if depth == 0 => {
                closed = true;
                break;
            }
            ']' => {
                depth -= 1;
                current.push(c);
            }
            ',' if depth == 0 => items.push(std::mem::take(&mut current)),
            '\n' if stop_at_newline => {
                closed = true;
                break;
            }
            _ => current.push(c),
        }
    }
    if !closed && !stop_at_newline {
        return None;
    }
    items.push(current);
    Some(items.into_iter().filter_map(|s| clean_item(&s)).collect())
}

fn clean_item(raw: &str) -> Option<String> {
    let mut s = raw.trim();
    for q in ['"', '\'', '`'] {
        if s.len() >= 2 && s.starts_with(q) && s.ends_with(q) {
            s = s[1..s.len() - 1].trim();
        }
    }
    // Echoed scaffold placeholders are not keywords.
    if s.is_empty() || s.chars().all(|c| matches!(c, '_' | '.' | '…' | ' ')) {
        None
    } else {
        Some(s.to_string())
    }
}

/// First non-empty list following `header`; an empty list if every match is empty.
fn find_list(text: &str, header: &Regex) -> Option<Vec<String>> {
    let mut found: Option<Vec<String>> = None;
    for m in header.find_iter(text) {
        let list = split_list(text, m.end());
        if !list.is_empty() {
            return Some(list);
        }
        found.get_or_insert(list);
    }
    found
}

/// Extracts the factual list and `n_expected` counterfactual lists.
///
/// Extra counterfactual sets beyond `n_expected` are ignored. With
/// `n_expected == 1` an unnumbered "Counterfactual Keywords:" header is
/// accepted when "Counterfactual Keywords 1:" is absent.
pub fn parse_keyword_lists(text: &str, n_expected: usize) -> Result<(Vec<String>, Vec<Vec<String>>), KeywordError> {
    let missing = |section: String| KeywordError::Parse { missing: section, raw: text.to_string() };
    let factual = find_list(text, &FACTUAL_HEADER).ok_or_else(|| missing("Factual Keywords".into()))?;
    let mut sets = Vec::with_capacity(n_expected);
    for i in 1..=n_expected {
        let list = find_list(text, &numbered_cf_header(i))
            .or_else(|| if n_expected == 1 { find_list(text, &UNNUMBERED_CF_HEADER) } else { None })
            .ok_or_else(|| missing(format!("Counterfactual Keywords {i}")))?;
        sets.push(list);
    }
    Ok((factual, sets))
}

/// Canonical text form: one labeled line per list, keywords joined by ", ".
pub fn serialize_keyword_lists(factual: &[String], counterfactual_sets: &[Vec<String>]) -> String {
    let mut out = format!("Factual Keywords: [{}]\n", factual.join(", "));
    for (i, set) in counterfactual_sets.iter().enumerate() {
        out.push_str(&format!("Counterfactual Keywords {}: [{}]\n", i + 1, set.join(", ")));
    }
    out
}
