use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::Extracted;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YesNo {
    Yes,
    No,
    Unparseable,
}

impl From<YesNo> for Extracted {
    fn from(v: YesNo) -> Self {
        match v {
            YesNo::Yes => Extracted::Yes,
            YesNo::No => Extracted::No,
            YesNo::Unparseable => Extracted::Unparseable,
        }
    }
}

static WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[A-Za-z]+").expect("valid regex"));

/// First alphabetic token if it is yes/no, else the only one of yes/no that
/// occurs as a whole word, else unparseable.
pub fn extract_yes_no(raw: &str) -> YesNo {
    let mut words = WORD.find_iter(raw).map(|m| m.as_str().to_ascii_lowercase());
    match words.next().as_deref() {
        Some("yes") => return YesNo::Yes,
        Some("no") => return YesNo::No,
        None => return YesNo::Unparseable,
        _ => {}
    }
    let (mut yes, mut no) = (false, false);
    for w in WORD.find_iter(raw) {
        match w.as_str().to_ascii_lowercase().as_str() {
            "yes" => yes = true,
            "no" => no = true,
            _ => {}
        }
    }
    match (yes, no) {
        (true, false) => YesNo::Yes,
        (false, true) => YesNo::No,
        _ => YesNo::Unparseable,
    }
}

static LABEL_TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(([A-Za-z])\)").expect("valid regex"));
static LEADING_LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*(?:\(([A-Za-z])\)|([A-Za-z])\)|([A-Za-z])\.(?:\s|$)|([A-Za-z])\s*$)").expect("valid regex")
});

/// Splits an option string like `"(a) Floor (b) Carpet"` into `(label, text)` pairs.
pub fn parse_options(options: &str) -> Vec<(String, String)> {
    let marks: Vec<(usize, usize, String)> = LABEL_TOKEN
        .captures_iter(options)
        .map(|c| {
            let m = c.get(0).expect("whole match");
            (m.start(), m.end(), c[1].to_ascii_lowercase())
        })
        .collect();
    marks
        .iter()
        .enumerate()
        .map(|(i, (_, end, label))| {
            let stop = marks.get(i + 1).map_or(options.len(), |m| m.0);
            (label.clone(), options[*end..stop].trim().trim_end_matches([',', ';']).trim().to_string())
        })
        .collect()
}

/// Label pattern at the start of the reply, then a unique parenthesized
/// label anywhere, then a unique whole-word match of one choice text.
pub fn extract_option(raw: &str, choices: &[(String, String)]) -> Extracted {
    let known = |l: &str| choices.iter().any(|(label, _)| label.eq_ignore_ascii_case(l));
    let canonical =
        |l: &str| choices.iter().find(|(label, _)| label.eq_ignore_ascii_case(l)).map(|(label, _)| label.clone());

    if let Some(c) = LEADING_LABEL.captures(raw) {
        let l = (1..=4).find_map(|i| c.get(i)).map(|m| m.as_str()).unwrap_or_default();
        if known(l) {
            return Extracted::Option(canonical(l).expect("known label"));
        }
    }

    let mut labels: Vec<String> =
        LABEL_TOKEN.captures_iter(raw).map(|c| c[1].to_ascii_lowercase()).filter(|l| known(l)).collect();
    labels.sort();
    labels.dedup();
    if labels.len() == 1 {
        return Extracted::Option(canonical(&labels[0]).expect("known label"));
    }
    if labels.len() > 1 {
        return Extracted::Unparseable;
    }

    let hits: Vec<&String> = choices
        .iter()
        .filter(|(_, text)| !text.trim().is_empty())
        .filter(|(_, text)| {
            Regex::new(&format!(r"(?i)(?:^|\W){}(?:\W|$)", regex::escape(text.trim())))
                .map(|re| re.is_match(raw))
                .unwrap_or(false)
        })
        .map(|(label, _)| label)
        .collect();
    match hits.as_slice() {
        [one] => Extracted::Option((*one).clone()),
        _ => Extracted::Unparseable,
    }
}
