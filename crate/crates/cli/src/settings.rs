//! Layered configuration: built-in defaults, a flat `key = value` file,
//! `CFI_<KEY>` environment variables, then command-line flags. Later layers
//! win. API keys never pass through here; backends read them from the
//! environment at call time.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use cfinception::bench::MmvpMode;
use cfinception::dvp::{DvpConfig, Profile, Stages, VisualMode};
use cfinception::gateway::{BackendConfig, BackendKind, BackendSet};
use thiserror::Error;

/// Bad flags, config values or config files. Exits with status 64.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

/// Every recognised key with its default. An empty default means unset.
const KEYS: [(&str, &str); 29] = [
    ("backend", "mock"),
    ("fixtures", ""),
    ("chat_url", ""),
    ("chat_model", "mini-vlm"),
    ("keyword_url", ""),
    ("keyword_model", "keyword"),
    ("scorer_url", ""),
    ("clip_model", "clip"),
    ("nli_model", "nli"),
    ("judge_url", ""),
    ("judge_model", "judge"),
    ("timeout_secs", "120"),
    ("max_retries", "3"),
    ("profile", "main"),
    ("iterations", "5"),
    ("k_percent", ""),
    ("tau", ""),
    ("clip_low", ""),
    ("clip_high", ""),
    ("stages", "both"),
    ("parallelism", "4"),
    ("seed", ""),
    ("keyword_temperature", "0.8"),
    ("max_tokens", ""),
    ("out", "runs"),
    ("run_id", ""),
    ("kind", ""),
    ("conditions", "baseline,inception"),
    ("mmvp_mode", "per_question"),
];

/// Keys outside [`KEYS`] that the evaluation command also accepts.
const EVAL_KEYS: [(&str, &str); 4] =
    [("hallucination_cutoff", "3"), ("failure_cap", "0.1"), ("resume", "false"), ("allow_any_pope_split", "false")];

/// Environment variables holding bearer tokens, per backend role.
pub const CHAT_TOKEN_VAR: &str = "CFI_CHAT_API_KEY";
pub const KEYWORD_TOKEN_VAR: &str = "CFI_KEYWORD_API_KEY";
pub const SCORER_TOKEN_VAR: &str = "CFI_SCORER_API_KEY";
pub const JUDGE_TOKEN_VAR: &str = "CFI_JUDGE_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Env,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Env => "env",
            Source::Flag => "flag",
        })
    }
}

fn default_of(key: &str) -> Option<&'static str> {
    KEYS.iter().chain(EVAL_KEYS.iter()).find(|(k, _)| *k == key).map(|(_, v)| *v)
}

fn looks_secret(key: &str) -> bool {
    let k = key.to_ascii_lowercase();
    ["api_key", "apikey", "secret", "password", "bearer"].iter().any(|s| k.contains(s))
        || k.ends_with("_key")
        || k.ends_with("token")
}

fn check_key(key: &str, origin: &str) -> Result<(), UsageError> {
    if looks_secret(key) {
        return Err(usage(format!(
            "{origin}: `{key}` looks like a credential; set {CHAT_TOKEN_VAR}, {KEYWORD_TOKEN_VAR}, {SCORER_TOKEN_VAR} or {JUDGE_TOKEN_VAR} in the environment instead"
        )));
    }
    if default_of(key).is_none() {
        return Err(usage(format!("{origin}: unknown setting `{key}`")));
    }
    Ok(())
}

/// Resolved settings with the layer each value came from.
#[derive(Debug, Clone)]
pub struct Settings {
    values: BTreeMap<String, (String, Source)>,
}

impl Settings {
    /// Merges the layers. `env` is the process environment, passed in so
    /// tests can supply their own.
    pub fn resolve(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        flags: &[(impl AsRef<str>, String)],
    ) -> Result<Self, UsageError> {
        let mut values: BTreeMap<String, (String, Source)> = KEYS
            .iter()
            .chain(EVAL_KEYS.iter())
            .map(|(k, v)| (k.to_string(), (v.to_string(), Source::Default)))
            .collect();
        if let Some(path) = file {
            for (key, value) in parse_config_file(path)? {
                values.insert(key, (value, Source::File));
            }
        }
        for (name, value) in env {
            let Some(key) = name.strip_prefix("CFI_").map(str::to_ascii_lowercase) else { continue };
            if default_of(&key).is_some() {
                values.insert(key, (value, Source::Env));
            }
        }
        for (key, value) in flags {
            let key = key.as_ref().trim();
            check_key(key, "flag")?;
            values.insert(key.to_string(), (value.trim().to_string(), Source::Flag));
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(|(v, _)| v.trim()).unwrap_or_else(|| panic!("unregistered setting {key}"))
    }

    pub fn is_set(&self, key: &str) -> bool {
        !self.raw(key).is_empty()
    }

    #[cfg(test)]
    fn source(&self, key: &str) -> Source {
        self.values[key].1
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, UsageError>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e| usage(format!("{key} = {raw:?}: {e}")))
    }

    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, UsageError>
    where
        T::Err: fmt::Display,
    {
        if self.is_set(key) {
            self.parse(key).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.raw(key))
    }

    /// `key = value  # source` lines in key order.
    pub fn describe(&self) -> String {
        let width = self.values.keys().map(String::len).max().unwrap_or(0);
        self.values.iter().map(|(k, (v, s))| format!("{k:<width$} = {v}  # {s}\n")).collect()
    }

    pub fn profile(&self) -> Result<Profile, UsageError> {
        self.parse("profile")
    }

    pub fn mmvp_mode(&self) -> Result<MmvpMode, UsageError> {
        match self.raw("mmvp_mode") {
            "per_question" => Ok(MmvpMode::PerQuestion),
            "per_pair" => Ok(MmvpMode::PerPair),
            other => Err(usage(format!("mmvp_mode = {other:?}: expected per_question or per_pair"))),
        }
    }

    fn stages(&self) -> Result<Stages, UsageError> {
        match self.raw("stages") {
            "both" => Ok(Stages::Both),
            "visual" | "visual_only" => Ok(Stages::VisualOnly),
            "linguistic" | "linguistic_only" => Ok(Stages::LinguisticOnly),
            other => Err(usage(format!("stages = {other:?}: expected both, visual or linguistic"))),
        }
    }

    /// The profile preset with any individual overrides applied.
    pub fn dvp(&self) -> Result<DvpConfig, UsageError> {
        let mut dvp = DvpConfig::for_profile(self.profile()?);
        dvp.n_iterations = self.parse("iterations")?;
        dvp.parallelism = self.parse("parallelism")?;
        dvp.stages = self.stages()?;
        if let Some(tau) = self.parse_opt("tau")? {
            dvp.tau = tau;
        }
        match (self.parse_opt::<f64>("clip_low")?, self.parse_opt::<f64>("clip_high")?, self.parse_opt("k_percent")?) {
            (None, None, None) => {}
            (None, None, Some(k)) => dvp.visual_mode = VisualMode::Percentile { k },
            (low, high, None) => {
                let (default_low, default_high) = match dvp.visual_mode {
                    VisualMode::Absolute { low, high } => (low, high),
                    VisualMode::Percentile { .. } => (0.2, 0.8),
                };
                dvp.visual_mode =
                    VisualMode::Absolute { low: low.unwrap_or(default_low), high: high.unwrap_or(default_high) };
            }
            _ => return Err(usage("k_percent cannot be combined with clip_low/clip_high")),
        }
        dvp.validate().map_err(|e| usage(e.to_string()))?;
        Ok(dvp)
    }

    /// Backend roles. In mock mode every role reads the fixture file; in live
    /// mode each role points at its endpoint and picks up its token variable
    /// when that variable is present.
    pub fn backends(&self) -> Result<BackendSet, UsageError> {
        let timeout = Duration::from_secs(self.parse("timeout_secs")?);
        let max_retries: u32 = self.parse("max_retries")?;
        let tune = |c: BackendConfig| BackendConfig { timeout, max_retries, ..c };
        match self.raw("backend") {
            "mock" => {
                if !self.is_set("fixtures") {
                    return Err(usage("backend = mock needs `fixtures` (a response fixture file)"));
                }
                let path = self.path("fixtures");
                let mock = |kind, model: &str| tune(BackendConfig::mock(kind, &path, model));
                Ok(BackendSet {
                    chat: mock(BackendKind::Chat, self.raw("chat_model")),
                    keyword: Some(mock(BackendKind::Chat, self.raw("keyword_model"))),
                    visual: mock(BackendKind::VisualScorer, self.raw("clip_model")),
                    nli: mock(BackendKind::NliScorer, self.raw("nli_model")),
                    judge: Some(mock(BackendKind::Chat, self.raw("judge_model"))),
                })
            }
            "live" => {
                for key in ["chat_url", "scorer_url"] {
                    if !self.is_set(key) {
                        return Err(usage(format!("backend = live needs `{key}`")));
                    }
                }
                let live = |kind, url_key: &str, model_key: &str, token_var: &str| {
                    let auth_env_var =
                        if std::env::var_os(token_var).is_some() { token_var.to_string() } else { String::new() };
                    tune(BackendConfig {
                        auth_env_var,
                        ..BackendConfig::live(kind, self.raw(url_key), self.raw(model_key))
                    })
                };
                Ok(BackendSet {
                    chat: live(BackendKind::Chat, "chat_url", "chat_model", CHAT_TOKEN_VAR),
                    keyword: self
                        .is_set("keyword_url")
                        .then(|| live(BackendKind::Chat, "keyword_url", "keyword_model", KEYWORD_TOKEN_VAR)),
                    visual: live(BackendKind::VisualScorer, "scorer_url", "clip_model", SCORER_TOKEN_VAR),
                    nli: live(BackendKind::NliScorer, "scorer_url", "nli_model", SCORER_TOKEN_VAR),
                    judge: self
                        .is_set("judge_url")
                        .then(|| live(BackendKind::Chat, "judge_url", "judge_model", JUDGE_TOKEN_VAR)),
                })
            }
            other => Err(usage(format!("backend = {other:?}: expected mock or live"))),
        }
    }
}

/// Reads `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config_file(path: &Path) -> Result<Vec<(String, String)>, UsageError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split_once('#').map_or(line, |(before, _)| before).trim();
        if line.is_empty() {
            continue;
        }
        let origin = format!("{}:{}", path.display(), i + 1);
        let (key, value) =
            line.split_once('=').ok_or_else(|| usage(format!("{origin}: expected `key = value`, got {line:?}")))?;
        let key = key.trim().to_string();
        check_key(&key, &origin)?;
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}
