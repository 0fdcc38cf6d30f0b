#![allow(dead_code)]

use std::path::{Path, PathBuf};

use cfinception::bench::BenchmarkKind;
use cfinception::gateway::BackendSet;
use cfinception::runner::{parse_conditions, RunConfig};

pub const CHAT_MODEL: &str = "mini-vlm";

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn mock_responses() -> PathBuf {
    fixtures().join("mock_responses.jsonl")
}

pub fn benchmark_file(kind: BenchmarkKind) -> PathBuf {
    fixtures().join(match kind {
        BenchmarkKind::PopeAdversarial => "mini_pope.jsonl",
        BenchmarkKind::Mmvp => "mini_mmvp.csv",
        BenchmarkKind::LlavaWild => "mini_llava.jsonl",
        BenchmarkKind::Mmhal => "mini_mmhal.jsonl",
    })
}

/// A run over a bundled mini-benchmark with every backend served from the pinned fixtures.
pub fn mock_config(run_id: &str, out: &Path, kind: BenchmarkKind, conditions: &str) -> RunConfig {
    let mut config =
        RunConfig::new(run_id, out, kind, benchmark_file(kind), BackendSet::mock(&mock_responses(), CHAT_MODEL));
    config.conditions = parse_conditions(conditions).unwrap();
    config
}

pub fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}
