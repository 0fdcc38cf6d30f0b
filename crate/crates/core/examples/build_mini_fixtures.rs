//! Regenerates `fixtures/mock_responses.jsonl`.
//!
//! Every bundled mini-benchmark is run through the pipeline against a
//! scripted transport that plays a small, deterministic cast of backends.
//! The response caches those runs leave behind are merged into the fixture
//! file the mock backends read. Re-run after changing any prompt, model id
//! or fixture image:
//!
//! ```text
//! cargo run -p cfinception --example build_mini_fixtures
//! ```

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use cfinception::bench::{load_benchmark, BenchmarkKind, Gold};
use cfinception::gateway::mock::ScriptedTransport;
use cfinception::gateway::{
    read_fixture_file, BackendSet, GatewayStats, ImageRef, Limiter, ResponseCache, TransportError, WireRequest,
};
use cfinception::runner::{execute_with_transport, parse_conditions, RunConfig};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const CHAT_MODEL: &str = "mini-vlm";

/// Image file, factual keywords, five counterfactual sets.
type Scene = (&'static str, &'static [&'static str], [[&'static str; 4]; 5]);

/// Factual keywords and five counterfactual sets per fixture image.
const SCENES: [Scene; 6] = [
    (
        "img01.png",
        &["woman", "umbrella", "street", "rain", "coat"],
        [
            ["man", "parasol", "road", "snow"],
            ["girl", "canopy", "sidewalk", "drizzle"],
            ["lady", "awning", "alley", "mist"],
            ["teenager", "hood", "avenue", "fog"],
            ["mannequin", "raincoat", "lane", "spray"],
        ],
    ),
    (
        "img02.png",
        &["bicycle", "wall", "bench", "brick", "pavement"],
        [
            ["motorcycle", "fence", "sofa", "stone"],
            ["scooter", "gate", "stool", "tile"],
            ["tricycle", "hedge", "chair", "Stone"],
            ["unicycle", "railing", "seat", "cobble"],
            ["e-bike", "barrier", "ledge", "gravel"],
        ],
    ),
    (
        "img03.png",
        &["table", "plate", "fork", "window", "lamp"],
        [
            ["desk", "bowl", "knife", "door"],
            ["counter", "saucer", "spoon", "mirror"],
            ["stand", "tray", "chopsticks", "curtain"],
            ["cabinet", "dish", "ladle", "shutter"],
            ["bench", "platter", "spatula", "blind"],
        ],
    ),
    (
        "img04.png",
        &["boat", "pier", "water", "rope", "sky", "cloud", "buoy", "gull", "harbor"],
        [
            ["ship", "bridge", "river", "chain"],
            ["canoe", "dock", "lake", "cable"],
            ["kayak", "jetty", "pond", "net"],
            ["raft", "wharf", "bay", "cord"],
            ["dinghy", "quay", "lagoon", "line"],
        ],
    ),
    (
        "img05.png",
        &["clock", "wall", "shelf", "book", "vase", "flower", "frame", "lamp"],
        [
            ["watch", "ceiling", "drawer", "magazine"],
            ["timer", "panel", "rack", "notebook"],
            ["compass", "board", "ledge", "journal"],
            ["barometer", "tile", "mantel", "folder"],
            ["gauge", "plaster", "cubby", "binder"],
        ],
    ),
    (
        "img06.png",
        &["cup", "saucer", "spoon", "table", "napkin", "sugar", "coffee", "steam", "cookie"],
        [
            ["mug", "plate", "fork", "desk"],
            ["glass", "coaster", "knife", "counter"],
            ["bowl", "mat", "stirrer", "tray"],
            ["jar", "doily", "ladle", "bench"],
            ["teacup", "placemat", "straw", "shelf"],
        ],
    ),
];

/// Marker the scripted model puts in its hedged, hallucination-prone answers.
const HEDGE: &str = "I think";

fn round4(x: f64) -> f64 {
    (x * 10_000.0).round() / 10_000.0
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Cast {
    /// Image SHA-256 to scene index.
    scene_by_image: HashMap<String, usize>,
    /// Keyword to (iteration, position) of its first appearance.
    slot_by_keyword: HashMap<String, (usize, usize)>,
    /// (image SHA-256, question) to gold answer.
    gold: HashMap<(String, String), Gold>,
}

impl Cast {
    fn new(fixtures: &Path) -> Self {
        let mut scene_by_image = HashMap::new();
        let mut slot_by_keyword = HashMap::new();
        for (idx, (file, _, sets)) in SCENES.iter().enumerate() {
            let bytes = std::fs::read(fixtures.join("images").join(file)).expect("fixture image");
            scene_by_image.insert(sha_hex(&bytes), idx);
            for (i, set) in sets.iter().enumerate() {
                for (p, k) in set.iter().enumerate() {
                    slot_by_keyword.entry(k.to_string()).or_insert((i + 1, p));
                }
            }
        }
        let mut gold = HashMap::new();
        for (file, kind) in BENCHMARKS {
            for s in load_benchmark(&fixtures.join(file), kind).expect("fixture benchmark") {
                let bytes = std::fs::read(s.image_ref.path()).expect("fixture image");
                gold.insert((sha_hex(&bytes), s.question.clone()), s.gold);
            }
        }
        Self { scene_by_image, slot_by_keyword, gold }
    }

    fn respond(&self, req: &WireRequest) -> Result<Value, TransportError> {
        let body = &req.body;
        if req.url.ends_with("/clip_score") {
            let bytes = BASE64
                .decode(body["image"].as_str().unwrap_or_default())
                .map_err(|e| TransportError::Decode(e.to_string()))?;
            let sha = sha_hex(&bytes);
            let scores: Vec<f64> = body["texts"]
                .as_array()
                .into_iter()
                .flatten()
                .map(|t| self.clip(&sha, t.as_str().unwrap_or_default()))
                .collect();
            return Ok(json!({ "scores": scores, "model_id": "scripted-clip" }));
        }
        if req.url.ends_with("/nli") {
            let scores: Vec<Value> = body["pairs"]
                .as_array()
                .into_iter()
                .flatten()
                .map(|pair| {
                    let (e, n, c) = self.nli(pair[1].as_str().unwrap_or_default());
                    json!({ "entailment": e, "neutral": n, "contradiction": c })
                })
                .collect();
            return Ok(json!({ "scores": scores, "model_id": "scripted-nli" }));
        }
        let model = body["model"].as_str().unwrap_or_default();
        let messages = body["messages"].as_array().cloned().unwrap_or_default();
        let first = &messages[0]["content"];
        let (text, image_sha) = match first {
            Value::Array(parts) => {
                let text = parts.iter().find_map(|p| p["text"].as_str()).unwrap_or_default().to_string();
                let sha = parts.iter().find_map(|p| p["image_url"]["url"].as_str()).map(|url| {
                    let b64 = url.split_once(',').map(|(_, b)| b).unwrap_or_default();
                    sha_hex(&BASE64.decode(b64).expect("data url"))
                });
                (text, sha)
            }
            other => (other.as_str().unwrap_or_default().to_string(), None),
        };
        let reply = match model {
            "keyword" => self.keywords(image_sha.as_deref().unwrap_or_default()),
            "judge" => self.judge(&text, messages.len()),
            _ => self.answer(&text, image_sha.as_deref().unwrap_or_default()),
        };
        Ok(json!({
            "model": model,
            "choices": [{ "message": { "role": "assistant", "content": reply } }],
            "usage": { "prompt_tokens": text.len() / 4, "completion_tokens": reply.len() / 4 },
        }))
    }

    /// Rises with the iteration index, so later sets look more like the image.
    fn clip(&self, image_sha: &str, text: &str) -> f64 {
        let offset = self.scene_by_image.get(image_sha).map_or(0.0, |i| 0.005 * *i as f64);
        match self.slot_by_keyword.get(text) {
            Some(&(i, p)) => round4(0.14 + 0.09 * i as f64 + 0.013 * p as f64 + offset),
            None => round4(0.2 + Sha256::digest(text.as_bytes())[0] as f64 / 255.0 * 0.1),
        }
    }

    /// Contradiction falls with the iteration index and drops below 0.9 in the last sets.
    fn nli(&self, hypothesis: &str) -> (f64, f64, f64) {
        let c = match self.slot_by_keyword.get(hypothesis) {
            Some(&(i, p)) => round4(0.985 - 0.018 * i as f64 - 0.006 * p as f64),
            None => 0.93,
        };
        let n = round4((1.0 - c) * 0.7);
        (round4(1.0 - c - n), n, c)
    }

    fn keywords(&self, image_sha: &str) -> String {
        let (_, factual, sets) = SCENES[self.scene_by_image[image_sha]];
        let mut out = format!("Factual Keywords: [{}]\n", factual.join(", "));
        for (i, set) in sets.iter().enumerate() {
            out.push_str(&format!("Counterfactual Keywords {}: [{}]\n", i + 1, set.join(", ")));
        }
        out
    }

    fn answer(&self, prompt: &str, image_sha: &str) -> String {
        let inception = prompt.starts_with("Please use counterfactual keywords");
        let question = match prompt.rsplit_once("Question: ") {
            Some((_, q)) if inception => q.trim(),
            _ => prompt.trim(),
        };
        let gold = self.gold.get(&(image_sha.to_string(), question.to_string()));
        match gold {
            Some(Gold::YesNo { yes }) => match (inception, yes) {
                (true, true) => "Yes, there is.".into(),
                (true, false) => "No, there is not.".into(),
                (false, _) if question.contains("chair") => "It is hard to tell from this angle.".into(),
                (false, _) => "Yes, I can see one.".into(),
            },
            Some(Gold::Option { label, .. }) => {
                if inception && !question.starts_with("Is the sign text visible?") {
                    format!("({label})")
                } else {
                    "(a)".into()
                }
            }
            Some(Gold::Reference { text }) | Some(Gold::ReferenceWithCategory { text, .. }) => {
                if inception {
                    text.clone()
                } else {
                    format!("{HEDGE} {text} There is also a dog sitting nearby.")
                }
            }
            None => "I do not know.".into(),
        }
    }

    fn judge(&self, prompt: &str, n_messages: usize) -> String {
        let hedged = prompt.contains(HEDGE);
        if prompt.contains("[Assistant 2]") {
            if hedged && prompt.contains("moor") && n_messages == 1 {
                return "The second assistant adds an animal that is not there.".into();
            }
            let candidate = if hedged {
                if prompt.contains("moor") {
                    5
                } else {
                    6
                }
            } else {
                7
            };
            return format!(
                "8 {candidate}\nAssistant 2 is close to the reference; hedging and invented objects lower its score."
            );
        }
        if hedged {
            "The response invents a dog that is not among the image contents.\nRating: 2".into()
        } else {
            "The response matches the standard answer without additions.\nRating: 5".into()
        }
    }
}

const BENCHMARKS: [(&str, BenchmarkKind); 4] = [
    ("mini_pope.jsonl", BenchmarkKind::PopeAdversarial),
    ("mini_mmvp.csv", BenchmarkKind::Mmvp),
    ("mini_llava.jsonl", BenchmarkKind::LlavaWild),
    ("mini_mmhal.jsonl", BenchmarkKind::Mmhal),
];

fn main() {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let out_path = fixtures.join("mock_responses.jsonl");
    let work = tempfile::tempdir().expect("tempdir");
    let placeholder = work.path().join("placeholder.jsonl");
    std::fs::write(&placeholder, "").expect("write placeholder");
    let backends = BackendSet::mock(&placeholder, CHAT_MODEL);

    let cast = Arc::new(Cast::new(&fixtures));
    let script = {
        let cast = cast.clone();
        move |req: &WireRequest| cast.respond(req)
    };
    let transport = Arc::new(ScriptedTransport::new(script));

    let runs = [
        ("pope", "baseline,inception,vv_only,lv_only,mixed_factual:0.5:7"),
        ("mmvp", "baseline,inception"),
        ("llava", "baseline,inception"),
        ("mmhal", "baseline,inception"),
    ];
    let mut caches = Vec::new();
    for ((file, kind), (name, conditions)) in BENCHMARKS.into_iter().zip(runs) {
        let mut config = RunConfig::new(name, work.path(), kind, fixtures.join(file), backends.clone());
        config.conditions = parse_conditions(conditions).expect("conditions");
        config.parallelism = 1;
        let manifest = match execute_with_transport(&config, transport.clone()) {
            Ok(m) => m,
            Err(e) => {
                let log = std::fs::read_to_string(config.run_dir().join("manifest.json")).unwrap_or_default();
                panic!("scripted {name} run failed: {e}\n{log}");
            }
        };
        println!("{name}: {:?}, {} backend calls", manifest.status, manifest.traffic.backend_calls);
        caches.push(config.run_dir().join("cache.jsonl"));
    }

    // pinned single calls used by the gateway tests
    let extra = work.path().join("extra.jsonl");
    let built = backends
        .build(
            Arc::new(ResponseCache::persistent(&extra).expect("cache")),
            Arc::new(GatewayStats::default()),
            Arc::new(Limiter::new(1)),
            Some(transport.clone()),
        )
        .expect("backends");
    let woman = built.visual.clip_score(&ImageRef::new(fixtures.join("images/img01.png")), "woman").expect("clip");
    let dog_cat = built.nli.nli("dog", "cat").expect("nli");
    println!("clip(img01, woman) = {woman}; nli(dog, cat) = {dog_cat:?}");
    caches.push(extra);

    let mut merged: BTreeMap<String, Value> = BTreeMap::new();
    for path in caches {
        merged.extend(read_fixture_file(&path).expect("cache file"));
    }
    let mut out = String::new();
    for (fingerprint, response) in &merged {
        out.push_str(
            &serde_json::to_string(&json!({ "fingerprint": fingerprint, "response": response })).expect("json"),
        );
        out.push('\n');
    }
    std::fs::write(&out_path, out).expect("write fixtures");
    println!("wrote {} fixtures to {}", merged.len(), out_path.display());
}
