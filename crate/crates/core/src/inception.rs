//! Counterfactual Inception prompting and its matched baseline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dvp::OptimalKeywords;
use crate::gateway::{ChatMessage, ChatModel, ChatRequest, ChatResponse, GatewayError, ImageRef};

const BUNDLED_TEMPLATE: &str = include_str!("../prompts/inception.txt");
const KEYWORD_SLOT: &str = "{counterfactual_keyword}";
const QUESTION_SLOT: &str = "{question}";

/// Delimiter between keywords in the rendered prompt.
pub const KEYWORD_JOIN: &str = ", ";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum InceptionError {
    #[error("template {template_id} lacks placeholder {placeholder}")]
    Placeholder { template_id: String, placeholder: &'static str },
    #[error("question is empty")]
    EmptyQuestion,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InceptionTemplate {
    pub id: String,
    text: String,
}

impl InceptionTemplate {
    /// The bundled `prompts/inception.txt` template.
    pub fn bundled() -> Self {
        Self { id: "inception".into(), text: BUNDLED_TEMPLATE.into() }
    }

    pub fn from_text(id: impl Into<String>, text: impl Into<String>) -> Result<Self, InceptionError> {
        let t = Self { id: id.into(), text: text.into() };
        for placeholder in [KEYWORD_SLOT, QUESTION_SLOT] {
            if !t.text.contains(placeholder) {
                return Err(InceptionError::Placeholder { template_id: t.id, placeholder });
            }
        }
        Ok(t)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Substitutes both slots in one left-to-right pass, so placeholder-like
    /// text inside the keywords or question is never expanded again.
    pub fn render(&self, keywords: &[String], question: &str) -> Result<InceptionPrompt, InceptionError> {
        if question.trim().is_empty() {
            return Err(InceptionError::EmptyQuestion);
        }
        let joined = keywords.join(KEYWORD_JOIN);
        let mut rendered = String::with_capacity(self.text.len() + joined.len() + question.len());
        let (mut seen_keywords, mut seen_question) = (false, false);
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find('{') {
            rendered.push_str(&rest[..open]);
            let tail = &rest[open..];
            if let Some(after) = tail.strip_prefix(KEYWORD_SLOT) {
                rendered.push_str(&joined);
                seen_keywords = true;
                rest = after;
            } else if let Some(after) = tail.strip_prefix(QUESTION_SLOT) {
                rendered.push_str(question);
                seen_question = true;
                rest = after;
            } else {
                rendered.push('{');
                rest = &tail[1..];
            }
        }
        rendered.push_str(rest);
        for (seen, placeholder) in [(seen_keywords, KEYWORD_SLOT), (seen_question, QUESTION_SLOT)] {
            if !seen {
                return Err(InceptionError::Placeholder { template_id: self.id.clone(), placeholder });
            }
        }
        Ok(InceptionPrompt {
            template_id: self.id.clone(),
            counterfactual_keywords: keywords.to_vec(),
            question: question.to_string(),
            rendered,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InceptionPrompt {
    pub template_id: String,
    pub counterfactual_keywords: Vec<String>,
    pub question: String,
    pub rendered: String,
}

/// Renders the bundled template.
pub fn build_inception_prompt(keywords: &[String], question: &str) -> Result<InceptionPrompt, InceptionError> {
    InceptionTemplate::bundled().render(keywords, question)
}

/// Decoding settings shared by baseline and inception calls. Temperature is
/// always 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceSettings {
    pub model_id: String,
    pub max_tokens: u32,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl InferenceSettings {
    pub const TEMPERATURE: f64 = 0.0;
    pub const GENERATIVE_MAX_TOKENS: u32 = 512;
    pub const DISCRIMINATIVE_MAX_TOKENS: u32 = 64;

    pub fn new(model_id: impl Into<String>, max_tokens: u32) -> Self {
        Self { model_id: model_id.into(), max_tokens, seed: None }
    }

    fn request(&self, text: String, image: &ImageRef) -> ChatRequest {
        ChatRequest {
            model_id: self.model_id.clone(),
            messages: vec![ChatMessage::user_with_image(text, image.clone())],
            temperature: Self::TEMPERATURE,
            max_tokens: self.max_tokens,
            seed: self.seed,
        }
    }
}

pub fn baseline_request(image: &ImageRef, question: &str, settings: &InferenceSettings) -> ChatRequest {
    settings.request(question.to_string(), image)
}

/// Bare question on fallback, the rendered inception prompt otherwise.
pub fn inception_request(
    template: &InceptionTemplate,
    image: &ImageRef,
    question: &str,
    keywords: &OptimalKeywords,
    settings: &InferenceSettings,
) -> Result<ChatRequest, InceptionError> {
    if question.trim().is_empty() {
        return Err(InceptionError::EmptyQuestion);
    }
    if keywords.fallback_used || keywords.keywords.is_empty() {
        return Ok(baseline_request(image, question, settings));
    }
    let prompt = template.render(&keywords.keywords, question)?;
    Ok(settings.request(prompt.rendered, image))
}

pub fn infer(
    chat: &dyn ChatModel,
    image: &ImageRef,
    question: &str,
    keywords: &OptimalKeywords,
    settings: &InferenceSettings,
) -> Result<ChatResponse, InceptionError> {
    let req = inception_request(&InceptionTemplate::bundled(), image, question, keywords, settings)?;
    Ok(chat.chat(&req)?)
}

pub fn infer_baseline(
    chat: &dyn ChatModel,
    image: &ImageRef,
    question: &str,
    settings: &InferenceSettings,
) -> Result<ChatResponse, InceptionError> {
    if question.trim().is_empty() {
        return Err(InceptionError::EmptyQuestion);
    }
    Ok(chat.chat(&baseline_request(image, question, settings))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::TokenCounts;
    use std::sync::Mutex;

    fn kw(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn renders_keywords_and_question() {
        let p = build_inception_prompt(&kw(&["woman", "bus"]), "Describe the image.").unwrap();
        assert!(p.rendered.contains("Counterfactual keywords: woman, bus\n"));
        assert!(p.rendered.contains("Question: Describe the image."));
        assert!(!p.rendered.contains('{') && !p.rendered.contains('}'));
        assert_eq!(
            p.rendered,
            BUNDLED_TEMPLATE.replace(KEYWORD_SLOT, "woman, bus").replace(QUESTION_SLOT, "Describe the image.")
        );
    }

    #[test]
    fn empty_keyword_slot() {
        let p = build_inception_prompt(&[], "Q?").unwrap();
        assert!(p.rendered.contains("Counterfactual keywords: \n"));
    }

    #[test]
    fn single_pass_substitution() {
        let p = build_inception_prompt(&kw(&["{question}"]), "What is {counterfactual_keyword}?").unwrap();
        assert!(p.rendered.contains("Counterfactual keywords: {question}\n"));
        assert!(p.rendered.contains("Question: What is {counterfactual_keyword}?"));
    }

    #[test]
    fn template_missing_placeholder() {
        let err = InceptionTemplate::from_text("t", "Keywords: {counterfactual_keyword}").unwrap_err();
        assert_eq!(err, InceptionError::Placeholder { template_id: "t".into(), placeholder: QUESTION_SLOT });
        assert!(InceptionTemplate::from_text("t", "{question}").is_err());
    }

    #[test]
    fn empty_question_rejected() {
        assert_eq!(build_inception_prompt(&kw(&["a"]), "  ").unwrap_err(), InceptionError::EmptyQuestion);
    }

    #[test]
    fn rendering_is_injective_on_distinct_inputs() {
        let a = build_inception_prompt(&kw(&["a", "b"]), "q").unwrap();
        let b = build_inception_prompt(&kw(&["a"]), "q").unwrap();
        let c = build_inception_prompt(&kw(&["a", "b"]), "r").unwrap();
        assert_ne!(a.rendered, b.rendered);
        assert_ne!(a.rendered, c.rendered);
    }

    struct Recorder(Mutex<Vec<ChatRequest>>);

    impl ChatModel for Recorder {
        fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
            self.0.lock().unwrap().push(req.clone());
            Ok(ChatResponse {
                text: "ok".into(),
                backend_id: "r".into(),
                token_counts: TokenCounts::default(),
                cached: false,
            })
        }
    }

    #[test]
    fn fallback_sends_bare_question() {
        let rec = Recorder(Mutex::new(Vec::new()));
        let img = ImageRef::new("x.png");
        let settings = InferenceSettings::new("m", 64);
        infer(&rec, &img, "Is there a cat?", &OptimalKeywords::fallback(), &settings).unwrap();
        assert_eq!(rec.0.lock().unwrap()[0].prompt_text(), "Is there a cat?");
    }

    #[test]
    fn inception_and_baseline_differ_only_in_text() {
        let rec = Recorder(Mutex::new(Vec::new()));
        let img = ImageRef::new("x.png");
        let settings = InferenceSettings::new("m", 512);
        let ks = OptimalKeywords { keywords: kw(&["dog"]), provenance: vec![], fallback_used: false };
        infer(&rec, &img, "Describe.", &ks, &settings).unwrap();
        infer_baseline(&rec, &img, "Describe.", &settings).unwrap();
        let seen = rec.0.lock().unwrap();
        assert_eq!(seen[0].prompt_text(), build_inception_prompt(&kw(&["dog"]), "Describe.").unwrap().rendered);
        assert_eq!(seen[1].prompt_text(), "Describe.");
        for r in seen.iter() {
            assert_eq!((r.model_id.as_str(), r.temperature, r.max_tokens), ("m", 0.0, 512));
            assert_eq!(r.image(), Some(&img));
        }
    }
}
