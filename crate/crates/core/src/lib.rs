//! Counterfactual keyword prompting for vision-language chat models.
//!
//! The pipeline generates factual and iterated counterfactual keywords for an
//! image ([`keywordgen`]), keeps the candidates that pass visual and
//! linguistic verification ([`dvp`]), injects the survivors into the
//! inference prompt ([`inception`]), and scores the results on hallucination
//! benchmarks ([`bench`]). [`runner`] orchestrates whole experiments over the
//! model backends in [`gateway`], persisting every stage with [`store`].

pub mod bench;
pub mod dvp;
pub mod gateway;
pub mod inception;
pub mod keywordgen;
pub mod runner;
pub mod store;
