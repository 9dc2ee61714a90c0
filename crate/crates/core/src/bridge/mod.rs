//! Scoring external language models: persona prompts, an option log-likelihood
//! wire protocol, and renormalization over the answer options.

mod prompt;
mod transport;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::distribution::OptionDistribution;
use crate::effects::{causal_effect, CausalEffectVector};
use crate::error::{Error, Result};
use crate::model::ResponseModel;
use crate::par::ordered_map;
use crate::survey::{AttributeSchema, EditContext, Persona, Question};

pub use prompt::*;
pub use transport::*;

const EXCERPT_LEN: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("endpoint returned status {status}: {excerpt}")]
    Status { status: u16, excerpt: String },

    #[error("malformed response ({reason}): {excerpt}")]
    MalformedResponse { reason: String, excerpt: String },

    #[error("no recorded fixture for request: {excerpt}")]
    MissingFixture { excerpt: String },

    #[error("fixture file: {0}")]
    Fixture(String),

    #[error("prompt template: {0}")]
    Template(String),
}

/// First characters of a payload, for error messages.
pub(crate) fn excerpt(bytes: &[u8]) -> String {
    let text = String::from_utf8_lossy(bytes);
    match text.char_indices().nth(EXCERPT_LEN) {
        Some((i, _)) => format!("{}...", &text[..i]),
        None => text.into_owned(),
    }
}

/// Summed log-likelihood of one option's verbalization (1-based option number).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionScore {
    pub option: usize,
    pub log_likelihood: f64,
}

/// Softmax of option log-likelihoods restricted to the listed options.
pub fn renormalize(scores: &[OptionScore]) -> Result<OptionDistribution> {
    let logits: Vec<f64> = scores.iter().map(|s| s.log_likelihood).collect();
    OptionDistribution::softmax(&logits)
}

/// Anything that returns `ln p(continuation | prompt)` for each continuation.
pub trait ScoringEndpoint: Send + Sync {
    fn score(&self, prompt: &str, continuations: &[String]) -> Result<Vec<f64>, BridgeError>;
}

impl<E: ScoringEndpoint + ?Sized> ScoringEndpoint for &E {
    fn score(&self, prompt: &str, continuations: &[String]) -> Result<Vec<f64>, BridgeError> {
        (**self).score(prompt, continuations)
    }
}

impl<E: ScoringEndpoint + ?Sized> ScoringEndpoint for Box<E> {
    fn score(&self, prompt: &str, continuations: &[String]) -> Result<Vec<f64>, BridgeError> {
        (**self).score(prompt, continuations)
    }
}

#[derive(Serialize)]
pub struct ScoreRequest<'a> {
    pub prompt: &'a str,
    pub continuations: &'a [String],
}

#[derive(Serialize, Deserialize)]
pub struct ScoreResponse {
    pub log_likelihoods: Vec<f64>,
}

/// Encodes a request body exactly as it goes on the wire.
pub fn encode_request(prompt: &str, continuations: &[String]) -> Vec<u8> {
    serde_json::to_vec(&ScoreRequest { prompt, continuations }).expect("request serializes")
}

/// The JSON scoring protocol over any transport.
pub struct WireEndpoint<T> {
    transport: T,
}

impl<T: Transport> WireEndpoint<T> {
    pub fn new(transport: T) -> Self {
        Self { transport }
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }
}

impl<T: Transport> ScoringEndpoint for WireEndpoint<T> {
    fn score(&self, prompt: &str, continuations: &[String]) -> Result<Vec<f64>, BridgeError> {
        let response = self.transport.post(&encode_request(prompt, continuations))?;
        let parsed: ScoreResponse = serde_json::from_slice(&response)
            .map_err(|e| BridgeError::MalformedResponse { reason: e.to_string(), excerpt: excerpt(&response) })?;
        if parsed.log_likelihoods.len() != continuations.len() {
            return Err(BridgeError::MalformedResponse {
                reason: format!(
                    "expected {} log-likelihoods, got {}",
                    continuations.len(),
                    parsed.log_likelihoods.len()
                ),
                excerpt: excerpt(&response),
            });
        }
        Ok(parsed.log_likelihoods)
    }
}

/// One scoring call for a prompt and its option verbalizations.
pub fn score_options<E: ScoringEndpoint + ?Sized>(
    endpoint: &E,
    prompt: &str,
    option_verbalizations: &[String],
) -> Result<Vec<OptionScore>> {
    let values = endpoint.score(prompt, option_verbalizations)?;
    if values.len() != option_verbalizations.len() {
        return Err(Error::LengthMismatch { expected: option_verbalizations.len(), actual: values.len() });
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(BridgeError::MalformedResponse { reason: format!("non-finite log-likelihood {v}"), excerpt: String::new() }.into());
    }
    Ok(values.into_iter().enumerate().map(|(i, log_likelihood)| OptionScore { option: i + 1, log_likelihood }).collect())
}

/// Persona-conditioned answer distribution from one scoring call.
pub fn predict_with<E: ScoringEndpoint + ?Sized>(
    endpoint: &E,
    template: &PromptTemplate,
    schema: &AttributeSchema,
    persona: &Persona,
    question: &Question,
) -> Result<OptionDistribution> {
    let prompt = template.render(schema, persona, question)?;
    renormalize(&score_options(endpoint, &prompt, &template.continuations(question))?)
}

/// Model-side effect of an edit: exactly two scoring calls, one per endpoint.
pub fn model_effect_probe<E: ScoringEndpoint + ?Sized>(
    endpoint: &E,
    template: &PromptTemplate,
    schema: &AttributeSchema,
    context: &EditContext,
    question: &Question,
) -> Result<CausalEffectVector> {
    if question.id != context.question_id {
        return Err(Error::invalid(format!(
            "question `{}` does not match edit question `{}`",
            question.id, context.question_id
        )));
    }
    let (s1, s0) = context.endpoints();
    let p1 = predict_with(endpoint, template, schema, &s1, question)?;
    let p0 = predict_with(endpoint, template, schema, &s0, question)?;
    causal_effect(&p1, &p0)
}

/// Probes many edits with at most `max_in_flight` concurrent edits; results
/// keep the order of `contexts`.
pub fn probe_contexts<E: ScoringEndpoint + ?Sized>(
    endpoint: &E,
    template: &PromptTemplate,
    schema: &AttributeSchema,
    questions: &[Question],
    contexts: &[EditContext],
    max_in_flight: usize,
) -> Result<Vec<CausalEffectVector>> {
    let by_id: BTreeMap<&str, &Question> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
    ordered_map(contexts, max_in_flight, |ctx| {
        let q = by_id.get(ctx.question_id.as_str()).ok_or_else(|| Error::UnknownQuestion(ctx.question_id.clone()))?;
        model_effect_probe(endpoint, template, schema, ctx, q)
    })
    .into_iter()
    .collect()
}

/// A remote language model viewed as a [`ResponseModel`].
pub struct BridgeModel<E> {
    endpoint: E,
    template: PromptTemplate,
    schema: AttributeSchema,
    questions: BTreeMap<String, Question>,
}

impl<E: ScoringEndpoint> BridgeModel<E> {
    pub fn new(endpoint: E, template: PromptTemplate, schema: AttributeSchema, questions: &[Question]) -> Result<Self> {
        template.validate(&schema)?;
        Ok(Self {
            endpoint,
            template,
            schema,
            questions: questions.iter().map(|q| (q.id.clone(), q.clone())).collect(),
        })
    }

    pub fn endpoint(&self) -> &E {
        &self.endpoint
    }
}

impl<E: ScoringEndpoint> ResponseModel for BridgeModel<E> {
    fn predict(&self, persona: &Persona, question_id: &str) -> Result<OptionDistribution> {
        let q = self.questions.get(question_id).ok_or_else(|| Error::UnknownQuestion(question_id.to_string()))?;
        predict_with(&self.endpoint, &self.template, &self.schema, persona, q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(v: &[f64]) -> Vec<OptionScore> {
        v.iter().enumerate().map(|(i, &l)| OptionScore { option: i + 1, log_likelihood: l }).collect()
    }

    #[test]
    fn renormalize_examples() {
        let u = renormalize(&scores(&[0.0, 0.0, 0.0])).unwrap();
        for p in u.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let d = renormalize(&scores(&[2f64.ln(), 0.0])).unwrap();
        assert!((d.probs()[0] - 2.0 / 3.0).abs() < 1e-15);
        let d = renormalize(&scores(&[0.7f64.ln(), 0.3f64.ln()])).unwrap();
        assert!((d.probs()[0] - 0.7).abs() < 1e-15);
        assert!(renormalize(&scores(&[f64::NEG_INFINITY, f64::NEG_INFINITY])).is_err());
    }

    struct Canned(&'static str);

    impl Transport for Canned {
        fn post(&self, _: &[u8]) -> Result<Vec<u8>, BridgeError> {
            Ok(self.0.as_bytes().to_vec())
        }
    }

    #[test]
    fn malformed_responses_carry_an_excerpt() {
        let c = vec!["1".to_string(), "2".to_string()];
        let e = WireEndpoint::new(Canned("{\"nope\": 1}")).score("p", &c).unwrap_err();
        assert!(matches!(e, BridgeError::MalformedResponse { ref excerpt, .. } if excerpt.contains("nope")));
        let e = WireEndpoint::new(Canned("{\"log_likelihoods\": [0.0]}")).score("p", &c).unwrap_err();
        assert!(matches!(e, BridgeError::MalformedResponse { .. }));
    }

    #[test]
    fn request_encoding_is_stable() {
        assert_eq!(
            encode_request("hi \"x\"", &["1. A".to_string()]),
            br#"{"prompt":"hi \"x\"","continuations":["1. A"]}"#.to_vec()
        );
    }
}
