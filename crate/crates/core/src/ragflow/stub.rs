//! Deterministic stand-ins for a real model.

use super::{CompletionRequest, Letter, LlmProvider};
use crate::provider::ProviderError;
use crate::textnorm::Normalizer;

/// Always answers the same letter.
#[derive(Debug, Clone, Copy)]
pub struct FixedLetterLlm(pub Letter);

impl LlmProvider for FixedLetterLlm {
    fn id(&self) -> &str {
        "fixed-letter"
    }

    fn complete(&self, _: &CompletionRequest<'_>) -> Result<String, ProviderError> {
        Ok(self.0.to_string())
    }
}

/// Answers the first option whose normalized text occurs, on word
/// boundaries, in the best-ranked context that contains any option. Falls
/// back to the first option letter.
#[derive(Debug, Clone, Default)]
pub struct EchoLlm {
    normalizer: Normalizer,
}

impl EchoLlm {
    pub fn new(normalizer: Normalizer) -> Self {
        Self { normalizer }
    }
}

impl LlmProvider for EchoLlm {
    fn id(&self) -> &str {
        "echo"
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ProviderError> {
        let bundle = request.bundle;
        let options: Vec<(Letter, String)> = bundle
            .options
            .iter()
            .map(|(l, t)| (*l, format!(" {} ", self.normalizer.normalize_light(t).as_str())))
            .filter(|(_, t)| !t.trim().is_empty())
            .collect();
        for ctx in bundle.contexts.iter().flatten() {
            let text = format!(" {} ", self.normalizer.normalize_light(&ctx.text).as_str());
            if let Some((l, _)) = options.iter().find(|(_, t)| text.contains(t.as_str())) {
                return Ok(l.to_string());
            }
        }
        bundle
            .options
            .keys()
            .next()
            .map(|l| l.to_string())
            .ok_or_else(|| ProviderError::Other("question has no options".into()))
    }
}
