//! Comparison prompts derived from the manual instruction.

use crate::error::{Error, Result};
use crate::llm::{ChatMessage, LlmRequest};
use crate::prompt::{extract_delimited, MetaPrompts, PromptOrigin, PromptText};
use crate::reranker::RerankSettings;
use crate::llm::LlmClient;

pub const COT_SUFFIX: &str = "Let's think step by step";

pub fn make_cot(manual: &PromptText) -> Result<PromptText> {
    if manual.text.trim().is_empty() {
        return Err(Error::validation("manual prompt is empty"));
    }
    if manual.text.trim_end().ends_with(COT_SUFFIX) {
        log::warn!("prompt {} already ends with the step-by-step suffix; appending again", manual.label);
    }
    Ok(PromptText {
        text: format!("{}\n{COT_SUFFIX}", manual.text),
        label: "cot".into(),
        origin: PromptOrigin::Cot,
    })
}

pub fn make_paraphrase(
    client: &LlmClient,
    settings: &RerankSettings,
    meta: &MetaPrompts,
    manual: &PromptText,
) -> Result<PromptText> {
    let user = meta.paraphrase.fill(&[("prompt", &manual.text)])?;
    let request = |text: String| {
        LlmRequest::new(settings.model.clone(), vec![ChatMessage::user(text)])
            .with_temperature(settings.temperature)
            .with_max_output_tokens(settings.max_output_tokens)
    };
    let first = client.complete(&request(user.clone()))?;
    let text = match extract_delimited(&first.text) {
        Some(t) => t,
        None => {
            let second = client.complete(&request(format!("{user}\n\n(attempt 2)")))?;
            extract_delimited(&second.text)
                .ok_or_else(|| Error::Protocol("paraphrase answer had no delimited prompt after a retry".into()))?
        }
    };
    Ok(PromptText {
        text,
        label: "paraphrase".into(),
        origin: PromptOrigin::Paraphrase,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedBackend;
    use crate::prompt::manual_prompt;
    use std::sync::Arc;

    #[test]
    fn cot_suffix() {
        let m = PromptText::new("Rank the passages.", "manual", PromptOrigin::Manual).unwrap();
        let c = make_cot(&m).unwrap();
        assert_eq!(c.text, "Rank the passages.\nLet's think step by step");
        assert!(c.text.starts_with(&m.text));
        assert_eq!(make_cot(&c).unwrap().text.matches(COT_SUFFIX).count(), 2);
        let empty = PromptText {
            text: " ".into(),
            label: "x".into(),
            origin: PromptOrigin::User,
        };
        assert!(make_cot(&empty).is_err());
    }

    #[test]
    fn paraphrase_retries_once() {
        let backend = Arc::new(ScriptedBackend::new(vec!["sure!".into(), "<PROMPT>Order them.</PROMPT>".into()]));
        let client = LlmClient::new(backend.clone());
        let p = make_paraphrase(&client, &RerankSettings::new("m"), &MetaPrompts::default(), &manual_prompt()).unwrap();
        assert_eq!(p.text, "Order them.");
        assert_eq!(p.origin, PromptOrigin::Paraphrase);
        assert_eq!(backend.calls(), 2);

        let client = LlmClient::new(Arc::new(ScriptedBackend::fixed("nope")));
        assert!(make_paraphrase(&client, &RerankSettings::new("m"), &MetaPrompts::default(), &manual_prompt()).is_err());
    }
}
