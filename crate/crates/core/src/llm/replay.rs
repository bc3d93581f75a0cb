use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use super::{ChatBackend, ChatExchange, LlmConfig, Role};
use crate::error::{Error, Result};

/// Serves responses recorded in an audit log. Repeated prompts are answered
/// in their recorded order.
#[derive(Debug)]
pub struct ReplayBackend {
    responses: Mutex<HashMap<(Role, String), VecDeque<String>>>,
}

impl ReplayBackend {
    pub fn new(exchanges: impl IntoIterator<Item = ChatExchange>) -> Self {
        let mut responses: HashMap<(Role, String), VecDeque<String>> = HashMap::new();
        for ex in exchanges {
            responses
                .entry((ex.role, ex.prompt))
                .or_default()
                .push_back(ex.response);
        }
        Self {
            responses: Mutex::new(responses),
        }
    }
}

impl ChatBackend for ReplayBackend {
    fn tag(&self) -> String {
        "replay".into()
    }

    fn chat(&self, config: &LlmConfig, prompt: &str) -> Result<String> {
        let mut map = self.responses.lock().expect("replay state poisoned");
        let key = (config.role, prompt.to_string());
        let queue = map.get_mut(&key).ok_or_else(|| {
            Error::Backend(format!(
                "no recorded {} response for prompt {}",
                config.role,
                super::exchange_id(config.role, prompt)
            ))
        })?;
        // Keep the last response so a replayed run may re-ask a prompt.
        if queue.len() > 1 {
            Ok(queue.pop_front().expect("non-empty"))
        } else {
            queue
                .front()
                .cloned()
                .ok_or_else(|| Error::Backend("replay queue exhausted".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{complete, MockEvaluator};

    #[test]
    fn replays_recorded_responses() {
        let cfg = LlmConfig::defaults(Role::Evaluator);
        let ex = complete(&MockEvaluator, &cfg, "anything").unwrap();
        let replay = ReplayBackend::new(vec![ex.clone()]);
        assert_eq!(replay.chat(&cfg, "anything").unwrap(), ex.response);
        assert_eq!(replay.chat(&cfg, "anything").unwrap(), ex.response);
        assert!(replay.chat(&cfg, "other").is_err());
        let explainer = LlmConfig::defaults(Role::Explainer);
        assert!(replay.chat(&explainer, "anything").is_err());
    }
}
