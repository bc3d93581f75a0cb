use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, LlmConfig};
use crate::error::{Error, Result};
use crate::http::{JsonClient, RetryPolicy};

/// OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone)]
pub struct RemoteChat {
    client: JsonClient,
    url: String,
}

impl RemoteChat {
    /// `base_url` is the API root; requests go to `{base_url}/chat/completions`.
    pub fn new(base_url: &str, api_key: Option<String>, retry: RetryPolicy) -> Self {
        Self {
            client: JsonClient::new(retry, Duration::from_secs(300)).with_bearer(api_key),
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
        }
    }

    pub fn request_body(config: &LlmConfig, prompt: &str) -> Value {
        let mut body = json!({
            "model": config.model_id,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": config.temperature,
            "top_p": config.top_p,
            "max_tokens": config.max_tokens,
        });
        if let Some(seed) = config.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

impl ChatBackend for RemoteChat {
    fn tag(&self) -> String {
        format!("remote:{}", self.url)
    }

    fn chat(&self, config: &LlmConfig, prompt: &str) -> Result<String> {
        let resp = self
            .client
            .post(&self.url, &Self::request_body(config, prompt))
            .map_err(|e| Error::Backend(format!("{} ({}): {e}", config.model_id, config.role)))?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                Error::Backend(format!(
                    "{}: response lacks choices[0].message.content",
                    config.model_id
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::Role;

    #[test]
    fn wire_body_carries_config() {
        let b = RemoteChat::request_body(&LlmConfig::defaults(Role::Generator), "hi");
        assert_eq!(b["model"], "gpt-3.5-turbo-0125");
        assert_eq!(b["messages"][0]["role"], "user");
        assert_eq!(b["messages"][0]["content"], "hi");
        assert_eq!(b["temperature"], 0.7);
        assert_eq!(b["max_tokens"], 4096);
        assert_eq!(b["seed"], 0);
        let b = RemoteChat::request_body(&LlmConfig::defaults(Role::Explainer), "hi");
        assert!(b.get("seed").is_none());
    }
}
