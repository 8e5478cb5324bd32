//! MLLM judge over a chat-completions style endpoint.
//!
//! One request per verdict: a single user message whose content is the
//! rendered prompt followed by the left image and then the right image, both
//! inlined as base64 data URLs. Throttling (429, 5xx, transport errors) is
//! retried with exponential backoff; unparseable replies are re-asked up to
//! `max_retries` times and then recorded as C.

use std::collections::BTreeMap;
use std::time::Duration;

use base64::Engine as _;
use serde::Deserialize;
use serde_json::json;

use super::{parse_choice, Judge, JudgeConfig, ParsedChoice, PromptTemplate, Verdict};
use crate::error::{Error, Result};
use crate::model::{Choice, Corpus, ImageKey};
use crate::tournament::PairingPlan;

pub const ENDPOINT_ENV: &str = "STREETSAFE_MLLM_ENDPOINT";

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub request_id: Option<String>,
}

pub struct MllmClient {
    agent: ureq::Agent,
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    api_key: Option<String>,
    pub max_retries: u32,
    pub backoff_base: Duration,
}

#[derive(Deserialize)]
struct ChatResponse {
    id: Option<String>,
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

pub(crate) fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

fn is_retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

fn retry_after(resp: &ureq::http::Response<ureq::Body>) -> Option<Duration> {
    resp.headers()
        .get("retry-after")?
        .to_str()
        .ok()?
        .trim()
        .parse::<u64>()
        .ok()
        .map(Duration::from_secs)
}

pub(crate) fn request_id(resp: &ureq::http::Response<ureq::Body>) -> Option<String> {
    resp.headers()
        .get("x-request-id")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
}

impl MllmClient {
    /// Endpoint comes from the config, else from `STREETSAFE_MLLM_ENDPOINT`.
    /// The bearer token is read from the variable named by `api_key_env`;
    /// when unset, requests go out unauthenticated.
    pub fn from_config(cfg: &JudgeConfig) -> Result<Self> {
        cfg.validate()?;
        let endpoint = cfg
            .endpoint
            .clone()
            .or_else(|| std::env::var(ENDPOINT_ENV).ok())
            .filter(|e| !e.trim().is_empty())
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "no MLLM endpoint configured: pass --endpoint, set judge.endpoint in the config file, or export {ENDPOINT_ENV} (credential is read from {})",
                    cfg.api_key_env
                ))
            })?;
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!("{} is not set; sending unauthenticated requests", cfg.api_key_env);
        }
        Ok(MllmClient {
            agent: agent(Duration::from_secs(cfg.timeout_secs)),
            endpoint,
            model: cfg.model.clone(),
            temperature: cfg.temperature,
            api_key,
            max_retries: cfg.max_retries,
            backoff_base: cfg.backoff_base(),
        })
    }

    pub fn request_body(&self, prompt: &str, left: &[u8], right: &[u8]) -> serde_json::Value {
        json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": prompt},
                    {"type": "image_url", "image_url": {"url": data_url(left)}},
                    {"type": "image_url", "image_url": {"url": data_url(right)}},
                ],
            }],
        })
    }

    /// Sends one chat request, backing off on throttling.
    pub fn complete(&self, prompt: &str, left: &[u8], right: &[u8]) -> Result<Completion> {
        let body = self.request_body(prompt, left, right);
        let mut attempt = 0u32;
        loop {
            let mut req = self.agent.post(&self.endpoint).header("content-type", "application/json");
            if let Some(key) = &self.api_key {
                req = req.header("authorization", format!("Bearer {key}"));
            }
            let (retry_in, err) = match req.send_json(&body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let rid = request_id(&resp);
                    if resp.status().is_success() {
                        let parsed: ChatResponse = resp.body_mut().read_json().map_err(|e| Error::Endpoint {
                            message: format!("malformed chat response: {e}"),
                            request_id: rid.clone(),
                        })?;
                        let request_id = rid.or(parsed.id);
                        let text = parsed
                            .choices
                            .into_iter()
                            .next()
                            .and_then(|c| c.message.content)
                            .unwrap_or_default();
                        return Ok(Completion { text, request_id });
                    }
                    let hint = retry_after(&resp);
                    let detail = resp.body_mut().read_to_string().unwrap_or_default();
                    let err = Error::Endpoint {
                        message: format!("HTTP {status} from {}: {}", self.endpoint, detail.trim()),
                        request_id: rid,
                    };
                    if !is_retryable(status) {
                        return Err(err);
                    }
                    (hint, err)
                }
                Err(e) => (
                    None,
                    Error::Endpoint {
                        message: format!("request to {} failed: {e}", self.endpoint),
                        request_id: None,
                    },
                ),
            };
            if attempt >= self.max_retries {
                return Err(err);
            }
            let backoff = self.backoff_base * 2u32.saturating_pow(attempt);
            let wait = retry_in.map_or(backoff, |h| h.max(backoff));
            log::warn!("{err}; retrying in {wait:?}");
            std::thread::sleep(wait);
            attempt += 1;
        }
    }
}

fn sniff_mime(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        "image/png"
    } else if bytes.starts_with(&[0xff, 0xd8, 0xff]) {
        "image/jpeg"
    } else if bytes.starts_with(b"RIFF") && bytes.get(8..12) == Some(b"WEBP") {
        "image/webp"
    } else {
        "application/octet-stream"
    }
}

pub fn data_url(bytes: &[u8]) -> String {
    format!(
        "data:{};base64,{}",
        sniff_mime(bytes),
        base64::engine::general_purpose::STANDARD.encode(bytes)
    )
}

/// Reads an image reference: an `http(s)://` URL, a `file://` URL or a path.
pub fn load_image(image_ref: &str) -> Result<Vec<u8>> {
    if image_ref.starts_with("http://") || image_ref.starts_with("https://") {
        let mut resp = agent(Duration::from_secs(60))
            .get(image_ref)
            .call()
            .map_err(|e| Error::Endpoint { message: format!("fetching {image_ref}: {e}"), request_id: None })?;
        if !resp.status().is_success() {
            return Err(Error::Endpoint {
                message: format!("fetching {image_ref}: HTTP {}", resp.status()),
                request_id: request_id(&resp),
            });
        }
        return resp
            .body_mut()
            .with_config()
            .limit(64 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| Error::Endpoint { message: format!("reading {image_ref}: {e}"), request_id: None });
    }
    let path = image_ref.strip_prefix("file://").unwrap_or(image_ref);
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Asks the model about one pair, re-asking on unparseable replies.
pub fn mllm_verdict(client: &MllmClient, prompt: &PromptTemplate, left: &[u8], right: &[u8]) -> Result<Verdict> {
    let text = prompt.render();
    let mut last = String::new();
    for attempt in 0..=client.max_retries {
        let reply = client.complete(&text, left, right)?;
        match parse_choice(&reply.text) {
            ParsedChoice::Choice(choice) => {
                return Ok(Verdict { choice, rationale: Some(reply.text), parse_failed: false });
            }
            ParsedChoice::ParseFailure => {
                log::warn!(
                    "unparseable reply (attempt {}, request {:?}): {:?}",
                    attempt + 1,
                    reply.request_id,
                    reply.text
                );
                last = reply.text;
            }
        }
    }
    Ok(Verdict { choice: Choice::Uncomparable, rationale: Some(last), parse_failed: true })
}

pub struct MllmJudge {
    judge_id: String,
    client: MllmClient,
    prompt: PromptTemplate,
    images: BTreeMap<ImageKey, String>,
}

impl MllmJudge {
    pub fn new(judge_id: impl Into<String>, client: MllmClient, prompt: PromptTemplate, corpus: &Corpus) -> Self {
        let images = corpus.records().iter().map(|r| (r.key(), r.image_ref.clone())).collect();
        MllmJudge { judge_id: judge_id.into(), client, prompt, images }
    }

    fn image(&self, key: &ImageKey) -> Result<Vec<u8>> {
        let r = self.images.get(key).ok_or_else(|| Error::UnknownKey(key.to_string()))?;
        load_image(r)
    }
}

impl Judge for MllmJudge {
    fn judge_id(&self) -> &str {
        &self.judge_id
    }

    fn model(&self) -> Option<&str> {
        Some(&self.client.model)
    }

    fn prepare(&self, plan: &PairingPlan) -> Result<()> {
        match plan.keys().into_iter().find(|k| !self.images.contains_key(k)) {
            Some(k) => Err(Error::UnknownKey(format!("{k} is not in the manifest"))),
            None => Ok(()),
        }
    }

    fn verdict(&self, left: &ImageKey, right: &ImageKey) -> Result<Verdict> {
        let (l, r) = (self.image(left)?, self.image(right)?);
        mllm_verdict(&self.client, &self.prompt, &l, &r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_urls_sniff_type() {
        assert!(data_url(&[0x89, b'P', b'N', b'G', 1]).starts_with("data:image/png;base64,"));
        assert!(data_url(&[0xff, 0xd8, 0xff, 0]).starts_with("data:image/jpeg;base64,"));
        assert_eq!(data_url(b"hi"), "data:application/octet-stream;base64,aGk=");
    }

    #[test]
    fn missing_endpoint_names_env_vars() {
        std::env::remove_var(ENDPOINT_ENV);
        let err = MllmClient::from_config(&JudgeConfig::default()).err().unwrap().to_string();
        assert!(err.contains(ENDPOINT_ENV), "{err}");
        assert!(err.contains("STREETSAFE_API_KEY"), "{err}");
    }

    #[test]
    fn request_body_shape() {
        let cfg = JudgeConfig { endpoint: Some("http://127.0.0.1:9/v1".into()), ..JudgeConfig::default() };
        let c = MllmClient::from_config(&cfg).unwrap();
        let body = c.request_body("Q", b"L", b"R");
        assert_eq!(body["temperature"], 0.05);
        let parts = body["messages"][0]["content"].as_array().unwrap();
        assert_eq!(parts.len(), 3);
        assert_eq!(parts[0]["text"], "Q");
        assert!(parts[1]["image_url"]["url"].as_str().unwrap().ends_with("TA=="));
        assert!(parts[2]["image_url"]["url"].as_str().unwrap().ends_with("Ug=="));
    }

    #[test]
    fn unreachable_endpoint_errors_after_retries() {
        let cfg = JudgeConfig {
            endpoint: Some("http://127.0.0.1:9/v1".into()),
            backoff_base_ms: 1,
            ..JudgeConfig::default()
        };
        let c = MllmClient::from_config(&cfg).unwrap();
        assert!(matches!(c.complete("q", b"", b""), Err(Error::Endpoint { .. })));
    }

    #[test]
    fn local_images_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        std::fs::write(&p, b"bytes").unwrap();
        assert_eq!(load_image(p.to_str().unwrap()).unwrap(), b"bytes");
        assert_eq!(load_image(&format!("file://{}", p.display())).unwrap(), b"bytes");
        assert!(load_image("/definitely/missing.png").is_err());
    }
}
