//! HTTP-JSON transport for live model endpoints.
//!
//! Each request is a `POST {endpoint}/{op}` with body
//!
//! ```json
//! { "op": "inpaint",
//!   "images": [{ "kind": "rgb" | "mask", "content_hash": "…", "png_base64": "…" }],
//!   "text": "…" | null,
//!   "params": { … },
//!   "seed": 0 }
//! ```
//!
//! and the response body is the op-specific JSON object documented on
//! [`super::ModelClient`]'s methods (`{"text"}`, `{"png_base64"}`,
//! `{"detections"}`, `{"vector"}`, `{"verdict"}`, `{"positions"}`).

use std::time::Duration;

use serde_json::Value;

use super::{ClientConfig, ClientError, Request, Transport};

const MAX_RESPONSE_BYTES: u64 = 512 * 1024 * 1024;

pub struct HttpTransport {
    agent: ureq::Agent,
    config: ClientConfig,
}

impl HttpTransport {
    pub fn new(config: ClientConfig) -> Result<Self, ClientError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { agent, config })
    }

    fn url(&self, req: &Request) -> String {
        format!("{}/{}", self.config.endpoint.trim_end_matches('/'), req.op.as_str())
    }

    fn attempt(&self, url: &str, body: &Value) -> Result<Value, (bool, String)> {
        let mut call = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = call.send_json(body).map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        if status >= 400 {
            let retryable = status >= 500 || status == 429;
            return Err((retryable, format!("HTTP {status}")));
        }
        resp.body_mut()
            .with_config()
            .limit(MAX_RESPONSE_BYTES)
            .read_json::<Value>()
            .map_err(|e| (false, format!("response body: {e}")))
    }
}

impl Transport for HttpTransport {
    fn call(&self, req: &Request) -> Result<Value, ClientError> {
        let url = self.url(req);
        let body = req.to_wire();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&url, &body) {
                Ok(v) => return Ok(v),
                Err((retryable, message)) => {
                    if !retryable || attempts > self.config.retries {
                        tracing::warn!(%url, attempts, %message, "request failed");
                        return Err(ClientError::Transport { attempts, message });
                    }
                    std::thread::sleep(Duration::from_millis(50 * u64::from(attempts)));
                }
            }
        }
    }
}
