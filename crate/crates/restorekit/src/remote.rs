//! HTTP clients for model servers: restoration tools on `/restore/{tool}`
//! and the three agents on `/agent/*`.
//!
//! Every call retries timeouts, connection failures, 429 and 5xx with
//! exponential backoff up to the configured attempt limit. Other 4xx
//! answers are final.

use std::time::Duration;

use base64::Engine as _;
use reqwest::blocking::{Client, RequestBuilder, Response};
use reqwest::StatusCode;
use restorekit_core::agents::{
    backend_error, templates, AgentError, FastBackend, FeedbackBackend, IdentifyBackend, PromptClassification,
};
use restorekit_core::tools::{Family, RestorationTool, ToolError};
use restorekit_core::{ContentHash, DistortionKind, ImageState, ToolId};
use serde::{Deserialize, Serialize};

use crate::config::RemoteConfig;
use crate::png_io;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RemoteError {
    #[error("no base_url configured")]
    NotConfigured,
    #[error("timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("HTTP {status} after {attempts} attempt(s)")]
    Status { status: u16, attempts: u32 },
    #[error("after {attempts} attempt(s): {message}")]
    Protocol { message: String, attempts: u32 },
}

impl RemoteError {
    fn into_tool(self, tool: ToolId) -> ToolError {
        match self {
            RemoteError::NotConfigured => ToolError::Unavailable { tool, reason: "no remote base_url".into() },
            RemoteError::Timeout { attempts } => ToolError::Timeout { tool, attempts },
            RemoteError::Status { status, attempts } => ToolError::Status { tool, status, attempts },
            RemoteError::Protocol { message, attempts } => ToolError::Protocol { tool, message, attempts },
        }
    }
}

/// A successful call and how many attempts it took.
#[derive(Debug)]
pub struct Answer {
    pub status: StatusCode,
    pub body: Vec<u8>,
    pub attempts: u32,
}

#[derive(Debug, Clone)]
pub struct HttpRetry {
    client: Client,
    base: String,
    max_attempts: u32,
    backoff: Duration,
}

impl HttpRetry {
    pub fn new(cfg: &RemoteConfig) -> Result<Self, RemoteError> {
        let base = cfg.base_url.clone().ok_or(RemoteError::NotConfigured)?;
        let client = Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .pool_max_idle_per_host(8)
            .build()
            .map_err(|e| RemoteError::Protocol { message: e.to_string(), attempts: 0 })?;
        Ok(HttpRetry {
            client,
            base: base.trim_end_matches('/').to_string(),
            max_attempts: cfg.max_attempts.max(1),
            backoff: Duration::from_millis(cfg.backoff_ms),
        })
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    /// POSTs to `path`, rebuilding the request for every attempt.
    pub fn post(&self, path: &str, build: impl Fn(RequestBuilder) -> RequestBuilder) -> Result<Answer, RemoteError> {
        let url = format!("{}{path}", self.base);
        let mut last = RemoteError::Protocol { message: "no attempt made".into(), attempts: 0 };
        for attempt in 1..=self.max_attempts {
            if attempt > 1 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 2));
            }
            match build(self.client.post(&url)).send() {
                Ok(resp) => match classify(resp, attempt) {
                    Ok(answer) => return Ok(answer),
                    Err((e, retry)) => {
                        last = e;
                        if !retry {
                            return Err(last);
                        }
                    }
                },
                Err(e) if e.is_timeout() => last = RemoteError::Timeout { attempts: attempt },
                Err(e) => last = RemoteError::Protocol { message: e.to_string(), attempts: attempt },
            }
            log::debug!("POST {url}: attempt {attempt}/{} failed: {last}", self.max_attempts);
        }
        Err(last)
    }

    pub fn post_json<Q: Serialize, A: for<'de> Deserialize<'de>>(&self, path: &str, body: &Q) -> Result<(A, u32), RemoteError> {
        let answer = self.post(path, |b| b.json(body))?;
        let parsed = serde_json::from_slice(&answer.body)
            .map_err(|e| RemoteError::Protocol { message: format!("bad JSON answer: {e}"), attempts: answer.attempts })?;
        Ok((parsed, answer.attempts))
    }
}

fn classify(resp: Response, attempt: u32) -> Result<Answer, (RemoteError, bool)> {
    let status = resp.status();
    if status.is_success() {
        return match resp.bytes() {
            Ok(body) => Ok(Answer { status, body: body.to_vec(), attempts: attempt }),
            Err(e) if e.is_timeout() => Err((RemoteError::Timeout { attempts: attempt }, true)),
            Err(e) => Err((RemoteError::Protocol { message: e.to_string(), attempts: attempt }, true)),
        };
    }
    let retry = status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS;
    Err((RemoteError::Status { status: status.as_u16(), attempts: attempt }, retry))
}

/// A restoration tool served at `POST {base}/restore/{tool}`, PNG in and
/// PNG out. The output carries no provenance.
#[derive(Debug, Clone)]
pub struct RemoteTool {
    id: ToolId,
    http: HttpRetry,
}

impl RemoteTool {
    pub fn new(id: ToolId, http: HttpRetry) -> Self {
        RemoteTool { id, http }
    }

    /// The restored image and the attempts it took.
    pub fn call(&self, image: &ImageState) -> Result<(ImageState, u32), ToolError> {
        let tool = self.id;
        let png = png_io::encode(&image.raster).map_err(|e| ToolError::Protocol { tool, message: e.to_string(), attempts: 0 })?;
        let answer = self
            .http
            .post(&format!("/restore/{tool}"), |b| b.header("content-type", "image/png").body(png.clone()))
            .map_err(|e| e.into_tool(tool))?;
        let attempts = answer.attempts;
        let raster = png_io::decode(&answer.body).map_err(|e| ToolError::Protocol { tool, message: e.to_string(), attempts })?;
        if raster.dims() != image.raster.dims() {
            return Err(ToolError::DimensionMismatch { tool, expected: image.raster.dims(), got: raster.dims() });
        }
        let out = ImageState::new(raster).map_err(|e| ToolError::Protocol { tool, message: e.to_string(), attempts })?;
        Ok((out, attempts))
    }
}

impl RestorationTool for RemoteTool {
    fn id(&self) -> ToolId {
        self.id
    }

    fn family(&self) -> Family {
        Family::Remote
    }

    fn invoke(&self, image: &ImageState) -> Result<ImageState, ToolError> {
        self.call(image).map(|(img, _)| img)
    }
}

fn png_b64(image: &ImageState) -> Result<String, AgentError> {
    let png = png_io::encode(&image.raster).map_err(|e| backend_error("remote", e))?;
    Ok(base64::engine::general_purpose::STANDARD.encode(png))
}

#[derive(Debug, Serialize)]
struct FastRequest<'a> {
    prompt: &'a str,
}

#[derive(Debug, Deserialize)]
struct FastAnswer {
    outcome: String,
    #[serde(default)]
    tool: Option<String>,
    #[serde(default)]
    confidence: Option<f64>,
}

/// `POST /agent/fast {prompt}` → `{outcome, tool?, confidence}`.
#[derive(Debug, Clone)]
pub struct RemoteFast {
    http: HttpRetry,
    threshold: f64,
}

impl RemoteFast {
    pub fn new(http: HttpRetry, threshold: f64) -> Self {
        RemoteFast { http, threshold }
    }
}

impl FastBackend for RemoteFast {
    fn name(&self) -> &str {
        "remote"
    }

    fn classify(&self, prompt: &str) -> Result<PromptClassification, AgentError> {
        let (a, _): (FastAnswer, u32) =
            self.http.post_json("/agent/fast", &FastRequest { prompt }).map_err(|e| backend_error("remote", e))?;
        let confidence = a.confidence.unwrap_or(1.0).clamp(0.0, 1.0);
        match (a.outcome.as_str(), a.tool.as_deref()) {
            ("direct", Some(t)) => {
                let tool: ToolId = t.trim().parse().map_err(|_| backend_error("remote", format!("unknown tool `{t}`")))?;
                if confidence < self.threshold {
                    Ok(PromptClassification::ambiguous(confidence, format!("{tool} below confidence threshold {}", self.threshold)))
                } else {
                    Ok(PromptClassification::direct(tool, confidence, "remote"))
                }
            }
            ("ambiguous", _) => Ok(PromptClassification::ambiguous(confidence, "remote")),
            (other, _) => Err(backend_error("remote", format!("unusable answer outcome `{other}`"))),
        }
    }
}

#[derive(Debug, Serialize)]
struct SlowRequest<'a> {
    image_ref: &'a ContentHash,
    image_png: String,
    sample: u32,
}

#[derive(Debug, Deserialize)]
struct SlowAnswer {
    kind: DistortionKind,
}

/// `POST /agent/slow {image_ref, image_png, sample}` → `{kind}`.
#[derive(Debug, Clone)]
pub struct RemoteIdentify {
    http: HttpRetry,
}

impl RemoteIdentify {
    pub fn new(http: HttpRetry) -> Self {
        RemoteIdentify { http }
    }
}

impl IdentifyBackend for RemoteIdentify {
    fn name(&self) -> &str {
        "remote"
    }

    fn sample(&self, image: &ImageState, image_ref: &ContentHash, sample: u32) -> Result<DistortionKind, AgentError> {
        let req = SlowRequest { image_ref, image_png: png_b64(image)?, sample };
        let (a, _): (SlowAnswer, u32) = self.http.post_json("/agent/slow", &req).map_err(|e| backend_error("remote", e))?;
        if !a.kind.is_user_facing() {
            return Err(backend_error("remote", format!("{} is not a user-facing kind", a.kind)));
        }
        Ok(a.kind)
    }
}

#[derive(Debug, Serialize)]
struct FeedbackRequest<'a> {
    image_ref: &'a ContentHash,
    image_png: String,
    history: &'a [ToolId],
    /// The instruction exactly as the model was tuned on it.
    text: String,
}

#[derive(Debug, Deserialize)]
struct FeedbackAnswer {
    clean: bool,
}

/// `POST /agent/feedback {image_ref, image_png, history, text}` → `{clean}`.
#[derive(Debug, Clone)]
pub struct RemoteFeedback {
    http: HttpRetry,
}

impl RemoteFeedback {
    pub fn new(http: HttpRetry) -> Self {
        RemoteFeedback { http }
    }
}

impl FeedbackBackend for RemoteFeedback {
    fn name(&self) -> &str {
        "remote"
    }

    fn assess(&self, image: &ImageState, image_ref: &ContentHash, history: &[ToolId]) -> Result<bool, AgentError> {
        let req = FeedbackRequest { image_ref, image_png: png_b64(image)?, history, text: templates::feedback_user(history) };
        let (a, _): (FeedbackAnswer, u32) =
            self.http.post_json("/agent/feedback", &req).map_err(|e| backend_error("remote", e))?;
        Ok(a.clean)
    }
}
