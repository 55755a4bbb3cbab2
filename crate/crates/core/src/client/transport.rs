//! How a client reaches the collection server.
//!
//! [`Transport`] is the request boundary: the HTTP implementation talks to a
//! real server, and wrappers (the simulator's connectivity schedule, fault
//! injection) decorate it.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use chrono::Utc;
use reqwest::multipart::{Form, Part};
use reqwest::StatusCode;
use thiserror::Error;

use crate::protocol::wire::{AudioPayload, EngineResponse, IngestReceipt, ResponseDocument, SampleUpload};
use crate::protocol::{LocalConfigStatus, PhoneHash};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("no connectivity")]
    Offline,
    #[error("request timed out")]
    Timeout,
    #[error("acknowledgment lost in transit")]
    AckLost,
    #[error("network error: {0}")]
    Network(String),
    #[error("server answered {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response: {0}")]
    Decode(String),
}

impl TransportError {
    /// 4xx answers other than 404/408/429 mean the server will never accept
    /// the request as sent.
    pub fn is_permanent(&self) -> bool {
        matches!(self, Self::Status { status, .. }
            if (400..500).contains(status) && ![404, 408, 429].contains(status))
    }
}

impl From<reqwest::Error> for TransportError {
    fn from(e: reqwest::Error) -> Self {
        if e.is_timeout() {
            Self::Timeout
        } else if e.is_decode() {
            Self::Decode(e.to_string())
        } else {
            Self::Network(e.to_string())
        }
    }
}

#[async_trait]
pub trait Transport: Send + Sync {
    async fn fetch_config(&self, number: u32) -> Result<Vec<u8>, TransportError>;

    async fn send_sample(
        &self,
        upload: &SampleUpload,
        audio: Option<&AudioPayload>,
    ) -> Result<IngestReceipt, TransportError>;

    async fn send_status(&self, hash: &PhoneHash, status: &LocalConfigStatus) -> Result<(), TransportError>;

    async fn fetch_response(&self, hash: &PhoneHash) -> Result<Option<EngineResponse>, TransportError>;
}

#[async_trait]
impl Transport for Arc<dyn Transport> {
    async fn fetch_config(&self, number: u32) -> Result<Vec<u8>, TransportError> {
        (**self).fetch_config(number).await
    }

    async fn send_sample(
        &self,
        upload: &SampleUpload,
        audio: Option<&AudioPayload>,
    ) -> Result<IngestReceipt, TransportError> {
        (**self).send_sample(upload, audio).await
    }

    async fn send_status(&self, hash: &PhoneHash, status: &LocalConfigStatus) -> Result<(), TransportError> {
        (**self).send_status(hash, status).await
    }

    async fn fetch_response(&self, hash: &PhoneHash) -> Result<Option<EngineResponse>, TransportError> {
        (**self).fetch_response(hash).await
    }
}

/// Multipart body shared by `POST /samples` and remote engines.
pub fn sample_form(upload: &SampleUpload, audio: Option<&AudioPayload>) -> Result<Form, reqwest::Error> {
    let meta = serde_json::to_string(upload).expect("sample metadata serializes");
    let mut form = Form::new().part("metadata", Part::text(meta).mime_str("application/json")?);
    if let Some(audio) = audio {
        let part = Part::bytes(audio.bytes.clone())
            .file_name(format!("{}.{}", upload.sample_id, audio.extension()))
            .mime_str(&audio.media_type)?;
        form = form.part("audio", part);
    }
    Ok(form)
}

#[derive(Debug, Clone)]
pub struct HttpTransport {
    base: String,
    http: reqwest::Client,
}

impl HttpTransport {
    pub fn new(base_url: &str) -> Self {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .expect("http client builds");
        Self::with_client(base_url, http)
    }

    pub fn with_client(base_url: &str, http: reqwest::Client) -> Self {
        Self {
            base: crate::protocol::base_url(base_url),
            http,
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }
}

async fn check(resp: reqwest::Response) -> Result<reqwest::Response, TransportError> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let body = resp.text().await.unwrap_or_default();
    Err(TransportError::Status {
        status: status.as_u16(),
        body,
    })
}

#[async_trait]
impl Transport for HttpTransport {
    async fn fetch_config(&self, number: u32) -> Result<Vec<u8>, TransportError> {
        let resp = self.http.get(self.url(&format!("/config/{number}"))).send().await?;
        Ok(check(resp).await?.bytes().await?.to_vec())
    }

    async fn send_sample(
        &self,
        upload: &SampleUpload,
        audio: Option<&AudioPayload>,
    ) -> Result<IngestReceipt, TransportError> {
        let form = sample_form(upload, audio)?;
        let resp = self.http.post(self.url("/samples")).multipart(form).send().await?;
        Ok(check(resp).await?.json().await?)
    }

    async fn send_status(&self, hash: &PhoneHash, status: &LocalConfigStatus) -> Result<(), TransportError> {
        let resp = self
            .http
            .post(self.url(&format!("/status/{hash}")))
            .json(status)
            .send()
            .await?;
        check(resp).await.map(|_| ())
    }

    async fn fetch_response(&self, hash: &PhoneHash) -> Result<Option<EngineResponse>, TransportError> {
        let resp = self.http.get(self.url(&format!("/response/{hash}"))).send().await?;
        if resp.status() == StatusCode::NOT_FOUND {
            return Ok(None);
        }
        let doc: ResponseDocument = check(resp).await?.json().await?;
        let audio = match &doc.audio_url {
            Some(url) => {
                let url = if url.starts_with('/') { self.url(url) } else { url.clone() };
                let resp = check(self.http.get(url).send().await?).await?;
                let media_type = resp
                    .headers()
                    .get(reqwest::header::CONTENT_TYPE)
                    .and_then(|v| v.to_str().ok())
                    .unwrap_or("application/octet-stream")
                    .to_owned();
                Some(AudioPayload::new(media_type, resp.bytes().await?.to_vec()))
            }
            None => None,
        };
        if doc.text.is_none() && audio.is_none() {
            return Ok(None);
        }
        Ok(Some(EngineResponse {
            phone_hash: *hash,
            text: doc.text,
            audio,
            produced_at: Utc::now(),
        }))
    }
}
