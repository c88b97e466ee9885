use std::time::Duration;

use serde_json::Value;

pub struct HttpRequest<'a> {
    pub url: String,
    pub body: &'a Value,
    pub api_key: Option<&'a str>,
    pub timeout: Duration,
}

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

impl HttpResponse {
    pub fn ok(body: impl Into<String>) -> Self {
        HttpResponse {
            status: 200,
            body: body.into(),
        }
    }

    pub fn status(status: u16, body: impl Into<String>) -> Self {
        HttpResponse {
            status,
            body: body.into(),
        }
    }
}

/// Sends one JSON POST. `Err` means no HTTP response was received at all.
pub trait Transport: Send + Sync {
    fn post(&self, req: &HttpRequest<'_>) -> Result<HttpResponse, String>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| e.to_string())?;
        Ok(HttpTransport { client })
    }
}

impl Transport for HttpTransport {
    fn post(&self, req: &HttpRequest<'_>) -> Result<HttpResponse, String> {
        let mut builder = self
            .client
            .post(&req.url)
            .timeout(req.timeout)
            .json(req.body);
        if let Some(key) = req.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder.send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}
