//! Digest-authenticating HTTP client for one controller connection.

use std::time::Duration;

use reqwest::header::{AUTHORIZATION, CONTENT_TYPE, WWW_AUTHENTICATE};
use reqwest::{Method, StatusCode};
use serde::Serialize;
use tokio::sync::Mutex;

use crate::wire::{DigestCredentials, DigestSession, ErrorMsg, ProtocolError, WireMessage};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("controller answered {status}: {}", body.message)]
    Rejected { status: u16, body: ErrorMsg },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

impl ClientError {
    /// Errors worth retrying with backoff; auth and protocol errors are not.
    pub fn is_transient(&self) -> bool {
        match self {
            Self::Transport(_) => true,
            Self::Rejected { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

/// One HTTP connection pool plus its own digest nonce state.
///
/// Each polling loop owns a separate client so nonce counters never
/// interleave between streams.
pub struct RwsClient {
    http: reqwest::Client,
    base: String,
    session: Mutex<DigestSession>,
}

impl RwsClient {
    pub fn new(base_url: &str, creds: DigestCredentials, seed: u64) -> Result<Self, ClientError> {
        let http = reqwest::Client::builder()
            .no_proxy()
            .timeout(Duration::from_secs(5))
            .pool_max_idle_per_host(2)
            .tcp_nodelay(true)
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(Self {
            http,
            base: base_url.trim_end_matches('/').to_string(),
            session: Mutex::new(DigestSession::new(creds, seed)),
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub async fn get<M: WireMessage>(&self, uri: &str) -> Result<M, ClientError> {
        let body = self.send(Method::GET, uri, None).await?;
        Ok(M::decode(&body)?)
    }

    /// GET returning an arbitrary JSON document.
    pub async fn get_json<T: serde::de::DeserializeOwned>(&self, uri: &str) -> Result<T, ClientError> {
        let body = self.send(Method::GET, uri, None).await?;
        serde_json::from_slice(&body).map_err(|e| ClientError::Protocol(e.into()))
    }

    pub async fn post<B: Serialize>(&self, uri: &str, body: Option<&B>) -> Result<(), ClientError> {
        let bytes = body
            .map(|b| serde_json::to_vec(b).expect("request bodies serialise"))
            .unwrap_or_default();
        self.send(Method::POST, uri, Some(bytes)).await.map(|_| ())
    }

    async fn send(&self, method: Method, uri: &str, body: Option<Vec<u8>>) -> Result<Vec<u8>, ClientError> {
        let mut session = self.session.lock().await;
        let mut challenged = false;
        for _ in 0..4 {
            let auth = session.authorization(method.as_str(), uri)?;
            let mut req = self.http.request(method.clone(), format!("{}{uri}", self.base));
            if let Some(a) = auth {
                req = req.header(AUTHORIZATION, a);
            }
            if let Some(b) = &body {
                req = req.header(CONTENT_TYPE, "application/json").body(b.clone());
            }
            let resp = req
                .send()
                .await
                .map_err(|e| ClientError::Transport(e.to_string()))?;
            let status = resp.status();
            if status == StatusCode::UNAUTHORIZED {
                let header = resp
                    .headers()
                    .get(WWW_AUTHENTICATE)
                    .and_then(|h| h.to_str().ok())
                    .map(str::to_string);
                let stale = header.as_deref().is_some_and(|h| h.contains("stale=true"));
                // A fresh challenge is answered once; a second 401 on a
                // non-stale nonce means the credentials are wrong.
                if challenged && !stale {
                    session.forget_challenge();
                    return Err(ClientError::Auth("credentials rejected".into()));
                }
                let Some(h) = header else {
                    return Err(ClientError::Auth("401 without challenge".into()));
                };
                session.accept_challenge(&h)?;
                challenged = true;
                continue;
            }
            let bytes = resp
                .bytes()
                .await
                .map_err(|e| ClientError::Transport(e.to_string()))?
                .to_vec();
            if !status.is_success() {
                let body = serde_json::from_slice(&bytes).unwrap_or_else(|_| {
                    ErrorMsg::new("http", String::from_utf8_lossy(&bytes).into_owned())
                });
                return Err(ClientError::Rejected {
                    status: status.as_u16(),
                    body,
                });
            }
            return Ok(bytes);
        }
        Err(ClientError::Auth("controller keeps rejecting fresh nonces".into()))
    }
}
