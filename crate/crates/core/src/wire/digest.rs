//! HTTP digest access authentication (MD5, `qop=auth`).
//!
//! Server side: [`DigestVerifier`] issues nonces and checks `Authorization`
//! headers, tracking the highest nonce-count seen per nonce so replays fail.
//! Client side: [`DigestSession`] caches the last challenge and signs each
//! request with an increasing nonce-count.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use md5::{Digest, Md5};
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ProtocolError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DigestCredentials {
    pub username: String,
    pub password: String,
    pub realm: String,
    /// Seconds a nonce stays valid after it is issued.
    pub nonce_lifetime_s: u64,
}

impl Default for DigestCredentials {
    fn default() -> Self {
        Self {
            username: "Default User".into(),
            password: "robotics".into(),
            realm: "validusers@robapi.abb".into(),
            nonce_lifetime_s: 300,
        }
    }
}

fn md5_hex(input: &str) -> String {
    hex::encode(Md5::digest(input.as_bytes()))
}

/// `H(A1)` for the MD5 algorithm.
pub fn ha1(username: &str, realm: &str, password: &str) -> String {
    md5_hex(&format!("{username}:{realm}:{password}"))
}

/// Request digest. With `qop` absent this is the legacy two-part form.
pub fn response_hash(
    ha1: &str,
    nonce: &str,
    method: &str,
    uri: &str,
    qop: Option<(&str, &str, &str)>,
) -> String {
    let ha2 = md5_hex(&format!("{method}:{uri}"));
    match qop {
        Some((nc, cnonce, qop)) => md5_hex(&format!("{ha1}:{nonce}:{nc}:{cnonce}:{qop}:{ha2}")),
        None => md5_hex(&format!("{ha1}:{nonce}:{ha2}")),
    }
}

/// Splits `Digest k=v, k="v"` into its parameters. Keys are lowercased.
fn parse_params(header: &str) -> Result<HashMap<String, String>, ProtocolError> {
    let malformed = |column: usize, message: &str| ProtocolError::Malformed {
        line: 1,
        column,
        message: message.to_string(),
    };
    let trimmed = header.trim_start();
    let offset = header.len() - trimmed.len();
    let (scheme, rest) = trimmed
        .split_once(char::is_whitespace)
        .unwrap_or((trimmed, ""));
    if !scheme.eq_ignore_ascii_case("digest") {
        return Err(ProtocolError::Unsupported(format!(
            "authentication scheme `{scheme}`"
        )));
    }
    let base = offset + scheme.len();
    let chars: Vec<(usize, char)> = rest.char_indices().collect();
    let mut params = HashMap::new();
    let mut i = 0;
    while i < chars.len() {
        while i < chars.len() && (chars[i].1.is_whitespace() || chars[i].1 == ',') {
            i += 1;
        }
        if i >= chars.len() {
            break;
        }
        let key_start = i;
        while i < chars.len() && (chars[i].1.is_ascii_alphanumeric() || chars[i].1 == '-' || chars[i].1 == '_') {
            i += 1;
        }
        let col = |idx: usize| base + chars.get(idx).map_or(rest.len(), |c| c.0) + 1;
        if i == key_start {
            return Err(malformed(col(i), "expected parameter name"));
        }
        let key: String = chars[key_start..i].iter().map(|c| c.1).collect();
        while i < chars.len() && chars[i].1.is_whitespace() {
            i += 1;
        }
        if i >= chars.len() || chars[i].1 != '=' {
            return Err(malformed(col(i), "expected `=`"));
        }
        i += 1;
        while i < chars.len() && chars[i].1.is_whitespace() {
            i += 1;
        }
        let mut value = String::new();
        if i < chars.len() && chars[i].1 == '"' {
            i += 1;
            loop {
                match chars.get(i) {
                    None => return Err(malformed(col(i), "unterminated quoted string")),
                    Some((_, '"')) => {
                        i += 1;
                        break;
                    }
                    Some((_, '\\')) => {
                        let (_, c) = *chars
                            .get(i + 1)
                            .ok_or_else(|| malformed(col(i), "dangling escape"))?;
                        value.push(c);
                        i += 2;
                    }
                    Some((_, c)) => {
                        value.push(*c);
                        i += 1;
                    }
                }
            }
        } else {
            while i < chars.len() && chars[i].1 != ',' && !chars[i].1.is_whitespace() {
                value.push(chars[i].1);
                i += 1;
            }
        }
        params.insert(key.to_ascii_lowercase(), value);
    }
    Ok(params)
}

fn quote(v: &str) -> String {
    format!("\"{}\"", v.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Parsed `WWW-Authenticate` challenge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Challenge {
    pub realm: String,
    pub nonce: String,
    pub opaque: Option<String>,
    pub qop: Option<String>,
    pub algorithm: Option<String>,
    pub stale: bool,
}

impl Challenge {
    pub fn parse(header: &str) -> Result<Self, ProtocolError> {
        let mut p = parse_params(header)?;
        let mut take = |k: &str| p.remove(k);
        let realm = take("realm").ok_or_else(|| ProtocolError::MissingField("realm".into()))?;
        let nonce = take("nonce").ok_or_else(|| ProtocolError::MissingField("nonce".into()))?;
        Ok(Self {
            realm,
            nonce,
            opaque: take("opaque"),
            qop: take("qop"),
            algorithm: take("algorithm"),
            stale: take("stale").is_some_and(|s| s.eq_ignore_ascii_case("true")),
        })
    }

    pub fn to_header(&self) -> String {
        let mut s = format!("Digest realm={}", quote(&self.realm));
        if let Some(q) = &self.qop {
            let _ = write!(s, ", qop={}", quote(q));
        }
        let _ = write!(s, ", nonce={}", quote(&self.nonce));
        if let Some(o) = &self.opaque {
            let _ = write!(s, ", opaque={}", quote(o));
        }
        if let Some(a) = &self.algorithm {
            let _ = write!(s, ", algorithm={a}");
        }
        if self.stale {
            s.push_str(", stale=true");
        }
        s
    }
}

/// Parsed `Authorization: Digest ...` header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigestAuthorization {
    pub username: String,
    pub realm: String,
    pub nonce: String,
    pub uri: String,
    pub response: String,
    pub algorithm: Option<String>,
    pub qop: Option<String>,
    pub nc: Option<String>,
    pub cnonce: Option<String>,
    pub opaque: Option<String>,
}

impl DigestAuthorization {
    pub fn parse(header: &str) -> Result<Self, ProtocolError> {
        let mut p = parse_params(header)?;
        let mut req = |k: &str| p.remove(k).ok_or_else(|| ProtocolError::MissingField(k.into()));
        let username = req("username")?;
        let realm = req("realm")?;
        let nonce = req("nonce")?;
        let uri = req("uri")?;
        let response = req("response")?;
        Ok(Self {
            username,
            realm,
            nonce,
            uri,
            response,
            algorithm: p.remove("algorithm"),
            qop: p.remove("qop"),
            nc: p.remove("nc"),
            cnonce: p.remove("cnonce"),
            opaque: p.remove("opaque"),
        })
    }

    pub fn to_header(&self) -> String {
        let mut s = format!(
            "Digest username={}, realm={}, nonce={}, uri={}",
            quote(&self.username),
            quote(&self.realm),
            quote(&self.nonce),
            quote(&self.uri)
        );
        if let Some(a) = &self.algorithm {
            let _ = write!(s, ", algorithm={a}");
        }
        if let Some(q) = &self.qop {
            let _ = write!(s, ", qop={q}");
        }
        if let Some(nc) = &self.nc {
            let _ = write!(s, ", nc={nc}");
        }
        if let Some(c) = &self.cnonce {
            let _ = write!(s, ", cnonce={}", quote(c));
        }
        let _ = write!(s, ", response={}", quote(&self.response));
        if let Some(o) = &self.opaque {
            let _ = write!(s, ", opaque={}", quote(o));
        }
        s
    }
}

/// Builds the `Authorization` header value answering `challenge`.
///
/// Deterministic for a given `cnonce` and nonce-count.
pub fn digest_client_sign(
    method: &str,
    uri: &str,
    challenge: &Challenge,
    creds: &DigestCredentials,
    cnonce: &str,
    nc: u32,
) -> Result<String, ProtocolError> {
    if let Some(alg) = &challenge.algorithm {
        if !alg.eq_ignore_ascii_case("md5") {
            return Err(ProtocolError::Unsupported(format!("algorithm `{alg}`")));
        }
    }
    let qop = match &challenge.qop {
        None => None,
        Some(list) => {
            if list.split(',').map(str::trim).any(|q| q == "auth") {
                Some("auth")
            } else {
                return Err(ProtocolError::Unsupported(format!("qop `{list}`")));
            }
        }
    };
    let ha1 = ha1(&creds.username, &challenge.realm, &creds.password);
    let nc_str = format!("{nc:08x}");
    let response = response_hash(
        &ha1,
        &challenge.nonce,
        method,
        uri,
        qop.map(|q| (nc_str.as_str(), cnonce, q)),
    );
    Ok(DigestAuthorization {
        username: creds.username.clone(),
        realm: challenge.realm.clone(),
        nonce: challenge.nonce.clone(),
        uri: uri.to_string(),
        response,
        algorithm: challenge.algorithm.clone(),
        qop: qop.map(str::to_string),
        nc: qop.map(|_| nc_str.clone()),
        cnonce: qop.map(|_| cnonce.to_string()),
        opaque: challenge.opaque.clone(),
    }
    .to_header())
}

/// Why a request failed authentication. Every variant maps to HTTP 401.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuthFailure {
    #[error("authorization required")]
    Missing,
    #[error("malformed authorization: {0}")]
    Malformed(String),
    #[error("invalid credentials")]
    WrongCredentials,
    #[error("stale nonce")]
    Stale,
    #[error("replayed nonce count")]
    Replay,
}

impl AuthFailure {
    /// Whether the fresh challenge should carry `stale=true`.
    pub fn is_stale(&self) -> bool {
        matches!(self, Self::Stale)
    }
}

struct NonceEntry {
    issued: Instant,
    last_nc: u32,
}

struct VerifierState {
    nonces: HashMap<String, NonceEntry>,
    rng: ChaCha8Rng,
}

/// Server-side nonce table and header check. Safe to share between handlers.
pub struct DigestVerifier {
    creds: DigestCredentials,
    lifetime: Duration,
    opaque: String,
    state: Mutex<VerifierState>,
}

impl DigestVerifier {
    pub fn new(creds: DigestCredentials, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let opaque = hex::encode(rng.random::<[u8; 8]>());
        Self {
            lifetime: Duration::from_secs(creds.nonce_lifetime_s),
            creds,
            opaque,
            state: Mutex::new(VerifierState {
                nonces: HashMap::new(),
                rng,
            }),
        }
    }

    pub fn with_lifetime(mut self, lifetime: Duration) -> Self {
        self.lifetime = lifetime;
        self
    }

    pub fn realm(&self) -> &str {
        &self.creds.realm
    }

    pub fn challenge(&self, stale: bool) -> Challenge {
        self.challenge_at(Instant::now(), stale)
    }

    pub fn challenge_at(&self, now: Instant, stale: bool) -> Challenge {
        let mut st = self.state.lock();
        let lifetime = self.lifetime;
        st.nonces
            .retain(|_, e| now.saturating_duration_since(e.issued) <= lifetime * 2);
        let nonce = hex::encode(st.rng.random::<[u8; 16]>());
        st.nonces.insert(
            nonce.clone(),
            NonceEntry {
                issued: now,
                last_nc: 0,
            },
        );
        Challenge {
            realm: self.creds.realm.clone(),
            nonce,
            opaque: Some(self.opaque.clone()),
            qop: Some("auth".into()),
            algorithm: Some("MD5".into()),
            stale,
        }
    }

    pub fn verify(&self, method: &str, uri: &str, header: Option<&str>) -> Result<(), AuthFailure> {
        self.verify_at(Instant::now(), method, uri, header)
    }

    pub fn verify_at(
        &self,
        now: Instant,
        method: &str,
        uri: &str,
        header: Option<&str>,
    ) -> Result<(), AuthFailure> {
        let header = header.ok_or(AuthFailure::Missing)?;
        let auth = DigestAuthorization::parse(header)
            .map_err(|e| AuthFailure::Malformed(e.to_string()))?;
        if auth.username != self.creds.username || auth.realm != self.creds.realm {
            return Err(AuthFailure::WrongCredentials);
        }
        if auth.uri != uri {
            return Err(AuthFailure::Malformed("uri does not match request".into()));
        }
        if auth
            .algorithm
            .as_deref()
            .is_some_and(|a| !a.eq_ignore_ascii_case("md5"))
        {
            return Err(AuthFailure::Malformed("unsupported algorithm".into()));
        }
        let (Some(qop), Some(nc), Some(cnonce)) = (&auth.qop, &auth.nc, &auth.cnonce) else {
            return Err(AuthFailure::Malformed("qop=auth with nc and cnonce required".into()));
        };
        if qop != "auth" {
            return Err(AuthFailure::Malformed(format!("unsupported qop {qop}")));
        }
        let nc_val = u32::from_str_radix(nc, 16)
            .map_err(|_| AuthFailure::Malformed("bad nonce count".into()))?;
        let expected = response_hash(
            &ha1(&self.creds.username, &self.creds.realm, &self.creds.password),
            &auth.nonce,
            method,
            uri,
            Some((nc, cnonce, qop)),
        );
        if !expected.eq_ignore_ascii_case(&auth.response) {
            return Err(AuthFailure::WrongCredentials);
        }
        let mut st = self.state.lock();
        // Unknown nonces carry a valid digest at this point, so the client
        // only needs a fresh nonce.
        let entry = st.nonces.get_mut(&auth.nonce).ok_or(AuthFailure::Stale)?;
        if now.saturating_duration_since(entry.issued) > self.lifetime {
            return Err(AuthFailure::Stale);
        }
        if nc_val <= entry.last_nc {
            return Err(AuthFailure::Replay);
        }
        entry.last_nc = nc_val;
        Ok(())
    }
}

/// Client-side signing state for one connection.
pub struct DigestSession {
    creds: DigestCredentials,
    challenge: Option<Challenge>,
    nc: u32,
    rng: ChaCha8Rng,
}

impl DigestSession {
    pub fn new(creds: DigestCredentials, seed: u64) -> Self {
        Self {
            creds,
            challenge: None,
            nc: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn credentials(&self) -> &DigestCredentials {
        &self.creds
    }

    pub fn has_challenge(&self) -> bool {
        self.challenge.is_some()
    }

    pub fn accept_challenge(&mut self, header: &str) -> Result<(), ProtocolError> {
        self.challenge = Some(Challenge::parse(header)?);
        self.nc = 0;
        Ok(())
    }

    pub fn forget_challenge(&mut self) {
        self.challenge = None;
    }

    /// Header for the next request, or `None` before the first challenge.
    pub fn authorization(&mut self, method: &str, uri: &str) -> Result<Option<String>, ProtocolError> {
        let Some(ch) = &self.challenge else {
            return Ok(None);
        };
        self.nc += 1;
        let cnonce = hex::encode(self.rng.random::<[u8; 8]>());
        digest_client_sign(method, uri, ch, &self.creds, &cnonce, self.nc).map(Some)
    }
}
