//! Stateless resumption tokens.
//!
//! A token is `base64url(json).base64url(hmac_sha256(json))`. The payload
//! pins the whole query, so a token can be honored after a restart and
//! cannot be replayed against a different query.

use base64::Engine;
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use chrono::{DateTime, Utc};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

type HmacSha256 = Hmac<Sha256>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) struct TokenState {
    pub verb: String,
    pub format: String,
    pub from: Option<i64>,
    pub until: i64,
    /// Whether `until` came from the request or was pinned to the issue time.
    pub until_given: bool,
    pub set: Option<String>,
    /// Sort key `(datestamp, identifier)` of the last record already sent.
    pub after: (i64, String),
    pub issued: i64,
}

impl TokenState {
    pub fn issued_at(&self) -> Option<DateTime<Utc>> {
        DateTime::from_timestamp(self.issued, 0)
    }
}

#[derive(Clone)]
pub(crate) struct TokenCodec {
    secret: Vec<u8>,
}

impl std::fmt::Debug for TokenCodec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TokenCodec(..)")
    }
}

impl TokenCodec {
    pub fn new(secret: &[u8]) -> Self {
        Self {
            secret: secret.to_vec(),
        }
    }

    fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.secret).expect("HMAC accepts keys of any length")
    }

    pub fn encode(&self, state: &TokenState) -> String {
        let payload = serde_json::to_vec(state).expect("token state serializes");
        let mut mac = self.mac();
        mac.update(&payload);
        format!(
            "{}.{}",
            URL_SAFE_NO_PAD.encode(&payload),
            URL_SAFE_NO_PAD.encode(mac.finalize().into_bytes())
        )
    }

    pub fn decode(&self, token: &str) -> Result<TokenState, &'static str> {
        let (payload, tag) = token.split_once('.').ok_or("malformed token")?;
        let payload = URL_SAFE_NO_PAD
            .decode(payload)
            .map_err(|_| "malformed token")?;
        let tag = URL_SAFE_NO_PAD.decode(tag).map_err(|_| "malformed token")?;
        let mut mac = self.mac();
        mac.update(&payload);
        mac.verify_slice(&tag)
            .map_err(|_| "token signature mismatch")?;
        serde_json::from_slice(&payload).map_err(|_| "malformed token")
    }
}
