//! Routes HTTP-shaped requests to the OAI-PMH and OpenURL interfaces of one
//! archive. The HTTP server itself lives in the binary; this layer is
//! transport-free so it can also be driven in-process.

use std::sync::Arc;
use std::time::Instant;

use bytes::Bytes;
use chrono::{DateTime, Utc};

use crate::archive::{Aip, Archive, ArchiveError, Sip};
use crate::config::{ConfigError, GatewayConfig, HEALTH_PATH};
use crate::harvest::{HttpResponse, Transport, TransportError};
use crate::oaipmh::{OaiError, OaiErrorCode, OaiService};
use crate::openurl::{IdentityLinker, Resolver, decode_pairs};
use crate::packaging::Packager;

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

const FORM_CONTENT_TYPE: &str = "application/x-www-form-urlencoded";

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatewayRequest {
    pub method: String,
    pub path: String,
    /// Raw query string, without the `?`.
    pub query: String,
    pub content_type: Option<String>,
    pub body: Bytes,
}

impl GatewayRequest {
    /// A GET for `path[?query]`.
    pub fn get(path_and_query: &str) -> Self {
        let (path, query) = path_and_query
            .split_once('?')
            .unwrap_or((path_and_query, ""));
        Self {
            method: "GET".into(),
            path: path.into(),
            query: query.into(),
            content_type: None,
            body: Bytes::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatewayResponse {
    pub status: u16,
    pub content_type: String,
    pub body: Bytes,
}

impl GatewayResponse {
    fn text(status: u16, body: impl Into<String>) -> Self {
        Self {
            status,
            content_type: "text/plain; charset=utf-8".into(),
            body: Bytes::from(body.into()),
        }
    }
}

/// Both access interfaces over one archive.
pub struct Gateway {
    config: Arc<GatewayConfig>,
    archive: Arc<Archive>,
    oai: OaiService,
    resolver: Resolver,
    clock: Clock,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("archive", &self.archive)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(config: GatewayConfig, archive: Arc<Archive>) -> Result<Self, ConfigError> {
        config.validate()?;
        let linker = IdentityLinker::new(config.openurl_url(), config.version_key_mode);
        let packager = Arc::new(Packager::new(config.registry()?).with_linker(Arc::new(linker)));
        let oai = OaiService::new(
            Arc::clone(&archive),
            Arc::clone(&packager),
            config.oai_settings(),
        );
        let resolver = Resolver::new(Arc::clone(&archive), packager, config.resolver_settings());
        Ok(Self {
            config: Arc::new(config),
            archive,
            oai,
            resolver,
            clock: Arc::new(Utc::now),
        })
    }

    /// Opens the file-backed store named by the config, locking it.
    pub fn open(config: GatewayConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let archive = Archive::open(&config.store_dir, &config.instance_name)?;
        Ok(Self::new(config, Arc::new(archive))?)
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn archive(&self) -> &Arc<Archive> {
        &self.archive
    }

    pub fn oai(&self) -> &OaiService {
        &self.oai
    }

    pub fn resolver(&self) -> &Resolver {
        &self.resolver
    }

    pub fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }

    pub fn ingest(&self, sip: Sip) -> Result<Arc<Aip>, ArchiveError> {
        self.archive.ingest(sip, self.now())
    }

    pub fn handle(&self, req: &GatewayRequest) -> GatewayResponse {
        let started = Instant::now();
        let head = req.method == "HEAD";
        let method = if head { "GET" } else { req.method.as_str() };
        let (mut response, operation) = self.route(method, req);
        tracing::info!(
            method = %req.method,
            path = %req.path,
            operation = operation.as_deref().unwrap_or("-"),
            status = response.status,
            duration_us = started.elapsed().as_micros() as u64,
            "request"
        );
        if head {
            response.body = Bytes::new();
        }
        response
    }

    fn route(&self, method: &str, req: &GatewayRequest) -> (GatewayResponse, Option<String>) {
        let path = req.path.as_str();
        if path == HEALTH_PATH {
            return match method {
                "GET" => (GatewayResponse::text(200, "ok\n"), None),
                _ => (GatewayResponse::text(405, "method not allowed\n"), None),
            };
        }
        if path == self.config.oaipmh_base_path {
            let raw = match method {
                "GET" => req.query.as_bytes(),
                "POST" => {
                    let is_form = req.content_type.as_deref().is_some_and(|ct| {
                        ct.split(';')
                            .next()
                            .unwrap_or_default()
                            .trim()
                            .eq_ignore_ascii_case(FORM_CONTENT_TYPE)
                    });
                    if !is_form {
                        return (
                            GatewayResponse::text(415, format!("expected {FORM_CONTENT_TYPE}\n")),
                            None,
                        );
                    }
                    &req.body[..]
                }
                _ => return (GatewayResponse::text(405, "method not allowed\n"), None),
            };
            return self.oai_request(raw);
        }
        if path == self.config.openurl_base_path {
            if method != "GET" {
                return (GatewayResponse::text(405, "method not allowed\n"), None);
            }
            let svc = decode_pairs(&req.query).ok().and_then(|pairs| {
                pairs
                    .into_iter()
                    .find(|(k, _)| k == "svc_id")
                    .map(|(_, v)| v)
            });
            let reply = self.resolver.handle_query(&req.query);
            let response = GatewayResponse {
                status: reply.status,
                content_type: reply.content_type,
                body: reply.body,
            };
            return (response, svc);
        }
        (GatewayResponse::text(404, "not found\n"), None)
    }

    fn oai_request(&self, raw: &[u8]) -> (GatewayResponse, Option<String>) {
        let now = self.now();
        let decoded = std::str::from_utf8(raw)
            .map_err(|_| "request is not UTF-8".to_owned())
            .and_then(|text| decode_pairs(text).map_err(|e| e.to_string()));
        let (body, verb) = match decoded {
            Ok(args) => {
                let verb = args
                    .iter()
                    .find(|(k, _)| k == "verb")
                    .map(|(_, v)| v.clone());
                (self.oai.respond(&args, now), verb)
            }
            Err(msg) => {
                let err = OaiError::new(OaiErrorCode::BadArgument, msg);
                (self.oai.respond_error(&err, now), None)
            }
        };
        let response = GatewayResponse {
            status: 200,
            content_type: "text/xml; charset=utf-8".into(),
            body: Bytes::from(body),
        };
        (response, verb)
    }
}

/// In-process [`Transport`] that hands URLs straight to a gateway.
#[derive(Debug, Clone)]
pub struct LocalTransport {
    gateway: Arc<Gateway>,
}

impl LocalTransport {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        Self { gateway }
    }
}

impl Transport for LocalTransport {
    fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
        let path_and_query = match url.split_once("://") {
            Some((_, rest)) => rest.find('/').map_or("/", |i| &rest[i..]),
            None => url,
        };
        let response = self.gateway.handle(&GatewayRequest::get(path_and_query));
        Ok(HttpResponse {
            status: response.status,
            content_type: Some(response.content_type),
            body: response.body,
        })
    }
}
