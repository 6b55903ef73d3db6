//! Gateway configuration, stored as TOML.
//!
//! Every field has a default, so an empty file (or no file) gives a working
//! demo setup on port 8080 with an in-tree store:
//!
//! ```toml
//! instance_name = "demo"
//! listen = "127.0.0.1:8080"
//! # public_url = "https://repo.example.org"   # defaults to http://{listen}
//! oaipmh_base_path = "/oai"
//! openurl_base_path = "/openurl"
//! repository_name = "OAIS gateway"
//! admin_email = "admin@localhost"
//! page_size = 100
//! token_ttl_secs = 86400
//! token_secret = "change-me"
//! version_key_mode = "aip"          # aip | version-global | version-scoped
//! version_tiebreak = false
//! auto_select = "off"               # off | latest
//! store_dir = "store"
//!
//! [[sets]]
//! spec = "journals"
//! name = "Journals"
//!
//! [[formats]]
//! format_uri = "info:pathways/dip.xml"
//! metadata_prefix = "pathways_dip_xml"
//! namespace_uri = "info:pathways/dip.xml"
//! schema_url = "info:pathways/dip.xml.xsd"
//! embed_mode = "inline"             # inline | by-reference
//! ```

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::archive::{SetSpec, is_absolute_uri};
use crate::oaipmh::OaiSettings;
use crate::packaging::{DipFormat, EmbedMode, FormatRegistry};

use crate::openurl::ResolverSettings;
pub use crate::openurl::{AutoSelect, VersionKeyMode};

/// Environment variable consulted when no config path is given.
pub const CONFIG_ENV: &str = "OAIS_GATEWAY_CONFIG";

pub const HEALTH_PATH: &str = "/healthz";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetConfig {
    pub spec: SetSpec,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub instance_name: String,
    pub listen: SocketAddr,
    pub public_url: Option<String>,
    pub oaipmh_base_path: String,
    pub openurl_base_path: String,
    pub repository_name: String,
    pub admin_email: String,
    pub page_size: usize,
    pub token_ttl_secs: u64,
    pub token_secret: String,
    pub version_key_mode: VersionKeyMode,
    pub version_tiebreak: bool,
    pub auto_select: AutoSelect,
    pub store_dir: PathBuf,
    pub sets: Vec<SetConfig>,
    pub formats: Vec<DipFormat>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            instance_name: "demo".into(),
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            public_url: None,
            oaipmh_base_path: "/oai".into(),
            openurl_base_path: "/openurl".into(),
            repository_name: "OAIS gateway".into(),
            admin_email: "admin@localhost".into(),
            page_size: 100,
            token_ttl_secs: 24 * 3600,
            token_secret: "change-me".into(),
            version_key_mode: VersionKeyMode::Aip,
            version_tiebreak: false,
            auto_select: AutoSelect::Off,
            store_dir: PathBuf::from("store"),
            sets: Vec::new(),
            formats: vec![
                DipFormat::native(),
                DipFormat::pathways("xml-ref", EmbedMode::ByReference),
            ],
        }
    }
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

fn check_path(name: &str, path: &str) -> Result<(), ConfigError> {
    let ok = path.starts_with('/')
        && path.len() > 1
        && !path.ends_with('/')
        && !path.contains(['?', '#', ' '])
        && path != HEALTH_PATH;
    if ok {
        Ok(())
    } else {
        Err(invalid(format!(
            "{name} must be an absolute path like /oai, other than {HEALTH_PATH}"
        )))
    }
}

impl GatewayConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let mut config = Self::from_toml_str(&text)?;
        if config.store_dir.is_relative()
            && let Some(parent) = path.parent()
        {
            config.store_dir = parent.join(&config.store_dir);
        }
        Ok(config)
    }

    /// Loads `explicit`, else the file named by `OAIS_GATEWAY_CONFIG`, else
    /// the defaults.
    pub fn load_or_default(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        match explicit {
            Some(path) => Self::load(path),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(path) if !path.is_empty() => Self::load(Path::new(&path)),
                _ => Ok(Self::default()),
            },
        }
    }

    /// Serializes with every default written out.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        crate::archive::Archive::in_memory(&self.instance_name)
            .map_err(|e| invalid(e.to_string()))?;
        check_path("oaipmh_base_path", &self.oaipmh_base_path)?;
        check_path("openurl_base_path", &self.openurl_base_path)?;
        if self.oaipmh_base_path == self.openurl_base_path {
            return Err(invalid(
                "oaipmh_base_path and openurl_base_path must differ",
            ));
        }
        if self.page_size == 0 {
            return Err(invalid("page_size must be positive"));
        }
        // Lists are always paged, so tokens are always issued and must be signed.
        if self.token_secret.is_empty() {
            return Err(invalid("token_secret must not be empty"));
        }
        if self.token_ttl_secs == 0 {
            return Err(invalid("token_ttl_secs must be positive"));
        }
        if let Some(url) = &self.public_url
            && (!(url.starts_with("http://") || url.starts_with("https://"))
                || !is_absolute_uri(url))
        {
            return Err(invalid(format!("public_url {url:?} is not an http(s) URL")));
        }
        let mut specs = std::collections::HashSet::new();
        for set in &self.sets {
            if !specs.insert(&set.spec) {
                return Err(invalid(format!("set {} is listed twice", set.spec)));
            }
        }
        self.registry()?;
        Ok(())
    }

    pub fn registry(&self) -> Result<FormatRegistry, ConfigError> {
        let mut registry = FormatRegistry::new();
        for format in &self.formats {
            registry
                .register(format.clone())
                .map_err(|e| invalid(e.to_string()))?;
        }
        Ok(registry)
    }

    /// External base URL, without a trailing slash.
    pub fn public_base(&self) -> String {
        match &self.public_url {
            Some(url) => url.trim_end_matches('/').to_owned(),
            None => format!("http://{}", self.listen),
        }
    }

    pub fn oaipmh_url(&self) -> String {
        format!("{}{}", self.public_base(), self.oaipmh_base_path)
    }

    pub fn openurl_url(&self) -> String {
        format!("{}{}", self.public_base(), self.openurl_base_path)
    }

    pub fn oai_settings(&self) -> OaiSettings {
        OaiSettings {
            repository_name: self.repository_name.clone(),
            base_url: self.oaipmh_url(),
            admin_email: self.admin_email.clone(),
            page_size: self.page_size,
            token_ttl: Duration::from_secs(self.token_ttl_secs),
            token_secret: self.token_secret.as_bytes().to_vec(),
            sets: self
                .sets
                .iter()
                .map(|s| (s.spec.clone(), s.name.clone()))
                .collect(),
        }
    }

    pub fn resolver_settings(&self) -> ResolverSettings {
        ResolverSettings {
            version_key_mode: self.version_key_mode,
            version_tiebreak: self.version_tiebreak,
            auto_select: self.auto_select,
        }
    }
}
