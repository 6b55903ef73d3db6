use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IdentifierError {
    #[error("{0:?} is not an absolute URI")]
    NotAbsoluteUri(String),
    #[error("{0:?} is not a valid fragment identifier (XML NCName)")]
    BadFragmentId(String),
    #[error("{0:?} is not a valid media type")]
    BadMediaType(String),
    #[error("{0:?} is not a valid set spec")]
    BadSetSpec(String),
}

/// Checks `scheme ":" rest` with a non-empty rest and no whitespace or
/// control characters anywhere. The value is otherwise kept verbatim.
pub fn is_absolute_uri(value: &str) -> bool {
    let Some((scheme, rest)) = value.split_once(':') else {
        return false;
    };
    let mut chars = scheme.chars();
    let scheme_ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.'));
    scheme_ok && !rest.is_empty() && !value.chars().any(|c| c.is_whitespace() || c.is_control())
}

fn is_ncname_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_ncname_char(c: char) -> bool {
    is_ncname_start(c) || c.is_numeric() || matches!(c, '-' | '.' | '\u{B7}')
}

pub fn is_ncname(value: &str) -> bool {
    let mut chars = value.chars();
    chars.next().is_some_and(is_ncname_start) && chars.all(is_ncname_char)
}

/// OAI-PMH setSpec segment characters; the hierarchy separator `:` is excluded
/// because sets are flat.
pub fn is_set_spec(value: &str) -> bool {
    !value.is_empty()
        && value
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_.!~*'()".contains(c))
}

macro_rules! string_newtype {
    ($name:ident, $check:expr, $err:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(value: impl Into<String>) -> Result<Self, IdentifierError> {
                let value = value.into();
                if $check(&value) {
                    Ok(Self(value))
                } else {
                    Err(IdentifierError::$err(value))
                }
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl FromStr for $name {
            type Err = IdentifierError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::new(s)
            }
        }

        impl TryFrom<String> for $name {
            type Error = IdentifierError;
            fn try_from(value: String) -> Result<Self, Self::Error> {
                Self::new(value)
            }
        }

        impl From<$name> for String {
            fn from(value: $name) -> String {
                value.0
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }
    };
}

string_newtype!(CiId, is_absolute_uri, NotAbsoluteUri);
string_newtype!(AipId, is_absolute_uri, NotAbsoluteUri);
string_newtype!(FragmentId, is_ncname, BadFragmentId);
string_newtype!(SetSpec, is_set_spec, BadSetSpec);

/// A `type/subtype` media type with optional parameters, stored verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MediaType(String);

impl MediaType {
    pub fn new(value: impl Into<String>) -> Result<Self, IdentifierError> {
        let value = value.into();
        match value.parse::<mime::Mime>() {
            Ok(_) if !value.contains(['\t', '\n', '\r']) => Ok(Self(value)),
            _ => Err(IdentifierError::BadMediaType(value)),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MediaType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for MediaType {
    type Err = IdentifierError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}
