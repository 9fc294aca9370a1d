//! Static bearer tokens.
//!
//! The token file has one `<token> <role> <actor>` triple per line. Blank
//! lines and `#` comments are ignored.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Student,
    Examiner,
    Admin,
}

impl std::str::FromStr for Role {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "student" => Ok(Role::Student),
            "examiner" => Ok(Role::Examiner),
            "admin" => Ok(Role::Admin),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Student => "student",
            Role::Examiner => "examiner",
            Role::Admin => "admin",
        })
    }
}

/// Authenticated caller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiSession {
    pub actor: String,
    pub role: Role,
}

#[derive(Debug, Error, PartialEq)]
pub enum TokenFileError {
    #[error("line {line}: expected `<token> <role> <actor>`")]
    Malformed { line: usize },
    #[error("line {line}: unknown role `{role}`")]
    UnknownRole { line: usize, role: String },
    #[error("line {line}: token repeated")]
    DuplicateToken { line: usize },
    #[error("cannot read token file: {0}")]
    Io(String),
}

/// Something that can turn a bearer token into a caller.
pub trait Authenticator: Send + Sync {
    fn authenticate(&self, token: &str) -> Option<ApiSession>;
}

#[derive(Debug, Clone, Default)]
pub struct TokenStore {
    tokens: HashMap<String, ApiSession>,
}

impl TokenStore {
    pub fn parse(text: &str) -> Result<Self, TokenFileError> {
        let mut tokens = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let [token, role, actor] = fields[..] else {
                return Err(TokenFileError::Malformed { line });
            };
            let role = role.parse().map_err(|_| TokenFileError::UnknownRole { line, role: role.into() })?;
            let session = ApiSession { actor: actor.into(), role };
            if tokens.insert(token.to_string(), session).is_some() {
                return Err(TokenFileError::DuplicateToken { line });
            }
        }
        Ok(Self { tokens })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenFileError> {
        let text = std::fs::read_to_string(path).map_err(|e| TokenFileError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn insert(&mut self, token: impl Into<String>, role: Role, actor: impl Into<String>) {
        self.tokens.insert(token.into(), ApiSession { actor: actor.into(), role });
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl Authenticator for TokenStore {
    fn authenticate(&self, token: &str) -> Option<ApiSession> {
        self.tokens.get(token).cloned()
    }
}

/// Extracts the token from an `Authorization: Bearer ...` value.
pub fn bearer(header: &str) -> Option<&str> {
    let (scheme, token) = header.trim().split_once(' ')?;
    scheme.eq_ignore_ascii_case("bearer").then(|| token.trim()).filter(|t| !t.is_empty())
}
