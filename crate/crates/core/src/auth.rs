//! Bearer tokens with roles.

use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Consumer,
    Admin,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Consumer => "consumer",
            Role::Admin => "admin",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "consumer" => Ok(Role::Consumer),
            "admin" => Ok(Role::Admin),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuthError {
    #[error("missing token")]
    Missing,
    #[error("invalid token")]
    Invalid,
    #[error("role {have} may not perform this operation (needs {need})")]
    Forbidden { have: Role, need: Role },
}

#[derive(Clone, PartialEq, Eq)]
pub struct AuthToken {
    pub token: String,
    pub role: Role,
}

impl fmt::Debug for AuthToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AuthToken").field("token", &"<redacted>").field("role", &self.role).finish()
    }
}

impl AuthToken {
    pub fn new(token: impl Into<String>, role: Role) -> Self {
        AuthToken {
            token: token.into(),
            role,
        }
    }
}

/// Compares in time that depends only on the lengths, not on where the
/// inputs first differ.
pub fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    let n = a.len().max(b.len());
    let mut diff = (a.len() ^ b.len()) as u64;
    for i in 0..n {
        let x = a.get(i).copied().unwrap_or(0);
        let y = b.get(i).copied().unwrap_or(0);
        diff |= u64::from(x ^ y);
    }
    std::hint::black_box(diff) == 0
}

/// The set of tokens a node accepts.
#[derive(Clone, Debug, Default)]
pub struct Authenticator {
    tokens: Vec<AuthToken>,
}

impl Authenticator {
    pub fn new(tokens: Vec<AuthToken>) -> Self {
        Authenticator { tokens }
    }

    /// Role of the presented token. Every known token is compared, so
    /// timing does not reveal which one matched.
    pub fn verify(&self, presented: Option<&str>) -> Result<Role, AuthError> {
        let presented = presented.filter(|t| !t.is_empty()).ok_or(AuthError::Missing)?;
        let mut role = None;
        for t in &self.tokens {
            if constant_time_eq(t.token.as_bytes(), presented.as_bytes()) {
                role = role.max(Some(t.role));
            }
        }
        role.ok_or(AuthError::Invalid)
    }

    pub fn require(&self, presented: Option<&str>, need: Role) -> Result<Role, AuthError> {
        let have = self.verify(presented)?;
        if have < need {
            return Err(AuthError::Forbidden { have, need });
        }
        Ok(have)
    }

    pub fn tokens(&self) -> &[AuthToken] {
        &self.tokens
    }

    /// Any token holding `role` or better, for outgoing requests.
    pub fn token_for(&self, role: Role) -> Option<&str> {
        self.tokens.iter().find(|t| t.role >= role).map(|t| t.token.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ct_eq() {
        assert!(constant_time_eq(b"abc", b"abc"));
        assert!(!constant_time_eq(b"abc", b"abd"));
        assert!(!constant_time_eq(b"abc", b"abcd"));
        assert!(!constant_time_eq(b"", b"\0"));
        assert!(constant_time_eq(b"", b""));
    }

    #[test]
    fn roles() {
        let auth = Authenticator::new(vec![AuthToken::new("a", Role::Admin), AuthToken::new("c", Role::Consumer)]);
        assert_eq!(auth.verify(Some("a")), Ok(Role::Admin));
        assert_eq!(auth.verify(None), Err(AuthError::Missing));
        assert_eq!(auth.verify(Some("")), Err(AuthError::Missing));
        assert_eq!(auth.verify(Some("x")), Err(AuthError::Invalid));
        assert_eq!(
            auth.require(Some("c"), Role::Admin),
            Err(AuthError::Forbidden { have: Role::Consumer, need: Role::Admin })
        );
        assert_eq!(auth.require(Some("a"), Role::Consumer), Ok(Role::Admin));
        assert_eq!(auth.token_for(Role::Admin), Some("a"));
        assert!(!format!("{:?}", auth).contains("\"a\""));
    }
}
