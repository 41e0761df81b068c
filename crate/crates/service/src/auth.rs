use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Operator;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuthError {
    #[error("invalid credentials")]
    BadCredentials,
    #[error("missing bearer token")]
    MissingToken,
    #[error("unknown token")]
    UnknownToken,
    #[error("token expired; log in again")]
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credentials {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub token: String,
    pub expires_in_s: u64,
}

/// Sessions for the single configured operator.
pub struct Auth {
    operator: Operator,
    tokens: Mutex<HashMap<String, Instant>>,
}

fn same(a: &[u8], b: &[u8]) -> bool {
    // no early exit on the first differing byte
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

impl Auth {
    pub fn new(operator: Operator) -> Self {
        Self { operator, tokens: Mutex::new(HashMap::new()) }
    }

    pub fn login(&self, c: &Credentials) -> Result<Session, AuthError> {
        self.login_at(c, Instant::now())
    }

    pub fn login_at(&self, c: &Credentials, now: Instant) -> Result<Session, AuthError> {
        let user_ok = same(c.username.as_bytes(), self.operator.username.as_bytes());
        let pass_ok = same(c.password.as_bytes(), self.operator.password.as_bytes());
        if !(user_ok & pass_ok) {
            return Err(AuthError::BadCredentials);
        }
        let token = uuid::Uuid::new_v4().simple().to_string();
        let ttl = Duration::from_secs(self.operator.token_ttl_s);
        let mut tokens = self.tokens.lock().unwrap();
        tokens.retain(|_, exp| *exp > now);
        tokens.insert(token.clone(), now + ttl);
        Ok(Session { token, expires_in_s: self.operator.token_ttl_s })
    }

    pub fn check(&self, token: Option<&str>) -> Result<(), AuthError> {
        self.check_at(token, Instant::now())
    }

    pub fn check_at(&self, token: Option<&str>, now: Instant) -> Result<(), AuthError> {
        let token = token.filter(|t| !t.is_empty()).ok_or(AuthError::MissingToken)?;
        let mut tokens = self.tokens.lock().unwrap();
        match tokens.get(token) {
            None => Err(AuthError::UnknownToken),
            Some(exp) if *exp <= now => {
                tokens.remove(token);
                Err(AuthError::Expired)
            }
            Some(_) => Ok(()),
        }
    }

    pub fn logout(&self, token: &str) {
        self.tokens.lock().unwrap().remove(token);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn auth() -> Auth {
        Auth::new(Operator { username: "op".into(), password: "secret".into(), token_ttl_s: 60 })
    }

    fn creds(u: &str, p: &str) -> Credentials {
        Credentials { username: u.into(), password: p.into() }
    }

    #[test]
    fn valid_pair_gets_a_working_token() {
        let a = auth();
        let s = a.login(&creds("op", "secret")).unwrap();
        assert_eq!(s.expires_in_s, 60);
        assert_eq!(a.check(Some(&s.token)), Ok(()));
        a.logout(&s.token);
        assert_eq!(a.check(Some(&s.token)), Err(AuthError::UnknownToken));
    }

    #[test]
    fn wrong_credentials_and_missing_tokens_are_refused() {
        let a = auth();
        assert_eq!(a.login(&creds("op", "secreT")), Err(AuthError::BadCredentials));
        assert_eq!(a.login(&creds("root", "secret")), Err(AuthError::BadCredentials));
        assert_eq!(a.login(&creds("op", "")), Err(AuthError::BadCredentials));
        assert_eq!(a.check(None), Err(AuthError::MissingToken));
        assert_eq!(a.check(Some("")), Err(AuthError::MissingToken));
        assert_eq!(a.check(Some("nope")), Err(AuthError::UnknownToken));
    }

    #[test]
    fn expired_token_requires_a_new_login() {
        let a = auth();
        let t0 = Instant::now();
        let s = a.login_at(&creds("op", "secret"), t0).unwrap();
        assert_eq!(a.check_at(Some(&s.token), t0 + Duration::from_secs(59)), Ok(()));
        assert_eq!(a.check_at(Some(&s.token), t0 + Duration::from_secs(60)), Err(AuthError::Expired));
        assert_eq!(a.check_at(Some(&s.token), t0 + Duration::from_secs(61)), Err(AuthError::UnknownToken));
    }
}
