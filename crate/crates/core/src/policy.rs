//! Policy DSL and the policy enforcer's registry.
//!
//! A policy statement names one application and sets one or more keys:
//!
//! ```text
//! <app-1, rate=100 MB/s>
//! <app-2, borrow=FALSE>
//! <app-3, borrow=TRUE, thres=0.8>
//! ```
//!
//! Grammar (whitespace between tokens is optional and ignored):
//!
//! ```text
//! statement := "<" app_id ("," pair)+ ">"
//! pair      := key "=" value
//! key       := "rate" | "borrow" | "thres"        (case-insensitive)
//! value     := number "MB/s" | "TRUE" | "FALSE" | fraction
//! app_id    := [A-Za-z0-9_-]+
//! ```
//!
//! The value form is driven by the key: `rate` takes a positive number of
//! MB/s, `borrow` a flag and `thres` a fraction in `(0, 1]`.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::AppId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyKey {
    Rate,
    Borrow,
    Thres,
}

impl PolicyKey {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKey::Rate => "rate",
            PolicyKey::Borrow => "borrow",
            PolicyKey::Thres => "thres",
        }
    }

    fn from_lowercase(key: &str) -> Option<Self> {
        match key {
            "rate" => Some(PolicyKey::Rate),
            "borrow" => Some(PolicyKey::Borrow),
            "thres" => Some(PolicyKey::Thres),
            _ => None,
        }
    }
}

impl fmt::Display for PolicyKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyValue {
    /// Bandwidth in MB/s.
    Rate(f64),
    Flag(bool),
    Fraction(f64),
}

impl fmt::Display for PolicyValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // f64 Display prints the shortest representation that parses back to
        // the same value, and never uses an exponent.
        match self {
            PolicyValue::Rate(v) => write!(f, "{v} MB/s"),
            PolicyValue::Flag(true) => f.write_str("TRUE"),
            PolicyValue::Flag(false) => f.write_str("FALSE"),
            PolicyValue::Fraction(v) => write!(f, "{v}"),
        }
    }
}

/// One parsed policy, entries kept in source order.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStatement {
    pub app_id: AppId,
    pub entries: Vec<(PolicyKey, PolicyValue)>,
}

impl PolicyStatement {
    pub fn new(app_id: impl Into<AppId>) -> Self {
        Self {
            app_id: app_id.into(),
            entries: Vec::new(),
        }
    }

    pub fn with(mut self, key: PolicyKey, value: PolicyValue) -> Self {
        self.entries.push((key, value));
        self
    }

    pub fn get(&self, key: PolicyKey) -> Option<PolicyValue> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
    }
}

impl fmt::Display for PolicyStatement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}", self.app_id)?;
        for (key, value) in &self.entries {
            write!(f, ", {key}={value}")?;
        }
        f.write_str(">")
    }
}

impl std::str::FromStr for PolicyStatement {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_policy(s)
    }
}

/// Parse failure. Every variant carries the byte offset where it was detected.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: expected {expected}")]
    Syntax { pos: usize, expected: &'static str },
    #[error("unknown key `{key}` at byte {pos} (expected rate, borrow or thres)")]
    UnknownKey { pos: usize, key: String },
    #[error("value out of range at byte {pos}: {reason}")]
    Value { pos: usize, reason: &'static str },
}

impl ParseError {
    pub fn position(&self) -> usize {
        match self {
            ParseError::Syntax { pos, .. }
            | ParseError::UnknownKey { pos, .. }
            | ParseError::Value { pos, .. } => *pos,
        }
    }
}

struct Cursor<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b) if b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, byte: u8, expected: &'static str) -> Result<(), ParseError> {
        if self.peek() == Some(byte) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.syntax(expected))
        }
    }

    fn syntax(&self, expected: &'static str) -> ParseError {
        ParseError::Syntax {
            pos: self.pos,
            expected,
        }
    }

    /// Consumes a run of bytes matching `pred`; the slice is ASCII by construction.
    fn take_while(&mut self, pred: impl Fn(u8) -> bool) -> &'a str {
        let start = self.pos;
        while matches!(self.peek(), Some(b) if pred(b)) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos]).expect("ascii run")
    }

    fn decimal(&mut self) -> Result<f64, ParseError> {
        let start = self.pos;
        let int = self.take_while(|b| b.is_ascii_digit());
        if int.is_empty() {
            return Err(self.syntax("a decimal number"));
        }
        if self.peek() == Some(b'.') {
            self.pos += 1;
            if self.take_while(|b| b.is_ascii_digit()).is_empty() {
                return Err(self.syntax("digits after `.`"));
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii run");
        Ok(text.parse().expect("validated decimal"))
    }
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'-'
}

/// Parses one policy statement.
pub fn parse_policy(text: &str) -> Result<PolicyStatement, ParseError> {
    let mut cur = Cursor {
        src: text.as_bytes(),
        pos: 0,
    };
    cur.skip_ws();
    cur.expect(b'<', "`<`")?;
    cur.skip_ws();
    let app_id = cur.take_while(is_ident_byte);
    if app_id.is_empty() {
        return Err(cur.syntax("an application id"));
    }
    let mut stmt = PolicyStatement::new(app_id);
    cur.skip_ws();
    cur.expect(b',', "`,`")?;
    loop {
        cur.skip_ws();
        stmt.entries.push(parse_pair(&mut cur)?);
        cur.skip_ws();
        match cur.peek() {
            Some(b',') => cur.pos += 1,
            Some(b'>') => {
                cur.pos += 1;
                break;
            }
            _ => return Err(cur.syntax("`,` or `>`")),
        }
    }
    cur.skip_ws();
    if cur.peek().is_some() {
        return Err(cur.syntax("end of input"));
    }
    Ok(stmt)
}

fn parse_pair(cur: &mut Cursor<'_>) -> Result<(PolicyKey, PolicyValue), ParseError> {
    let key_pos = cur.pos;
    let raw_key = cur.take_while(is_ident_byte);
    if raw_key.is_empty() {
        return Err(cur.syntax("a key"));
    }
    let key = PolicyKey::from_lowercase(&raw_key.to_ascii_lowercase()).ok_or_else(|| {
        ParseError::UnknownKey {
            pos: key_pos,
            key: raw_key.to_owned(),
        }
    })?;
    cur.skip_ws();
    cur.expect(b'=', "`=`")?;
    cur.skip_ws();
    let value_pos = cur.pos;
    let value = match key {
        PolicyKey::Rate => {
            let v = cur.decimal()?;
            cur.skip_ws();
            if !cur.src[cur.pos..].starts_with(b"MB/s") {
                return Err(cur.syntax("`MB/s`"));
            }
            cur.pos += 4;
            if !(v > 0.0 && v.is_finite()) {
                return Err(ParseError::Value {
                    pos: value_pos,
                    reason: "rate must be a positive finite number of MB/s",
                });
            }
            PolicyValue::Rate(v)
        }
        PolicyKey::Borrow => {
            let word = cur.take_while(|b| b.is_ascii_alphabetic());
            if word.eq_ignore_ascii_case("true") {
                PolicyValue::Flag(true)
            } else if word.eq_ignore_ascii_case("false") {
                PolicyValue::Flag(false)
            } else {
                return Err(ParseError::Syntax {
                    pos: value_pos,
                    expected: "TRUE or FALSE",
                });
            }
        }
        PolicyKey::Thres => {
            let v = cur.decimal()?;
            if !(v > 0.0 && v <= 1.0) {
                return Err(ParseError::Value {
                    pos: value_pos,
                    reason: "thres must lie in (0, 1]",
                });
            }
            PolicyValue::Fraction(v)
        }
    };
    Ok((key, value))
}

/// Canonical text form; `parse_policy(&render_policy(s)) == s` for valid `s`.
pub fn render_policy(stmt: &PolicyStatement) -> String {
    stmt.to_string()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("invalid application id `{0}`")]
    InvalidAppId(String),
    #[error("statement sets no keys")]
    Empty,
    #[error("duplicate key `{0}`")]
    DuplicateKey(PolicyKey),
    #[error("key `{0}` has a value of the wrong kind")]
    TypeMismatch(PolicyKey),
    #[error("rate must be positive and finite")]
    RateOutOfRange,
    #[error("thres must lie in (0, 1]")]
    ThresOutOfRange,
    #[error("thres requires borrow=TRUE in the same statement")]
    ThresWithoutBorrow,
}

/// Lists everything wrong with a statement; empty means it can be applied.
pub fn validate_policy(stmt: &PolicyStatement) -> Vec<Violation> {
    let mut out = Vec::new();
    let id = stmt.app_id.as_str();
    if id.is_empty() || !id.bytes().all(is_ident_byte) {
        out.push(Violation::InvalidAppId(id.to_owned()));
    }
    if stmt.entries.is_empty() {
        out.push(Violation::Empty);
    }
    let mut seen = Vec::with_capacity(3);
    for (key, value) in &stmt.entries {
        if seen.contains(key) {
            if !out.contains(&Violation::DuplicateKey(*key)) {
                out.push(Violation::DuplicateKey(*key));
            }
        } else {
            seen.push(*key);
        }
        match (key, value) {
            (PolicyKey::Rate, PolicyValue::Rate(v)) => {
                if !(*v > 0.0 && v.is_finite()) {
                    out.push(Violation::RateOutOfRange);
                }
            }
            (PolicyKey::Borrow, PolicyValue::Flag(_)) => {}
            (PolicyKey::Thres, PolicyValue::Fraction(v)) => {
                if !(*v > 0.0 && *v <= 1.0) {
                    out.push(Violation::ThresOutOfRange);
                }
            }
            _ => out.push(Violation::TypeMismatch(*key)),
        }
    }
    if stmt.get(PolicyKey::Thres).is_some()
        && stmt.get(PolicyKey::Borrow) != Some(PolicyValue::Flag(true))
    {
        out.push(Violation::ThresWithoutBorrow);
    }
    out
}

/// What the enforcer currently mandates for one application.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EffectivePolicy {
    pub rate_mbps: Option<f64>,
    pub borrow_allowed: bool,
    /// Only present while `borrow_allowed` is true.
    pub borrow_threshold: Option<f64>,
}

#[derive(Debug, Error)]
#[error("policy `{statement}` failed validation: {violations:?}")]
pub struct ValidationFailed {
    pub statement: String,
    pub violations: Vec<Violation>,
}

/// Cluster-wide policy state held by the enforcer.
///
/// `revision` advances whenever an applied statement changes something; the
/// control plane re-syncs rates at the next epoch boundary when it sees a new
/// revision.
#[derive(Debug, Clone, Default)]
pub struct PolicyRegistry {
    policies: BTreeMap<AppId, EffectivePolicy>,
    revision: u64,
}

impl PartialEq for PolicyRegistry {
    fn eq(&self, other: &Self) -> bool {
        self.policies == other.policies
    }
}

impl PolicyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, app: &str) -> Option<&EffectivePolicy> {
        self.policies.get(app)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AppId, &EffectivePolicy)> {
        self.policies.iter()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// Applies one statement, last writer wins per key.
    pub fn apply(&mut self, stmt: &PolicyStatement) -> Result<(), ValidationFailed> {
        let violations = validate_policy(stmt);
        if !violations.is_empty() {
            return Err(ValidationFailed {
                statement: stmt.to_string(),
                violations,
            });
        }
        let before = self.policies.get(&stmt.app_id).copied();
        let entry = self.policies.entry(stmt.app_id.clone()).or_default();
        for (key, value) in &stmt.entries {
            match (key, value) {
                (PolicyKey::Rate, PolicyValue::Rate(v)) => entry.rate_mbps = Some(*v),
                (PolicyKey::Borrow, PolicyValue::Flag(on)) => {
                    entry.borrow_allowed = *on;
                    if !on {
                        entry.borrow_threshold = None;
                    }
                }
                (PolicyKey::Thres, PolicyValue::Fraction(v)) => entry.borrow_threshold = Some(*v),
                _ => unreachable!("validated"),
            }
        }
        if before != Some(*entry) {
            self.revision += 1;
        }
        Ok(())
    }
}

/// Functional form of [`PolicyRegistry::apply`].
pub fn apply_policy(
    mut registry: PolicyRegistry,
    stmt: &PolicyStatement,
) -> Result<PolicyRegistry, ValidationFailed> {
    registry.apply(stmt)?;
    Ok(registry)
}
