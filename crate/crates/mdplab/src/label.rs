//! Structured state labels with a canonical, lossless text form.
//!
//! Grammar:
//! ```text
//! label  := node | side | enc
//! node   := name [ "(" arg { "," arg } ")" ]
//! side   := digit ":[" label "]"
//! enc    := label "|" [int] "|" [rational]
//! ```

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use smallvec::SmallVec;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LabelError {
    #[error("malformed label {0:?}")]
    Malformed(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arg {
    Int(i64),
    Num(Box<BigRational>),
}

impl Arg {
    /// Integers that fit in `i64` are always stored as `Int`.
    pub fn num(r: BigRational) -> Arg {
        if r.is_integer() {
            if let Ok(v) = i64::try_from(r.to_integer()) {
                return Arg::Int(v);
            }
        }
        Arg::Num(Box::new(r))
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Arg::Int(v) => Some(*v),
            Arg::Num(_) => None,
        }
    }

    pub fn to_rational(&self) -> BigRational {
        match self {
            Arg::Int(v) => BigRational::from_integer(BigInt::from(*v)),
            Arg::Num(r) => (**r).clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Node {
    pub name: Cow<'static, str>,
    pub args: SmallVec<[Arg; 4]>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Encoded {
    pub base: StateRef,
    pub step: Option<u64>,
    pub reward: Option<BigRational>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StateRef {
    Node(Node),
    Side(u8, Arc<StateRef>),
    Enc(Arc<Encoded>),
}

impl StateRef {
    pub fn atom(name: &'static str) -> StateRef {
        StateRef::Node(Node { name: Cow::Borrowed(name), args: SmallVec::new() })
    }

    pub fn ints(name: &'static str, args: &[i64]) -> StateRef {
        StateRef::Node(Node {
            name: Cow::Borrowed(name),
            args: args.iter().map(|&a| Arg::Int(a)).collect(),
        })
    }

    pub fn with_args(name: &'static str, args: SmallVec<[Arg; 4]>) -> StateRef {
        StateRef::Node(Node { name: Cow::Borrowed(name), args })
    }

    /// Node label whose arguments may exceed `i64`.
    pub fn big(name: &'static str, args: &[BigInt]) -> StateRef {
        StateRef::Node(Node {
            name: Cow::Borrowed(name),
            args: args.iter().map(|a| Arg::num(BigRational::from_integer(a.clone()))).collect(),
        })
    }

    pub fn node(&self) -> Option<&Node> {
        match self {
            StateRef::Node(n) => Some(n),
            _ => None,
        }
    }

    /// Name of a plain node label, `None` for wrapped labels.
    pub fn name(&self) -> Option<&str> {
        self.node().map(|n| n.name.as_ref())
    }

    pub fn is(&self, name: &str) -> bool {
        self.name() == Some(name)
    }

    pub fn int(&self, idx: usize) -> Option<i64> {
        self.node().and_then(|n| n.args.get(idx)).and_then(Arg::as_int)
    }

    /// Integer argument of any size.
    pub fn bigint(&self, idx: usize) -> Option<BigInt> {
        match self.arg(idx)? {
            Arg::Int(v) => Some(BigInt::from(*v)),
            Arg::Num(r) if r.is_integer() => Some(r.to_integer()),
            Arg::Num(_) => None,
        }
    }

    /// All arguments as integers of any size; `None` if any is fractional.
    pub fn bigints(&self) -> Option<Vec<BigInt>> {
        (0..self.arity()).map(|i| self.bigint(i)).collect()
    }

    pub fn arg(&self, idx: usize) -> Option<&Arg> {
        self.node().and_then(|n| n.args.get(idx))
    }

    pub fn arity(&self) -> usize {
        self.node().map_or(0, |n| n.args.len())
    }

    pub fn encoded(base: StateRef, step: Option<u64>, reward: Option<BigRational>) -> StateRef {
        StateRef::Enc(Arc::new(Encoded { base, step, reward }))
    }

    pub fn as_encoded(&self) -> Option<&Encoded> {
        match self {
            StateRef::Enc(e) => Some(e),
            _ => None,
        }
    }

    pub fn side(side: u8, inner: StateRef) -> StateRef {
        StateRef::Side(side, Arc::new(inner))
    }

    /// Template used by translation-invariant strategies: node name, or the
    /// template of the wrapped label.
    pub fn template(&self) -> &str {
        match self {
            StateRef::Node(n) => n.name.as_ref(),
            StateRef::Side(_, inner) => inner.template(),
            StateRef::Enc(e) => e.base.template(),
        }
    }
}

fn write_rational(f: &mut fmt::Formatter<'_>, r: &BigRational) -> fmt::Result {
    if r.denom().is_one() {
        write!(f, "{}", r.numer())
    } else {
        write!(f, "{}/{}", r.numer(), r.denom())
    }
}

impl fmt::Display for Arg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arg::Int(v) => write!(f, "{v}"),
            Arg::Num(r) => write_rational(f, r),
        }
    }
}

impl fmt::Display for StateRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateRef::Node(n) => {
                f.write_str(&n.name)?;
                if !n.args.is_empty() {
                    f.write_str("(")?;
                    for (i, a) in n.args.iter().enumerate() {
                        if i > 0 {
                            f.write_str(",")?;
                        }
                        write!(f, "{a}")?;
                    }
                    f.write_str(")")?;
                }
                Ok(())
            }
            StateRef::Side(d, inner) => write!(f, "{d}:[{inner}]"),
            StateRef::Enc(e) => {
                write!(f, "{}|", e.base)?;
                if let Some(n) = e.step {
                    write!(f, "{n}")?;
                }
                f.write_str("|")?;
                if let Some(r) = &e.reward {
                    write_rational(f, r)?;
                }
                Ok(())
            }
        }
    }
}

pub fn parse_rational(s: &str) -> Option<BigRational> {
    let (n, d) = match s.split_once('/') {
        Some((n, d)) => (n, d),
        None => (s, "1"),
    };
    let n: BigInt = n.trim().parse().ok()?;
    let d: BigInt = d.trim().parse().ok()?;
    if d.is_zero() {
        return None;
    }
    Some(BigRational::new(n, d))
}

/// Byte positions of `|` that are not nested inside brackets or parentheses.
fn top_level_bars(s: &str) -> Vec<usize> {
    let mut depth = 0i32;
    let mut out = Vec::new();
    for (i, c) in s.char_indices() {
        match c {
            '[' | '(' => depth += 1,
            ']' | ')' => depth -= 1,
            '|' if depth == 0 => out.push(i),
            _ => {}
        }
    }
    out
}

fn parse_label(s: &str) -> Result<StateRef, LabelError> {
    let bad = || LabelError::Malformed(s.to_string());
    let bars = top_level_bars(s);
    if bars.len() >= 2 {
        let b2 = bars[bars.len() - 1];
        let b1 = bars[bars.len() - 2];
        let base = parse_label(&s[..b1])?;
        let step_s = &s[b1 + 1..b2];
        let rew_s = &s[b2 + 1..];
        let step = if step_s.is_empty() { None } else { Some(step_s.parse().map_err(|_| bad())?) };
        let reward = if rew_s.is_empty() { None } else { Some(parse_rational(rew_s).ok_or_else(bad)?) };
        if step.is_none() && reward.is_none() {
            return Err(bad());
        }
        return Ok(StateRef::encoded(base, step, reward));
    }
    if !bars.is_empty() {
        return Err(bad());
    }
    let bytes = s.as_bytes();
    if bytes.len() >= 4 && bytes[0].is_ascii_digit() && bytes[1] == b':' && bytes[2] == b'[' {
        if !s.ends_with(']') {
            return Err(bad());
        }
        let inner = parse_label(&s[3..s.len() - 1])?;
        return Ok(StateRef::side(bytes[0] - b'0', inner));
    }
    let (name, rest) = match s.find('(') {
        Some(p) => (&s[..p], Some(&s[p..])),
        None => (s, None),
    };
    let valid_name = !name.is_empty()
        && name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
    if !valid_name {
        return Err(bad());
    }
    let mut args = SmallVec::new();
    if let Some(rest) = rest {
        if !rest.ends_with(')') || rest.len() < 3 {
            return Err(bad());
        }
        for a in rest[1..rest.len() - 1].split(',') {
            let r = parse_rational(a).ok_or_else(bad)?;
            if a.contains('/') && r.is_integer() {
                // canonical form never prints integer-valued fractions
                return Err(bad());
            }
            args.push(Arg::num(r));
        }
    }
    Ok(StateRef::Node(Node { name: Cow::Owned(name.to_string()), args }))
}

impl FromStr for StateRef {
    type Err = LabelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_label(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_examples() {
        for s in ["bot", "s(5)", "a(3,-2)", "q(4,1,-3/7)", "1:[s(2)]", "s(2)|3|", "x||-1/2", "2:[a(1)|4|5]|5|6"] {
            let l: StateRef = s.parse().unwrap();
            assert_eq!(l.to_string(), s);
        }
    }

    #[test]
    fn integer_fraction_rejected() {
        assert!("a(4/2)".parse::<StateRef>().is_err());
        assert!("a|".parse::<StateRef>().is_err());
        assert!("9x".parse::<StateRef>().is_err());
    }

    #[test]
    fn equality_by_content() {
        let a = StateRef::ints("s", &[3]);
        let b: StateRef = "s(3)".parse().unwrap();
        assert_eq!(a, b);
    }
}
