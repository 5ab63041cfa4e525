use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SEP: usize = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const SEP_TOKEN: &str = "<sep>";

const SPECIALS: [&str; 4] = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, SEP_TOKEN];

/// Closed token table. Ids 0..4 are the specials, the rest are assigned in
/// first-seen order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: IndexSet<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self { tokens: SPECIALS.iter().map(|s| s.to_string()).collect() }
    }
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vocabulary from every whitespace token of `texts`.
    pub fn from_texts<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::new();
        for t in texts {
            for tok in tokenize(t.as_ref()) {
                v.insert(tok);
            }
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> usize {
        self.tokens.insert_full(token.to_owned()).0
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.tokens.get_index_of(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get_index(id).map(String::as_str)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        tokenize(text).map(|t| self.id(t).ok_or_else(|| Error::UnknownToken(t.to_owned()))).collect()
    }

    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>> {
        tokens.iter().map(|t| self.id(t.as_ref()).ok_or_else(|| Error::UnknownToken(t.as_ref().to_owned()))).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<&str>> {
        ids.iter().map(|&i| self.token(i).ok_or(Error::TokenOutOfRange { id: i, size: self.len() })).collect()
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(list: Vec<String>) -> Result<Self> {
        if list.len() < SPECIALS.len() || list.iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(Error::bad_format("vocabulary", "must start with <pad> <bos> <eos> <sep>"));
        }
        let n = list.len();
        let tokens: IndexSet<String> = list.into_iter().collect();
        if tokens.len() != n {
            return Err(Error::bad_format("vocabulary", "duplicate token"));
        }
        Ok(Self { tokens })
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens.into_iter().collect()
    }
}

pub fn tokenize(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_come_first() {
        let v = Vocab::from_texts(["a b", "b c <sep> a"]);
        assert_eq!(v.id(SEP_TOKEN), Some(SEP));
        assert_eq!(v.id("a"), Some(4));
        assert_eq!(v.id("c"), Some(6));
        assert_eq!(v.len(), 7);
        assert_eq!(v.encode("c  a\tb").unwrap(), vec![6, 4, 5]);
        assert!(matches!(v.encode("a zzz"), Err(Error::UnknownToken(t)) if t == "zzz"));
        assert_eq!(v.decode(&[1, 6]).unwrap(), vec![BOS_TOKEN, "c"]);
        assert!(v.decode(&[7]).is_err());
    }

    #[test]
    fn serde_round_trip_and_validation() {
        let v = Vocab::from_texts(["x y z"]);
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&s).unwrap(), v);
        assert!(serde_json::from_str::<Vocab>(r#"["a","b"]"#).is_err());
        assert!(serde_json::from_str::<Vocab>(r#"["<pad>","<bos>","<eos>","<sep>","a","a"]"#).is_err());
    }
}
