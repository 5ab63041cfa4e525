use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::vocab::{BOS, EOS, SEP};
use crate::error::Result;

/// Greedy decoding output split at the first SEP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    /// Every emitted token, without the final EOS.
    pub tokens: Vec<usize>,
    pub rationale: Vec<usize>,
    /// Tokens after the first SEP; empty when no SEP was emitted.
    pub answer: Vec<usize>,
    pub missing_sep: bool,
    /// `max_len` tokens were emitted without an EOS.
    pub truncated: bool,
}

impl Generation {
    fn from_tokens(tokens: Vec<usize>, truncated: bool) -> Self {
        let (rationale, answer, missing_sep) = match tokens.iter().position(|&t| t == SEP) {
            Some(i) => (tokens[..i].to_vec(), tokens[i + 1..].to_vec(), false),
            None => (tokens.clone(), Vec::new(), true),
        };
        Self { tokens, rationale, answer, missing_sep, truncated }
    }
}

/// Index of the largest logit; the lowest index wins ties.
pub fn argmax(logits: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding against any next-token scorer.
///
/// `step` receives the token just fed (BOS first) and returns the logits of
/// the next position. Decoding stops at EOS or after `max_len` tokens.
pub fn generate_with<F>(max_len: usize, mut step: F) -> Result<Generation>
where
    F: FnMut(usize) -> Result<Array1<f64>>,
{
    let mut tokens = Vec::with_capacity(max_len);
    let mut fed = BOS;
    while tokens.len() < max_len {
        let next = argmax(&step(fed)?);
        if next == EOS {
            return Ok(Generation::from_tokens(tokens, false));
        }
        tokens.push(next);
        fed = next;
    }
    Ok(Generation::from_tokens(tokens, true))
}
