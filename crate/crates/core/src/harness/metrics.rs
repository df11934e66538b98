//! Answer scoring over free-text responses.

use serde::{Deserialize, Serialize};

/// Lowercases, drops punctuation and collapses whitespace.
pub fn normalize(text: &str) -> String {
    let kept: String = text
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// `(partial, complete)`: whether at least one, respectively every, gold
/// answer occurs in the normalized response.
pub fn score_match(response: &str, gold: &[String]) -> (bool, bool) {
    let text = normalize(response);
    let hits: Vec<bool> = gold.iter().map(|g| text.contains(&normalize(g))).collect();
    (hits.iter().any(|&h| h), !hits.is_empty() && hits.iter().all(|&h| h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Yes,
    No,
}

impl std::str::FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match normalize(s).as_str() {
            "yes" => Ok(Verdict::Yes),
            "no" => Ok(Verdict::No),
            other => Err(format!("'{other}' is not yes or no")),
        }
    }
}

/// Affirmative and negative words recognised by [`score_boolean`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BooleanLexicon {
    pub yes: Vec<String>,
    pub no: Vec<String>,
}

impl Default for BooleanLexicon {
    fn default() -> Self {
        Self { yes: vec!["yes".into(), "true".into()], no: vec!["no".into(), "false".into()] }
    }
}

impl BooleanLexicon {
    /// The label of the first yes/no word in `response`.
    pub fn classify(&self, response: &str) -> Option<Verdict> {
        normalize(response).split_whitespace().find_map(|w| {
            if self.yes.iter().any(|y| y == w) {
                Some(Verdict::Yes)
            } else if self.no.iter().any(|n| n == w) {
                Some(Verdict::No)
            } else {
                None
            }
        })
    }
}

/// Correct when the first yes/no word of `response` equals `gold`.
pub fn score_boolean(response: &str, gold: Verdict) -> bool {
    score_boolean_with(&BooleanLexicon::default(), response, gold)
}

pub fn score_boolean_with(lexicon: &BooleanLexicon, response: &str, gold: Verdict) -> bool {
    lexicon.classify(response) == Some(gold)
}
