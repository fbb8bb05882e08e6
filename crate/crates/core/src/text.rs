//! Tokenization, value normalization and lemmatization.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;

pub const NOT_MENTIONED: &str = "not mentioned";
pub const DONT_CARE: &str = "don't care";

/// Case-fold and collapse internal whitespace.
pub fn normalize_value(value: &str) -> String {
    value
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Canonical form of an annotated value, mapping the dataset's spellings of
/// the two special answers onto [`NOT_MENTIONED`] and [`DONT_CARE`].
pub fn canonical_value(value: &str) -> String {
    let v = normalize_value(value);
    match v.as_str() {
        "" | "none" | "not mentioned" | "not given" => NOT_MENTIONED.to_string(),
        "dontcare" | "dont care" | "don't care" | "do n't care" | "do nt care"
        | "doesn't care" | "does not care" | "any" => DONT_CARE.to_string(),
        _ => v,
    }
}

fn token_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\d{1,2}:\d{2}|[\p{L}\p{N}]+(?:'[\p{L}\p{N}]+)*|[^\s\p{L}\p{N}]")
            .expect("token regex")
    })
}

/// Lowercase, split on whitespace and punctuation; clock times such as
/// `08:15` stay single tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    token_regex()
        .find_iter(&lower)
        .map(|m| m.as_str().to_string())
        .collect()
}

/// Maps a token to its lemma.
pub trait Lemmatizer: Send + Sync {
    fn lemma(&self, token: &str) -> String;

    fn lemmatize(&self, tokens: &[String]) -> Vec<String> {
        tokens.iter().map(|t| self.lemma(t)).collect()
    }
}

/// Suffix-stripping English lemmatizer with an exceptions table.
#[derive(Debug, Clone)]
pub struct RuleLemmatizer {
    exceptions: HashMap<String, String>,
}

impl Default for RuleLemmatizer {
    fn default() -> Self {
        let pairs = [
            ("children", "child"),
            ("men", "man"),
            ("women", "woman"),
            ("people", "people"),
            ("was", "be"),
            ("were", "be"),
            ("is", "be"),
            ("are", "be"),
            ("been", "be"),
            ("went", "go"),
            ("left", "leave"),
            ("this", "this"),
            ("has", "have"),
            ("had", "have"),
            ("bus", "bus"),
            ("plus", "plus"),
            ("yes", "yes"),
            ("guesthouse", "guesthouse"),
            ("guesthouses", "guesthouse"),
            ("nights", "night"),
            ("days", "day"),
            ("cheaper", "cheap"),
            ("cheapest", "cheap"),
            ("better", "good"),
            ("best", "good"),
        ];
        Self {
            exceptions: pairs
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        }
    }
}

impl RuleLemmatizer {
    pub fn with_exception(mut self, word: &str, lemma: &str) -> Self {
        self.exceptions.insert(word.to_string(), lemma.to_string());
        self
    }
}

fn ends_with_any(word: &str, suffixes: &[&str]) -> bool {
    suffixes.iter().any(|s| word.ends_with(s))
}

impl Lemmatizer for RuleLemmatizer {
    fn lemma(&self, token: &str) -> String {
        if let Some(l) = self.exceptions.get(token) {
            return l.clone();
        }
        if !token.bytes().all(|c| c.is_ascii_alphabetic()) || token.len() <= 3 {
            return token.to_string();
        }
        let w = token;
        let n = w.len();
        if w.ends_with("ily") && n > 5 {
            return format!("{}y", &w[..n - 3]);
        }
        if w.ends_with("ly") && n > 4 {
            return w[..n - 2].to_string();
        }
        if w.ends_with("ied") && n > 5 {
            return format!("{}y", &w[..n - 3]);
        }
        if ends_with_any(w, &["ked", "ssed"]) && n > 5 {
            return w[..n - 2].to_string();
        }
        if ends_with_any(w, &["ced", "ged", "ved", "zed", "sed"]) && n > 5 {
            return w[..n - 1].to_string();
        }
        if w.ends_with("ed") && n > 4 {
            return w[..n - 2].to_string();
        }
        if ends_with_any(w, &["cing", "ging", "ving", "zing"]) && n > 6 {
            return format!("{}e", &w[..n - 3]);
        }
        if w.ends_with("ing") && n > 5 {
            return w[..n - 3].to_string();
        }
        if w.ends_with("ies") && n > 4 {
            return format!("{}y", &w[..n - 3]);
        }
        if ends_with_any(w, &["sses", "ches", "shes", "xes"]) {
            return w[..n - 2].to_string();
        }
        if w.ends_with('s') && !ends_with_any(w, &["ss", "us", "is"]) {
            return w[..n - 1].to_string();
        }
        w.to_string()
    }
}
