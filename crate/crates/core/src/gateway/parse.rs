//! Response parsing for score and region replies.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub total_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub score: f64,
    pub explanation: String,
    pub raw: String,
    /// The number found in the reply was outside `[0, 4]` and was clamped.
    pub clamped: bool,
    /// Found via the conversational fallback rather than the `SCORE:` grammar.
    pub fallback: bool,
    pub usage: Option<Usage>,
}

fn score_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?im)^[\s>*_#-]*score[\s*_]*[:=][\s*_]*([-+]?(?:\d+(?:\.\d*)?|\.\d+))").unwrap())
}

fn explanation_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?ims)^[\s>*_#-]*explanation[\s*_]*:[\s*_]*(.*)").unwrap())
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // a number not glued to a letter, digit or decimal point on its left
    RE.get_or_init(|| Regex::new(r"(?:^|[^\w.])(-?(?:\d+(?:\.\d+)?|\.\d+))").unwrap())
}

/// Parses a score reply.
///
/// The `SCORE: <number>` line wins when present; its value is clamped into
/// `[0, 4]` and flagged if outside. Otherwise the first number in `[0, 4]`
/// anywhere in the text is taken.
pub fn parse_score(raw: &str) -> Result<ScoredResponse, GatewayError> {
    let explanation = explanation_re().captures(raw).map(|c| c[1].trim().to_string());
    if let Some(c) = score_re().captures(raw) {
        if let Ok(v) = c[1].parse::<f64>() {
            if v.is_finite() {
                let score = v.clamp(0.0, 4.0);
                return Ok(ScoredResponse {
                    score,
                    explanation: explanation.unwrap_or_default(),
                    raw: raw.to_string(),
                    clamped: score != v,
                    fallback: false,
                    usage: None,
                });
            }
        }
    }
    for c in number_re().captures_iter(raw) {
        let Ok(v) = c[1].parse::<f64>() else { continue };
        if (0.0..=4.0).contains(&v) {
            return Ok(ScoredResponse {
                score: v,
                explanation: explanation.unwrap_or_else(|| raw.trim().to_string()),
                raw: raw.to_string(),
                clamped: false,
                fallback: true,
                usage: None,
            });
        }
    }
    Err(GatewayError::NoScoreFound(preview(raw)))
}

fn region_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?im)^[\s*_]*region[\s*_]*:[\s*_]*([A-Za-z][A-Za-z _-]*)").unwrap())
}

/// Extracts `REGION: <label>` and checks it against `vocabulary`
/// (case-insensitive). Returns the vocabulary spelling.
pub fn parse_region(raw: &str, vocabulary: &[String]) -> Option<String> {
    let c = region_re().captures(raw)?;
    let label = c[1].trim().trim_end_matches(['.', '*', '_']).trim();
    vocabulary.iter().find(|v| v.eq_ignore_ascii_case(label)).cloned()
}

fn preview(raw: &str) -> String {
    let t: String = raw.chars().take(80).collect();
    if raw.chars().count() > 80 {
        format!("{t}...")
    } else {
        t
    }
}
