//! Deterministic offline backend.
//!
//! Score replies follow `clamp(4 - 40 * sigma + eps, 0, 4)` where `sigma` is
//! the estimated noise of the target image and `eps` is uniform jitter drawn
//! from a generator keyed by `(seed, cache key)`. When a prompt carries
//! feedback lines, the mock instead predicts from a line fitted to them,
//! without jitter.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use sha2::{Digest, Sha256};

use super::{cache_key, BackendConfig, GatewayError};
use crate::format::compact;
use crate::image::decode_png;
use crate::noise::{estimate_noise, EstimatorConfig};
use crate::prompt::{Prompt, PromptKind};

/// Half-width of the uniform jitter.
pub const MOCK_JITTER: f64 = 0.25;

pub fn mock_score_value(sigma: f64, eps: f64) -> f64 {
    (4.0 - 40.0 * sigma + eps).clamp(0.0, 4.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockOutcome {
    pub score: f64,
    pub sigma: f64,
    pub eps: f64,
    /// Number of feedback lines the score was calibrated on.
    pub feedback_used: usize,
}

fn rng_for(seed: u64, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn target_sigma(prompt: &Prompt) -> Result<f64, GatewayError> {
    let png = prompt
        .target_image()
        .ok_or_else(|| GatewayError::Prompt("prompt has no target image".into()))?;
    let image = decode_png(png, "target image").map_err(|e| GatewayError::Prompt(e.to_string()))?;
    // images too small to estimate are treated as clean
    Ok(estimate_noise(&image, &EstimatorConfig::default())
        .map(|e| e.sigma_ref)
        .unwrap_or(0.0))
}

fn feedback_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)radiologist (\d+(?:\.\d+)?)\b.*\bnoise: (\d+(?:\.\d+)?)\s*$").unwrap())
}

/// `(truth, noise)` pairs read from feedback lines.
fn feedback_pairs(prompt: &Prompt) -> Vec<(f64, f64)> {
    let text = prompt.all_text();
    feedback_re()
        .captures_iter(&text)
        .filter_map(|c| Some((c[1].parse().ok()?, c[2].parse().ok()?)))
        .collect()
}

/// Least-squares line `truth ~ noise` through the feedback pairs as
/// `(intercept, slope)`. `None` with fewer than two distinct noise values or a
/// non-negative slope.
pub(crate) fn calibrate(pairs: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = pairs.len() as f64;
    if pairs.len() < 2 {
        return None;
    }
    let my = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mx = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.1 - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.1 - mx) * (p.0 - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    if slope >= 0.0 {
        return None;
    }
    Some((my - slope * mx, slope))
}

pub(crate) fn score_outcome(prompt: &Prompt, seed: u64, key: &str) -> Result<MockOutcome, GatewayError> {
    let sigma = target_sigma(prompt)?;
    let u: f64 = rng_for(seed, key).random();
    let unit = 2.0 * u - 1.0;
    let pairs = feedback_pairs(prompt);
    let outcome = match calibrate(&pairs) {
        Some((intercept, slope)) => MockOutcome {
            score: (intercept + slope * sigma).clamp(0.0, 4.0),
            sigma,
            eps: 0.0,
            feedback_used: pairs.len(),
        },
        None => {
            let eps = unit * MOCK_JITTER;
            MockOutcome {
                score: mock_score_value(sigma, eps),
                sigma,
                eps,
                feedback_used: 0,
            }
        }
    };
    Ok(outcome)
}

fn degradation(sigma: f64) -> &'static str {
    if sigma >= 0.05 {
        "heavy quantum noise obscuring low-contrast detail"
    } else if sigma >= 0.02 {
        "moderate noise with mild loss of low-contrast detail"
    } else {
        "minimal noise; edges and soft-tissue contrast preserved"
    }
}

fn vocabulary_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"from: ([A-Za-z_, -]+)\.").unwrap())
}

/// Picks a label from the vocabulary listed in a region query.
pub fn mock_region(prompt: &Prompt, seed: u64, key: &str) -> String {
    let text = prompt.all_text();
    let vocab: Vec<&str> = vocabulary_re()
        .captures(&text)
        .map(|c| {
            c.get(1)
                .unwrap()
                .as_str()
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .collect()
        })
        .unwrap_or_default();
    let label = if vocab.is_empty() {
        "unknown"
    } else {
        vocab[rng_for(seed, key).random_range(0..vocab.len())]
    };
    format!("REGION: {label}")
}

/// Raw reply for any prompt kind.
pub fn mock_response(prompt: &Prompt, seed: u64, key: &str) -> Result<String, GatewayError> {
    match prompt.kind {
        PromptKind::Region => Ok(mock_region(prompt, seed, key)),
        PromptKind::Score => {
            let o = score_outcome(prompt, seed, key)?;
            Ok(format!(
                "SCORE: {}\nEXPLANATION: Dominant degradation: {} (estimated noise {:.4}).",
                compact(o.score, 4),
                degradation(o.sigma),
                o.sigma
            ))
        }
    }
}

/// Mock reply keyed by the default mock backend's cache key.
pub fn mock_score(prompt: &Prompt, seed: u64) -> Result<String, GatewayError> {
    let key = cache_key(prompt, &BackendConfig::mock(seed));
    mock_response(prompt, seed, &key)
}
