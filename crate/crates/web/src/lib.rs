//! wasm-bindgen exports for `www/index.html`.

use base64::Engine;
use ctiqa::gateway::{mock_score, parse_score};
use ctiqa::image::ImageBuffer;
use ctiqa::metrics::evaluate;
use ctiqa::noise::{estimate_noise_detailed, EstimatorConfig};
use ctiqa::prompt::{build_zero_shot, PromptConfig};
use ctiqa::report::{emit_histogram, emit_scatter};
use ctiqa::synth::{air_phantom, poisson_gaussian, SynthRng};
use serde_json::json;
use wasm_bindgen::prelude::*;

const SIZE: usize = 128;

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn phantom(a: f64, b: f64, seed: u64) -> ImageBuffer {
    let mut rng = SynthRng::new(seed);
    poisson_gaussian(&mut rng, SIZE, SIZE, air_phantom(SIZE, SIZE), a, b)
}

fn png_data_url(img: &ImageBuffer) -> Result<String, JsError> {
    let png = img.to_png16().map_err(err)?;
    Ok(format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(png)
    ))
}

/// Simulates a phantom with noise `(a, b)` and estimates it back.
/// Returns JSON: fitted parameters, a PNG preview and per-patch statistics.
#[wasm_bindgen]
pub fn explore_noise(a: f64, b: f64, seed: u64) -> Result<String, JsError> {
    if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
        return Err(JsError::new("a and b must be non-negative"));
    }
    let img = phantom(a, b, seed);
    let fit = estimate_noise_detailed(&img, &EstimatorConfig::default()).map_err(err)?;
    let patches: Vec<_> = fit
        .patches
        .iter()
        .map(|p| json!([p.mean, p.variance, p.used]))
        .collect();
    Ok(json!({
        "a": fit.estimate.a,
        "b": fit.estimate.b,
        "sigma_ref": fit.estimate.sigma_ref,
        "true_sigma_ref": (0.5 * a + b).sqrt(),
        "used": fit.used_patches(),
        "image": png_data_url(&img)?,
        "patches": patches,
    })
    .to_string())
}

/// Scores the same phantom with the offline mock model (zero-shot prompt).
#[wasm_bindgen]
pub fn mock_rate(a: f64, b: f64, seed: u64, model_seed: u64) -> Result<String, JsError> {
    let prompt = build_zero_shot(&phantom(a, b, seed), &PromptConfig::default()).map_err(err)?;
    let raw = mock_score(&prompt, model_seed).map_err(err)?;
    let parsed = parse_score(&raw).map_err(err)?;
    Ok(json!({
        "score": parsed.score,
        "explanation": parsed.explanation,
        "prompt": prompt.all_text(),
    })
    .to_string())
}

fn numbers(text: &str) -> Result<Vec<f64>, JsError> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| JsError::new(&format!("not a number: {t}")))
        })
        .collect()
}

/// PLCC, SROCC, KROCC and Overall for two whitespace or comma separated
/// lists, plus the scatter and histogram SVGs.
#[wasm_bindgen]
pub fn evaluate_lists(truth: &str, pred: &str) -> Result<String, JsError> {
    let (t, p) = (numbers(truth)?, numbers(pred)?);
    let m = evaluate(&t, &p).map_err(err)?;
    Ok(json!({
        "metrics": m,
        "scatter": emit_scatter(&t, &p).map_err(err)?,
        "histogram": emit_histogram(&t, &p).map_err(err)?,
    })
    .to_string())
}
