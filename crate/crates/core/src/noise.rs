//! Blind Poisson-Gaussian noise estimation.
//!
//! Under the Poisson-Gaussian model the variance of a pixel is affine in its
//! expected intensity, `v = a*m + b`. The estimator tiles the image into
//! non-overlapping `p x p` patches, removes each patch's least-squares plane
//! so smooth anatomy does not leak into the variance, and regresses patch
//! variance on patch mean with iteratively reweighted least squares:
//!
//! * base weights `1 / v_fit^2`, since the sampling variance of a sample
//!   variance grows with the square of the true variance;
//! * Huber weights on the relative residuals, threshold `k * MAD`;
//! * patches whose residual kurtosis exceeds a threshold are treated as
//!   structure (edges, texture) and dropped;
//! * patches containing pixels clipped at 0 or 1 are corrected by inverting
//!   the moments of a censored normal, so dark background (where only the
//!   Gaussian term survives) pins down `b`;
//! * other patches whose mean sits within `clip_margin` standard deviations
//!   of 0 or 1 are dropped after the first fit, because clipping shrinks
//!   their variance.
//!
//! The scalar summary injected into prompts is the standard deviation
//! predicted at mid-gray, `sigma_ref = sqrt(0.5*a + b)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::ImageBuffer;

/// Intensity at which `sigma_ref` is evaluated.
pub const REFERENCE_INTENSITY: f64 = 0.5;

const VARIANCE_FLOOR: f64 = 1e-20;
const MAD_TO_SIGMA: f64 = 1.482_602_218_505_602;
const CLIP_REFINEMENTS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("image too small: {usable} usable patches, need at least {required}")]
    ImageTooSmall { usable: usize, required: usize },
    #[error("invalid estimator config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub patch_size: usize,
    /// Patches with residual kurtosis above this are discarded as structured.
    pub max_kurtosis: f64,
    /// Huber tuning constant, multiplied by the MAD-based residual scale.
    pub huber_k: f64,
    pub irls_iterations: usize,
    pub min_patches: usize,
    /// Patches closer than this many noise sigmas to 0 or 1 are excluded.
    pub clip_margin: f64,
    /// Below this standard deviation of patch means, the slope is not
    /// identifiable and only `b` is fitted.
    pub min_intensity_spread: f64,
    /// Correct patches with clipped pixels instead of relying on the margin.
    pub declip: bool,
    /// Patches with a larger fraction of clipped pixels are discarded.
    pub max_clipped_fraction: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            patch_size: 8,
            max_kurtosis: 6.0,
            huber_k: 1.345,
            irls_iterations: 10,
            min_patches: 4,
            clip_margin: 3.0,
            min_intensity_spread: 0.02,
            declip: true,
            max_clipped_fraction: 0.9,
        }
    }
}

/// Fitted Poisson-Gaussian parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimate {
    /// Signal-dependent slope (variance per unit intensity).
    pub a: f64,
    /// Signal-independent variance.
    pub b: f64,
    pub sigma_ref: f64,
}

impl NoiseEstimate {
    /// Builds an estimate, clamping negative coefficients to zero.
    pub fn new(a: f64, b: f64) -> Self {
        let (a, b) = (a.max(0.0), b.max(0.0));
        Self {
            a,
            b,
            sigma_ref: (a * REFERENCE_INTENSITY + b).sqrt(),
        }
    }

    pub fn variance_at(&self, intensity: f64) -> f64 {
        self.a * intensity + self.b
    }
}

/// Statistics of one patch after plane removal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PatchStat {
    pub x: usize,
    pub y: usize,
    pub mean: f64,
    pub variance: f64,
    pub kurtosis: f64,
    /// Fraction of pixels at 0 or 1.
    pub clipped: f64,
    /// `mean` and `variance` were corrected for clipping.
    pub declipped: bool,
    /// Whether the patch entered the final regression.
    pub used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseFit {
    pub estimate: NoiseEstimate,
    pub patches: Vec<PatchStat>,
    /// True when patch means had too little spread and only `b` was fitted.
    pub intercept_only: bool,
}

impl NoiseFit {
    pub fn used_patches(&self) -> usize {
        self.patches.iter().filter(|p| p.used).count()
    }
}

pub fn estimate_noise(image: &ImageBuffer, cfg: &EstimatorConfig) -> Result<NoiseEstimate, NoiseError> {
    estimate_noise_detailed(image, cfg).map(|f| f.estimate)
}

/// Same as [`estimate_noise`] but keeps the per-patch statistics.
pub fn estimate_noise_detailed(image: &ImageBuffer, cfg: &EstimatorConfig) -> Result<NoiseFit, NoiseError> {
    validate_config(cfg)?;
    let mut patches = patch_statistics(image, cfg.patch_size);
    if cfg.declip {
        for p in patches
            .iter_mut()
            .filter(|p| p.clipped > 0.0 && p.clipped <= cfg.max_clipped_fraction)
        {
            if let Some((mean, variance)) = declip(p.mean, p.variance, p.mean < 0.5) {
                // the clipped fraction must agree with the fitted normal
                let side = if p.mean < 0.5 { mean } else { 1.0 - mean };
                let expected = norm_cdf(-side / variance.sqrt());
                let n = (cfg.patch_size * cfg.patch_size) as f64;
                let tol = 3.0 * (expected * (1.0 - expected) / n).sqrt() + 1.0 / n;
                if (p.clipped - expected).abs() <= tol {
                    (p.mean, p.variance, p.declipped) = (mean, variance, true);
                }
            }
        }
    }
    let candidates: Vec<usize> = patches
        .iter()
        .enumerate()
        .filter(|(_, p)| p.declipped || (p.clipped == 0.0 || !cfg.declip) && p.kurtosis <= cfg.max_kurtosis)
        .map(|(i, _)| i)
        .collect();
    if candidates.len() < cfg.min_patches {
        return Err(NoiseError::ImageTooSmall {
            usable: candidates.len(),
            required: cfg.min_patches,
        });
    }

    let mut selected = candidates.clone();
    let (mut estimate, mut intercept_only) = robust_fit(&patches, &selected, cfg);
    for _ in 0..CLIP_REFINEMENTS {
        let next: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|&i| {
                if patches[i].declipped {
                    return true;
                }
                let m = patches[i].mean;
                let sd = estimate.variance_at(m).max(0.0).sqrt();
                m >= cfg.clip_margin * sd && m <= 1.0 - cfg.clip_margin * sd
            })
            .collect();
        if next == selected || next.len() < cfg.min_patches {
            break;
        }
        selected = next;
        (estimate, intercept_only) = robust_fit(&patches, &selected, cfg);
    }

    for &i in &selected {
        patches[i].used = true;
    }
    Ok(NoiseFit {
        estimate,
        patches,
        intercept_only,
    })
}

fn validate_config(cfg: &EstimatorConfig) -> Result<(), NoiseError> {
    let bad = |s: &str| Err(NoiseError::InvalidConfig(s.to_string()));
    if cfg.patch_size < 3 {
        return bad("patch_size must be at least 3");
    }
    if cfg.min_patches < 2 {
        return bad("min_patches must be at least 2");
    }
    if !(cfg.huber_k > 0.0) || !(cfg.max_kurtosis > 0.0) || !(cfg.clip_margin >= 0.0) {
        return bad("huber_k and max_kurtosis must be positive, clip_margin non-negative");
    }
    if cfg.irls_iterations == 0 {
        return bad("irls_iterations must be at least 1");
    }
    Ok(())
}

/// Plane-detrended mean, variance and kurtosis for each full patch.
fn patch_statistics(image: &ImageBuffer, p: usize) -> Vec<PatchStat> {
    let c = (p as f64 - 1.0) / 2.0;
    // sum of (x - c)^2 over the whole patch, identical for y
    let sxx = p as f64 * (p * (p * p - 1)) as f64 / 12.0;
    let dof = (p * p - 3) as f64;
    let mut out = Vec::with_capacity((image.width() / p) * (image.height() / p));
    let mut resid = vec![0.0; p * p];
    for py in 0..image.height() / p {
        for px in 0..image.width() / p {
            let (x0, y0) = (px * p, py * p);
            let (mut sum, mut gx, mut gy, mut clipped) = (0.0, 0.0, 0.0, 0usize);
            for j in 0..p {
                for i in 0..p {
                    let z = image.get(x0 + i, y0 + j);
                    clipped += (z <= 0.0 || z >= 1.0) as usize;
                    sum += z;
                    gx += (i as f64 - c) * z;
                    gy += (j as f64 - c) * z;
                }
            }
            let mean = sum / (p * p) as f64;
            let (gx, gy) = (gx / sxx, gy / sxx);
            let mut m2 = 0.0;
            for j in 0..p {
                for i in 0..p {
                    let r = image.get(x0 + i, y0 + j) - mean - gx * (i as f64 - c) - gy * (j as f64 - c);
                    resid[j * p + i] = r;
                    m2 += r * r;
                }
            }
            let variance = m2 / dof;
            let m2n = m2 / (p * p) as f64;
            let kurtosis = if m2n > VARIANCE_FLOOR {
                resid.iter().map(|r| r.powi(4)).sum::<f64>() / (p * p) as f64 / (m2n * m2n)
            } else {
                0.0
            };
            out.push(PatchStat {
                x: x0,
                y: y0,
                mean,
                variance,
                kurtosis,
                clipped: clipped as f64 / (p * p) as f64,
                declipped: false,
                used: false,
            });
        }
    }
    out
}

fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Mean and variance of `max(0, X)` for `X ~ N(xi, 1)`.
fn censored_moments(xi: f64) -> (f64, f64) {
    let (cdf, pdf) = (norm_cdf(xi), norm_pdf(xi));
    let m1 = xi * cdf + pdf;
    let m2 = (xi * xi + 1.0) * cdf + xi * pdf;
    (m1, (m2 - m1 * m1).max(0.0))
}

/// Recovers the mean and variance of a normal from the moments of its
/// version clipped at 0 (`low`) or at 1. `mean / sd` of the clipped variable
/// increases with `xi = mu / sigma`, so `xi` is found by bisection.
fn declip(mean: f64, variance: f64, low: bool) -> Option<(f64, f64)> {
    let m = if low { mean } else { 1.0 - mean };
    if !(variance > VARIANCE_FLOOR) || !(m > 0.0) {
        return None;
    }
    let target = m / variance.sqrt();
    let ratio = |xi: f64| {
        let (m1, v1) = censored_moments(xi);
        m1 / v1.sqrt()
    };
    let (mut lo, mut hi) = (-6.0, 40.0);
    if target <= ratio(lo) {
        return None;
    }
    if target >= ratio(hi) {
        return Some((mean, variance));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let xi = 0.5 * (lo + hi);
    let sigma = (variance / censored_moments(xi).1).sqrt();
    let mu = xi * sigma;
    Some((if low { mu } else { 1.0 - mu }, sigma * sigma))
}

/// Weighted least squares for `v = a*m + b`; `None` when the design is singular.
fn weighted_line(points: &[(f64, f64)], weights: &[f64]) -> Option<(f64, f64)> {
    let (mut sw, mut sm, mut sv, mut smm, mut smv) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&(m, v), &w) in points.iter().zip(weights) {
        sw += w;
        sm += w * m;
        sv += w * v;
        smm += w * m * m;
        smv += w * m * v;
    }
    if sw <= 0.0 {
        return None;
    }
    let mbar = sm / sw;
    let sxx = smm - sm * mbar;
    if !(sxx > 1e-14 * sw) {
        return None;
    }
    let a = (smv - mbar * sv) / sxx;
    Some((a, sv / sw - a * mbar))
}

fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let sw: f64 = weights.iter().sum();
    if sw <= 0.0 {
        return 0.0;
    }
    values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / sw
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Huber weights for relative residuals, threshold `k * MAD`.
fn huber_weights(residuals: &[f64], k: f64) -> Vec<f64> {
    let mut r = residuals.to_vec();
    let med = median(&mut r);
    let mut dev: Vec<f64> = residuals.iter().map(|x| (x - med).abs()).collect();
    let delta = k * MAD_TO_SIGMA * median(&mut dev);
    residuals
        .iter()
        .map(|x| {
            let ax = x.abs();
            if delta <= 0.0 || ax <= delta {
                1.0
            } else {
                delta / ax
            }
        })
        .collect()
}

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mu = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n).sqrt()
}

fn relative_residuals(points: &[(f64, f64)], (a, b): (f64, f64)) -> Vec<f64> {
    points
        .iter()
        .map(|&(m, v)| {
            let f = (a * m.abs() + b).max(VARIANCE_FLOOR);
            (v - f) / f
        })
        .collect()
}

fn irls(pts: &[(f64, f64)], intercept_only: bool, cfg: &EstimatorConfig) -> Option<(f64, f64)> {
    let mut huber = vec![1.0; pts.len()];
    let mut fit: Option<(f64, f64)> = None;
    for _ in 0..cfg.irls_iterations {
        let predicted: Vec<f64> = match fit {
            Some((a, b)) => pts
                .iter()
                .map(|&(m, _)| (a * m.abs() + b).max(VARIANCE_FLOOR))
                .collect(),
            None => vec![1.0; pts.len()],
        };
        let weights: Vec<f64> = huber.iter().zip(&predicted).map(|(h, f)| h / (f * f)).collect();
        let next = if intercept_only {
            let v: Vec<f64> = pts.iter().map(|p| p.1).collect();
            (0.0, weighted_mean(&v, &weights))
        } else {
            match weighted_line(pts, &weights) {
                Some(ab) => ab,
                None => break,
            }
        };
        fit = Some(next);
        huber = huber_weights(&relative_residuals(pts, next), cfg.huber_k);
    }
    fit
}

fn robust_fit(patches: &[PatchStat], selected: &[usize], cfg: &EstimatorConfig) -> (NoiseEstimate, bool) {
    let points: Vec<(f64, f64)> = selected
        .iter()
        .map(|&i| (patches[i].mean, patches[i].variance))
        .collect();
    let means: Vec<f64> = points.iter().map(|p| p.0).collect();
    let intercept_only = std_dev(&means) < cfg.min_intensity_spread;
    let (a, b) = irls(&points, intercept_only, cfg).unwrap_or((0.0, 0.0));
    (NoiseEstimate::new(a, b), intercept_only)
}

/// Rounds half away from zero (half-up for the non-negative values used here)
/// after snapping away binary representation error below 1e-9 of a unit.
pub fn round_half_up(value: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = (value * scale * 1e9).round() / 1e9;
    (scaled.abs() + 0.5).floor().copysign(scaled) / scale
}

/// The scalar noise metadata embedded in prompts: `sigma_ref` rounded half-up.
/// `decimals` is clamped into `[1, 6]`.
pub fn summarize_noise(estimate: &NoiseEstimate, decimals: u32) -> f64 {
    round_half_up(estimate.sigma_ref, decimals.clamp(1, 6)) + 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gaussian_field, SynthRng};

    #[test]
    fn noiseless_constant_image_is_zero() {
        let img = ImageBuffer::filled(64, 64, 0.5).unwrap();
        let est = estimate_noise(&img, &EstimatorConfig::default()).unwrap();
        assert!(est.a.abs() < 1e-6 && est.b.abs() < 1e-6 && est.sigma_ref.abs() < 1e-6);
    }

    #[test]
    fn additive_gaussian_on_constant_image() {
        let mut rng = SynthRng::new(11);
        let img = gaussian_field(&mut rng, 128, 128, |_, _| 0.5, 0.01);
        // oracle: sample variance of the injected field
        let pixels = img.pixels();
        let mu = pixels.iter().sum::<f64>() / pixels.len() as f64;
        let oracle = pixels.iter().map(|p| (p - mu) * (p - mu)).sum::<f64>() / (pixels.len() - 1) as f64;
        let est = estimate_noise(&img, &EstimatorConfig::default()).unwrap();
        assert!((est.b / 1e-4 - 1.0).abs() < 0.3, "b = {}", est.b);
        assert!((est.b / oracle - 1.0).abs() < 0.3);
        assert!(est.a < 1e-4);
    }

    #[test]
    fn too_small_image() {
        let img = ImageBuffer::filled(15, 24, 0.5).unwrap();
        assert_eq!(
            estimate_noise(&img, &EstimatorConfig::default()),
            Err(NoiseError::ImageTooSmall { usable: 3, required: 4 })
        );
    }

    #[test]
    fn summarize_rounds_half_up() {
        let s = |sigma: f64, d| {
            summarize_noise(
                &NoiseEstimate {
                    a: 0.0,
                    b: 0.0,
                    sigma_ref: sigma,
                },
                d,
            )
        };
        assert_eq!(s(0.0034, 3), 0.003);
        assert_eq!(s(0.0025, 3), 0.003);
        assert_eq!(s(0.00250, 3), 0.003);
        assert_eq!(s(0.0, 4), 0.0);
        assert_eq!(s(0.0049, 3), 0.005);
        assert_eq!(s(0.123456789, 9), 0.123457);
    }

    #[test]
    fn sigma_ref_definition() {
        let e = NoiseEstimate::new(0.004, 1e-5);
        assert_eq!(e.sigma_ref, (0.004 * 0.5 + 1e-5f64).sqrt());
        let c = NoiseEstimate::new(-1.0, -2.0);
        assert_eq!((c.a, c.b, c.sigma_ref), (0.0, 0.0, 0.0));
    }

    #[test]
    fn censored_ratio_is_monotone() {
        let mut last = 0.0;
        for i in 0..460 {
            let (m1, v1) = censored_moments(-6.0 + 0.1 * i as f64);
            let r = m1 / v1.sqrt();
            assert!(r > last);
            last = r;
        }
    }

    #[test]
    fn declip_inverts_censored_moments() {
        for (mu, sigma) in [(0.0, 0.01), (0.005, 0.01), (-0.004, 0.003), (0.02, 0.01)] {
            let (m1, v1) = censored_moments(mu / sigma);
            let (m, v) = declip(m1 * sigma, v1 * sigma * sigma, true).unwrap();
            assert!(
                (m - mu).abs() < 1e-9 && (v.sqrt() - sigma).abs() < 1e-9,
                "{mu} {sigma}: {m} {v}"
            );
            let (m, v) = declip(1.0 - m1 * sigma, v1 * sigma * sigma, false).unwrap();
            assert!((m - (1.0 - mu)).abs() < 1e-9 && (v.sqrt() - sigma).abs() < 1e-9);
        }
    }

    #[test]
    fn dark_background_is_declipped() {
        let mut rng = SynthRng::new(4);
        let img = gaussian_field(&mut rng, 64, 64, |_, _| 0.0, 0.01);
        let fit = estimate_noise_detailed(&img, &EstimatorConfig::default()).unwrap();
        assert!(fit.patches.iter().all(|p| p.declipped && p.used));
        assert!(
            (fit.estimate.b.sqrt() / 0.01 - 1.0).abs() < 0.1,
            "b = {}",
            fit.estimate.b
        );
    }

    #[test]
    fn structured_patch_is_rejected() {
        // a single bright pixel inside a flat patch has huge kurtosis
        let mut px = vec![0.5; 32 * 32];
        px[3 * 32 + 3] = 0.9;
        let img = ImageBuffer::new(32, 32, px).unwrap();
        let fit = estimate_noise_detailed(&img, &EstimatorConfig::default()).unwrap();
        let spike = fit.patches.iter().find(|p| p.x == 0 && p.y == 0).unwrap();
        assert!(spike.kurtosis > 6.0);
        assert!(!spike.used);
    }
}
