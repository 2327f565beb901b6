//! Seeded synthetic images and datasets.
//!
//! Used by the test suites, the bundled demo dataset and the browser demo.
//! Everything here is a pure function of its seed.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::dataset::{save_manifest, DatasetError, ImageRecord, Split};
use crate::image::{ImageBuffer, ImageError};
use crate::noise::{estimate_noise, summarize_noise, EstimatorConfig};

pub struct SynthRng(ChaCha8Rng);

impl SynthRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.0.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        Normal::new(0.0, 1.0).unwrap().sample(&mut self.0)
    }

    pub fn poisson(&mut self, lambda: f64) -> f64 {
        if lambda <= 0.0 {
            return 0.0;
        }
        Poisson::new(lambda).unwrap().sample(&mut self.0)
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }
}

/// `mean(x, y) + N(0, sigma^2)` per pixel, clamped to `[0, 1]`.
pub fn gaussian_field(
    rng: &mut SynthRng,
    width: usize,
    height: usize,
    mean: impl Fn(usize, usize) -> f64,
    sigma: f64,
) -> ImageBuffer {
    let mut px = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            px.push(mean(x, y) + sigma * rng.normal());
        }
    }
    ImageBuffer::from_clamped(width, height, px).expect("dimensions are non-zero")
}

/// Poisson-Gaussian observation `a * Poisson(m / a) + N(0, b)`, clamped to `[0, 1]`.
/// With `a = 0` the signal-dependent part vanishes.
pub fn poisson_gaussian(
    rng: &mut SynthRng,
    width: usize,
    height: usize,
    mean: impl Fn(usize, usize) -> f64,
    a: f64,
    b: f64,
) -> ImageBuffer {
    let sd = b.max(0.0).sqrt();
    let mut px = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let m = mean(x, y);
            let signal = if a > 0.0 { a * rng.poisson(m / a) } else { m };
            px.push(signal + sd * rng.normal());
        }
    }
    ImageBuffer::from_clamped(width, height, px).expect("dimensions are non-zero")
}

/// Diagonal ramp from `lo` (top-left) to `hi` (bottom-right).
pub fn diagonal_ramp(width: usize, height: usize, lo: f64, hi: f64) -> impl Fn(usize, usize) -> f64 {
    let span = (width + height).saturating_sub(2).max(1) as f64;
    move |x, y| lo + (hi - lo) * (x + y) as f64 / span
}

/// Elliptical body holding a diagonal ramp from 0.1 to 0.9, on a zero-valued
/// air background with a hard edge.
pub fn air_phantom(width: usize, height: usize) -> impl Fn(usize, usize) -> f64 {
    let (w, h) = (width as f64, height as f64);
    let ramp = diagonal_ramp(width, height, 0.1, 0.9);
    move |x, y| {
        let dx = (x as f64 + 0.5 - w / 2.0) / (0.45 * w);
        let dy = (y as f64 + 0.5 - h / 2.0) / (0.35 * h);
        if dx * dx + dy * dy > 1.0 {
            0.0
        } else {
            ramp(x, y)
        }
    }
}

/// Anatomical regions used by the synthetic phantoms.
pub const PHANTOM_REGIONS: [&str; 5] = ["abdomen", "chest", "pelvis", "liver", "kidney"];

/// Smooth phantom: an elliptical body with a few Gaussian "organs",
/// intensities kept within roughly `[0.15, 0.7]`.
pub fn phantom(width: usize, height: usize, region: usize, rng: &mut SynthRng) -> impl Fn(usize, usize) -> f64 {
    let (w, h) = (width as f64, height as f64);
    let organs: Vec<(f64, f64, f64, f64)> = (0..3 + region % 3)
        .map(|_| {
            (
                rng.uniform(0.3, 0.7) * w,
                rng.uniform(0.3, 0.7) * h,
                rng.uniform(0.2, 0.35) * w,
                rng.uniform(-0.08, 0.1),
            )
        })
        .collect();
    let aspect = 0.35 + 0.05 * region as f64;
    move |x, y| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        let dx = (fx - w / 2.0) / (0.45 * w);
        let dy = (fy - h / 2.0) / (aspect * h + 0.1 * h);
        // soft body boundary
        let body = 1.0 / (1.0 + (4.0 * ((dx * dx + dy * dy).sqrt() - 1.0)).exp());
        let mut v = 0.2 + 0.3 * body;
        for &(cx, cy, r, amp) in &organs {
            let d2 = ((fx - cx).powi(2) + (fy - cy).powi(2)) / (r * r);
            v += amp * body * (-0.5 * d2).exp();
        }
        v.clamp(0.15, 0.7)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub train: usize,
    pub test: usize,
    pub size: usize,
    pub seed: u64,
    /// Number of simulated raters whose integer scores are averaged.
    pub raters: usize,
    /// Standard deviation of a single rater around the latent quality.
    pub rater_sd: f64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            train: 40,
            test: 10,
            size: 64,
            seed: 2023,
            raters: 5,
            rater_sd: 0.36,
        }
    }
}

/// Mid-gray noise sigma range of the synthetic scans.
pub const SYNTH_SIGMA_RANGE: (f64, f64) = (0.002, 0.09);

/// Latent quality implied by a noise level: 4 at zero noise, 0 at sigma = 0.1.
pub fn latent_quality(sigma_ref: f64) -> f64 {
    (4.0 - 40.0 * sigma_ref).clamp(0.0, 4.0)
}

pub struct SyntheticItem {
    pub record: ImageRecord,
    pub image: ImageBuffer,
    /// Generating mid-gray sigma.
    pub sigma: f64,
}

/// Generates records and images. Records carry the phantom's region and the
/// estimated noise summary (3 decimals); paths are `images/<id>.png`.
pub fn generate_dataset(spec: &SyntheticDatasetSpec) -> Vec<SyntheticItem> {
    let mut rng = SynthRng::new(spec.seed);
    let total = spec.train + spec.test;
    let mut items = Vec::with_capacity(total);
    for i in 0..total {
        let (split, id) = if i < spec.train {
            (Split::Train, format!("train_{i:03}"))
        } else {
            (Split::Test, format!("test_{:03}", i - spec.train))
        };
        let region = i % PHANTOM_REGIONS.len();
        let sigma = rng.uniform(SYNTH_SIGMA_RANGE.0, SYNTH_SIGMA_RANGE.1);
        // 80% of the mid-gray variance is signal dependent
        let (a, b) = (1.6 * sigma * sigma, 0.2 * sigma * sigma);
        let mean = phantom(spec.size, spec.size, region, &mut rng);
        // stored as 16-bit PNG; estimate on exactly what a reader will decode
        let image = poisson_gaussian(&mut rng, spec.size, spec.size, mean, a, b).quantized16();
        let q = latent_quality(sigma);
        let raters = spec.raters.max(1);
        let score = (0..raters)
            .map(|_| (q + spec.rater_sd * rng.normal()).round().clamp(0.0, 4.0))
            .sum::<f64>()
            / raters as f64;
        let noise = estimate_noise(&image, &EstimatorConfig::default())
            .map(|e| summarize_noise(&e, 3))
            .ok();
        items.push(SyntheticItem {
            record: ImageRecord {
                path: PathBuf::from(format!("images/{id}.png")),
                id,
                split,
                score: Some((score * 1e6).round() / 1e6),
                region: Some(PHANTOM_REGIONS[region].to_string()),
                noise,
            },
            image,
            sigma,
        });
    }
    items
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Writes `manifest.csv` (with region and noise), `manifest_raw.csv`
/// (metadata columns empty) and the PNG images under `dir`.
pub fn write_dataset(dir: &Path, spec: &SyntheticDatasetSpec) -> Result<Vec<ImageRecord>, SynthError> {
    std::fs::create_dir_all(dir.join("images"))?;
    let items = generate_dataset(spec);
    for item in &items {
        std::fs::write(dir.join(&item.record.path), item.image.to_png16()?)?;
    }
    let records: Vec<ImageRecord> = items.into_iter().map(|i| i.record).collect();
    save_manifest(&dir.join("manifest.csv"), &records)?;
    let raw: Vec<ImageRecord> = records
        .iter()
        .cloned()
        .map(|mut r| {
            r.region = None;
            r.noise = None;
            r
        })
        .collect();
    save_manifest(&dir.join("manifest_raw.csv"), &raw)?;
    Ok(records)
}
