//! Agreement metrics between model predictions and radiologist scores.
//!
//! Three coefficients are reported together with their sum:
//!
//! * PLCC, the Pearson linear correlation coefficient;
//! * SROCC, Spearman's rank correlation with mid-ranks for ties;
//! * KROCC, Kendall's tau-b.
//!
//! Ties are handled with the usual completions: Spearman falls back to a
//! Pearson correlation over mid-ranks whenever either input has ties, and
//! Kendall's coefficient is the tau-b variant, where pairs tied in only one
//! of the two inputs enter the corresponding denominator term and pairs tied
//! in both are dropped.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest sample the coefficients are defined for.
pub const MIN_SAMPLES: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: truth has {truth} values, predictions have {pred}")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("need at least {MIN_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("degenerate input: {0} values are constant")]
    DegenerateInput(&'static str),
    #[error("non-finite value at index {index} of {which}")]
    NonFinite { which: &'static str, index: usize },
}

/// The three coefficients for one prediction set, plus their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub plcc: f64,
    pub srocc: f64,
    pub krocc: f64,
    pub overall: f64,
    pub n: usize,
}

impl MetricReport {
    /// Builds a report from already computed coefficients.
    pub fn from_components(plcc: f64, srocc: f64, krocc: f64, n: usize) -> Self {
        Self {
            plcc,
            srocc,
            krocc,
            overall: overall(plcc, srocc, krocc),
            n,
        }
    }
}

/// Computes all three coefficients in one pass over the validated input.
pub fn evaluate(truth: &[f64], pred: &[f64]) -> Result<MetricReport, MetricError> {
    validate(truth, pred)?;
    Ok(MetricReport::from_components(
        pearson_unchecked(truth, pred),
        spearman_unchecked(truth, pred),
        kendall_tau_b_unchecked(truth, pred),
        truth.len(),
    ))
}

/// Overall Score: the plain sum of the three coefficients.
pub fn overall(plcc: f64, srocc: f64, krocc: f64) -> f64 {
    plcc + srocc + krocc
}

/// Pearson linear correlation coefficient.
pub fn plcc(truth: &[f64], pred: &[f64]) -> Result<f64, MetricError> {
    validate(truth, pred)?;
    Ok(pearson_unchecked(truth, pred))
}

/// Spearman rank correlation with mid-ranks.
pub fn srocc(truth: &[f64], pred: &[f64]) -> Result<f64, MetricError> {
    validate(truth, pred)?;
    Ok(spearman_unchecked(truth, pred))
}

/// Kendall tau-b.
pub fn krocc(truth: &[f64], pred: &[f64]) -> Result<f64, MetricError> {
    validate(truth, pred)?;
    Ok(kendall_tau_b_unchecked(truth, pred))
}

fn validate(truth: &[f64], pred: &[f64]) -> Result<(), MetricError> {
    if truth.len() != pred.len() {
        return Err(MetricError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    if truth.len() < MIN_SAMPLES {
        return Err(MetricError::TooFewSamples(truth.len()));
    }
    for (which, xs) in [("truth", truth), ("predictions", pred)] {
        if let Some(index) = xs.iter().position(|v| !v.is_finite()) {
            return Err(MetricError::NonFinite { which, index });
        }
        if xs.iter().all(|&v| v == xs[0]) {
            return Err(MetricError::DegenerateInput(which));
        }
    }
    Ok(())
}

/// Neumaier-compensated accumulator.
#[derive(Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.carry
    }
}

fn mean(xs: &[f64]) -> f64 {
    let mut acc = CompensatedSum::default();
    xs.iter().for_each(|&x| acc.add(x));
    acc.value() / xs.len() as f64
}

fn pearson_unchecked(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = CompensatedSum::default();
    let mut sxx = CompensatedSum::default();
    let mut syy = CompensatedSum::default();
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy.add(dx * dy);
        sxx.add(dx * dx);
        syy.add(dy * dy);
    }
    let r = sxy.value() / (sxx.value() * syy.value()).sqrt();
    r.clamp(-1.0, 1.0)
}

/// Mid-ranks (1-based); also reports whether any tie occurred.
pub fn mid_ranks(xs: &[f64]) -> (Vec<f64>, bool) {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; xs.len()];
    let mut tied = false;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        if end - start > 1 {
            tied = true;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    (ranks, tied)
}

fn spearman_unchecked(xs: &[f64], ys: &[f64]) -> f64 {
    let (rx, tx) = mid_ranks(xs);
    let (ry, ty) = mid_ranks(ys);
    if tx || ty {
        return pearson_unchecked(&rx, &ry);
    }
    let n = xs.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// Number of pairs among `k` items.
fn pairs(k: u64) -> u64 {
    k * k.saturating_sub(1) / 2
}

/// Sum of pairs over runs of equal keys in an already sorted sequence.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += pairs(run);
            run = 1;
        }
    }
    total + pairs(run)
}

/// Merge sort counting inversions (strictly decreasing pairs).
fn sort_count_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_count_swaps(&mut v[..mid], &mut buf[..mid]);
    swaps += sort_count_swaps(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Knight's O(n log n) tau-b.
fn kendall_tau_b_unchecked(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as u64;
    let mut pairs_xy: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    pairs_xy.sort_by(|a, b| match a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal) {
        Ordering::Equal => a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal),
        o => o,
    });

    let xs_sorted: Vec<f64> = pairs_xy.iter().map(|p| p.0).collect();
    let tied_x = tied_pairs(&xs_sorted);
    let tied_xy = tied_pairs(&pairs_xy);

    let mut ys_perm: Vec<f64> = pairs_xy.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; ys_perm.len()];
    let discordant = sort_count_swaps(&mut ys_perm, &mut buf);
    let tied_y = tied_pairs(&ys_perm);

    let total = pairs(n);
    // concordant - discordant = total - tx - ty + txy - 2*discordant
    let numerator = total as f64 - tied_x as f64 - tied_y as f64 + tied_xy as f64 - 2.0 * discordant as f64;
    let denom = ((total - tied_x) as f64 * (total - tied_y) as f64).sqrt();
    (numerator / denom).clamp(-1.0, 1.0)
}
