//! Error-feedback entries and the bounded buffer carried between inference steps.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_BUFFER_CAP: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum FeedbackError {
    #[error("{which} = {value} is outside [0, 4]")]
    ScoreOutOfRange { which: &'static str, value: f64 },
    #[error("noise level {0} must be finite and non-negative")]
    BadNoise(f64),
}

/// One `(id, y, y_hat, e, n)` tuple. `e` is always `|y - y_hat|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub id: String,
    pub y: f64,
    pub y_hat: f64,
    pub e: f64,
    pub n: f64,
}

impl FeedbackEntry {
    pub fn new(id: impl Into<String>, y: f64, y_hat: f64, n: f64) -> Result<Self, FeedbackError> {
        for (which, value) in [("y", y), ("y_hat", y_hat)] {
            if !(0.0..=4.0).contains(&value) {
                return Err(FeedbackError::ScoreOutOfRange { which, value });
            }
        }
        if !(n.is_finite() && n >= 0.0) {
            return Err(FeedbackError::BadNoise(n));
        }
        Ok(Self {
            id: id.into(),
            y,
            y_hat,
            e: (y - y_hat).abs(),
            n,
        })
    }

    /// True when the stored error is exactly the absolute difference.
    pub fn is_consistent(&self) -> bool {
        self.e == (self.y - self.y_hat).abs()
    }
}

/// FIFO buffer holding at most `cap` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackBuffer {
    cap: usize,
    entries: VecDeque<FeedbackEntry>,
}

impl FeedbackBuffer {
    /// A zero cap is treated as 1.
    pub fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            entries: VecDeque::new(),
        }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends an entry, evicting the oldest when over capacity. Returns the
    /// appended entry.
    pub fn update(&mut self, id: &str, y: f64, y_hat: f64, n: f64) -> Result<&FeedbackEntry, FeedbackError> {
        self.push(FeedbackEntry::new(id, y, y_hat, n)?);
        Ok(self.entries.back().expect("just pushed"))
    }

    pub fn push(&mut self, entry: FeedbackEntry) {
        self.entries.push_back(entry);
        while self.entries.len() > self.cap {
            self.entries.pop_front();
        }
    }

    pub fn entries(&self) -> Vec<FeedbackEntry> {
        self.entries.iter().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeedbackEntry> {
        self.entries.iter()
    }
}

impl Default for FeedbackBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_BUFFER_CAP)
    }
}

/// Functional form: returns `buffer` with the new entry appended and the
/// oldest entries dropped beyond `cap`.
pub fn update_feedback(
    buffer: &[FeedbackEntry],
    id: &str,
    y: f64,
    y_hat: f64,
    n: f64,
    cap: usize,
) -> Result<Vec<FeedbackEntry>, FeedbackError> {
    let mut b = FeedbackBuffer::new(cap);
    for e in buffer {
        b.push(e.clone());
    }
    b.update(id, y, y_hat, n)?;
    Ok(b.entries())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absolute_error() {
        let e = FeedbackEntry::new("a", 3.0, 2.5, 0.003).unwrap();
        assert_eq!(e.e, 0.5);
        assert_eq!(FeedbackEntry::new("b", 2.0, 2.0, 0.0).unwrap().e, 0.0);
        assert!(e.is_consistent());
    }

    #[test]
    fn fifo_eviction() {
        let mut buf = Vec::new();
        for (i, id) in ["x", "y", "z"].iter().enumerate() {
            buf = update_feedback(&buf, id, 1.0, i as f64, 0.0, 2).unwrap();
        }
        let ids: Vec<_> = buf.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["y", "z"]);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(FeedbackEntry::new("a", 4.5, 1.0, 0.0).is_err());
        assert!(FeedbackEntry::new("a", 1.0, -0.1, 0.0).is_err());
        assert!(FeedbackEntry::new("a", 1.0, 1.0, -1.0).is_err());
    }
}
