//! Runs the four inference strategies over a dataset and persists predictions.
//!
//! Zero-shot, few-shot and metadata runs dispatch test records concurrently
//! and write `predictions.jsonl` in test-record order as results arrive. The
//! feedback strategy is sequential: a warm-up over randomly chosen training
//! images fills the buffer before the first test record is scored.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{write_manifest, Dataset, DatasetError, ImageRecord, Split};
use crate::feedback::{FeedbackBuffer, FeedbackEntry, DEFAULT_BUFFER_CAP};
use crate::gateway::{Gateway, TelemetrySnapshot};
use crate::image::ImageError;
use crate::prompt::{
    build_few_shot, build_with_feedback, build_with_metadata, build_zero_shot, Prompt, PromptConfig, PromptError,
    ShotExample, TargetMetadata,
};

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const FEEDBACK_FILE: &str = "feedback.jsonl";
pub const STRATA: usize = 5;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("record `{id}` has no {field}; run the tagging/estimation passes first")]
    MissingMetadata { id: String, field: &'static str },
    #[error("need {requested} scored training records, only {available} available")]
    NotEnoughExamples { requested: usize, available: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{0}")]
    Image(#[from] ImageError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    ZeroShot,
    FewShot,
    Metadata,
    Feedback,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::ZeroShot,
        Strategy::FewShot,
        Strategy::Metadata,
        Strategy::Feedback,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::ZeroShot => "zero_shot",
            Strategy::FewShot => "few_shot",
            Strategy::Metadata => "metadata",
            Strategy::Feedback => "feedback",
        }
    }

    pub fn uses_examples(self) -> bool {
        self != Strategy::ZeroShot
    }

    pub fn uses_metadata(self) -> bool {
        matches!(self, Strategy::Metadata | Strategy::Feedback)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s.replace('-', "_"))
            .ok_or_else(|| format!("unknown strategy `{s}` (zero_shot, few_shot, metadata, feedback)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// In-context example count.
    pub k: usize,
    pub seed: u64,
    pub warmup_count: usize,
    pub buffer_cap: usize,
    /// Draw a fresh example set for every step instead of one per run.
    pub resample_per_step: bool,
    /// Feedback strategy only: score one more training image after every
    /// `n` test predictions. Experimental.
    pub interleave_every: Option<usize>,
    /// Stop after this many test predictions have been written, as if the
    /// process had been killed. Used to exercise resume.
    pub stop_after: Option<usize>,
    pub prompt: PromptConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: 10,
            seed: 0,
            warmup_count: 5,
            buffer_cap: DEFAULT_BUFFER_CAP,
            resample_per_step: false,
            interleave_every: None,
            stop_after: None,
            prompt: PromptConfig::default(),
        }
    }
}

/// One line of `predictions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub id: String,
    pub y_hat: Option<f64>,
    pub explanation: String,
    pub strategy: Strategy,
    pub config_fingerprint: String,
    pub timestamp: String,
    #[serde(default)]
    pub clamped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub y_hat: Option<f64>,
    pub explanation: String,
    pub cache_hit: bool,
    pub clamped: bool,
    pub error: Option<String>,
    pub timestamp: String,
    /// Image parts in the prompt that produced this prediction.
    pub images: usize,
}

impl Prediction {
    pub fn failed(&self) -> bool {
        self.y_hat.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub strategy: Strategy,
    pub predictions: Vec<Prediction>,
    pub config_fingerprint: String,
}

impl PredictionSet {
    pub fn failures(&self) -> usize {
        self.predictions.iter().filter(|p| p.failed()).count()
    }

    pub fn cache_hit_rate(&self) -> f64 {
        if self.predictions.is_empty() {
            return 0.0;
        }
        self.predictions.iter().filter(|p| p.cache_hit).count() as f64 / self.predictions.len() as f64
    }

    pub fn lines(&self) -> Vec<PredictionLine> {
        self.predictions
            .iter()
            .map(|p| PredictionLine {
                id: p.id.clone(),
                y_hat: p.y_hat,
                explanation: p.explanation.clone(),
                strategy: self.strategy,
                config_fingerprint: self.config_fingerprint.clone(),
                timestamp: p.timestamp.clone(),
                clamped: p.clamped,
                error: p.error.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub set: PredictionSet,
    /// Every feedback entry appended during the run, in order.
    pub feedback: Vec<FeedbackEntry>,
    /// Buffer length when the first test record was scored.
    pub buffer_at_first_test: usize,
    pub interrupted: bool,
    pub telemetry: TelemetrySnapshot,
    pub wall_time_secs: f64,
}

fn sub_rng(seed: u64, tag: &str, step: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update(seed.to_le_bytes());
    h.update(step.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn stratum(score: f64) -> usize {
    ((score / (4.0 / STRATA as f64)).floor() as usize).min(STRATA - 1)
}

/// Stratified draw of `k` scored records.
///
/// Scores fall into five equal-width bins over `[0, 4]`. Each bin gets
/// `floor(k/5)` draws plus one of the `k mod 5` extras (extras go to bins in a
/// seeded order). Quota that a bin cannot fill moves, one at a time, to the
/// bin with spare records and the smallest allotment so far. Output is
/// grouped by bin in ascending order.
pub fn sample_examples(pool: &[ImageRecord], k: usize, seed: u64) -> Result<Vec<ImageRecord>, OrchestratorError> {
    if k == 0 {
        return Err(OrchestratorError::Config("k must be at least 1".into()));
    }
    let scored: Vec<&ImageRecord> = pool.iter().filter(|r| r.score.is_some()).collect();
    if scored.len() < k {
        return Err(OrchestratorError::NotEnoughExamples {
            requested: k,
            available: scored.len(),
        });
    }
    let mut rng = sub_rng(seed, "examples", 0);
    let mut bins: Vec<Vec<&ImageRecord>> = vec![Vec::new(); STRATA];
    for r in scored {
        bins[stratum(r.score.unwrap_or_default())].push(r);
    }
    let mut order: Vec<usize> = (0..STRATA).collect();
    order.shuffle(&mut rng);

    let mut quota = [k / STRATA; STRATA];
    for &s in order.iter().take(k % STRATA) {
        quota[s] += 1;
    }
    let mut deficit = 0;
    for s in 0..STRATA {
        let over = quota[s].saturating_sub(bins[s].len());
        quota[s] -= over;
        deficit += over;
    }
    while deficit > 0 {
        let s = order
            .iter()
            .copied()
            .filter(|&s| quota[s] < bins[s].len())
            .min_by_key(|&s| quota[s])
            .expect("pool holds at least k records");
        quota[s] += 1;
        deficit -= 1;
    }

    let mut out = Vec::with_capacity(k);
    for (s, bin) in bins.iter_mut().enumerate() {
        let (picked, _) = bin.partial_shuffle(&mut rng, quota[s]);
        out.extend(picked.iter().map(|r| (*r).clone()));
    }
    Ok(out)
}

/// Digest binding a run to its strategy, knobs, backend, templates and data.
pub fn config_fingerprint(strategy: Strategy, dataset: &Dataset, gateway: &Gateway, cfg: &RunConfig) -> String {
    let backend = gateway.config();
    let mut manifest = Vec::new();
    write_manifest(&mut manifest, &dataset.records).expect("writing to memory cannot fail");
    let doc = serde_json::json!({
        "strategy": strategy,
        "k": cfg.k,
        "seed": cfg.seed,
        "warmup_count": cfg.warmup_count,
        "buffer_cap": cfg.buffer_cap,
        "resample_per_step": cfg.resample_per_step,
        "interleave_every": cfg.interleave_every,
        "provider": backend.provider,
        "model_name": backend.model_name,
        "temperature": backend.temperature,
        "mock_seed": backend.mock_seed,
        "template_version": cfg.prompt.templates.version(),
        "template_hash": cfg.prompt.templates.hash(),
        "rubric": cfg.prompt.rubric_labels,
        "noise_decimals": cfg.prompt.noise_decimals,
        "manifest_sha256": hex::encode(Sha256::digest(&manifest)),
    });
    hex::encode(Sha256::digest(doc.to_string().as_bytes()))
}

fn target_meta(record: &ImageRecord) -> Result<TargetMetadata<'_>, OrchestratorError> {
    let region = record
        .region
        .as_deref()
        .ok_or_else(|| OrchestratorError::MissingMetadata {
            id: record.id.clone(),
            field: "region",
        })?;
    let noise = record.noise.ok_or_else(|| OrchestratorError::MissingMetadata {
        id: record.id.clone(),
        field: "noise",
    })?;
    Ok(TargetMetadata { region, noise })
}

struct Writer {
    file: Option<(BufWriter<File>, String)>,
}

impl Writer {
    fn create(dir: Option<&Path>, name: &str) -> Result<Self, OrchestratorError> {
        let Some(dir) = dir else { return Ok(Self { file: None }) };
        let path = dir.join(name);
        let io = |source| OrchestratorError::Io {
            path: path.display().to_string(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        let f = File::create(&path).map_err(io)?;
        Ok(Self {
            file: Some((BufWriter::new(f), path.display().to_string())),
        })
    }

    fn line<T: Serialize>(&mut self, value: &T) -> Result<(), OrchestratorError> {
        if let Some((w, path)) = &mut self.file {
            let mut bytes = serde_json::to_vec(value).expect("serializable");
            bytes.push(b'\n');
            w.write_all(&bytes)
                .and_then(|_| w.flush())
                .map_err(|source| OrchestratorError::Io {
                    path: path.clone(),
                    source,
                })?;
        }
        Ok(())
    }
}

struct Runner<'a> {
    strategy: Strategy,
    dataset: &'a Dataset,
    gateway: &'a Gateway,
    cfg: &'a RunConfig,
    /// Scored training records available for in-context examples.
    pool: Vec<ImageRecord>,
    fixed_examples: Option<Vec<ShotExample>>,
}

impl Runner<'_> {
    fn examples_for(&self, step: u64) -> Result<Vec<ShotExample>, OrchestratorError> {
        if let Some(ex) = &self.fixed_examples {
            return Ok(ex.clone());
        }
        let seed = if self.cfg.resample_per_step {
            // mix the step into the seed so each step draws independently
            u64::from_le_bytes(
                Sha256::digest([self.cfg.seed.to_le_bytes(), step.to_le_bytes()].concat())[..8]
                    .try_into()
                    .unwrap(),
            )
        } else {
            self.cfg.seed
        };
        self.load_examples(&sample_examples(&self.pool, self.cfg.k, seed)?)
    }

    fn load_examples(&self, records: &[ImageRecord]) -> Result<Vec<ShotExample>, OrchestratorError> {
        records
            .iter()
            .map(|r| Ok(ShotExample::new(r.clone(), self.dataset.load_image(r)?)?))
            .collect()
    }

    fn build(&self, record: &ImageRecord, step: u64, buffer: &[FeedbackEntry]) -> Result<Prompt, OrchestratorError> {
        let image = self.dataset.load_image(record)?;
        let pc = &self.cfg.prompt;
        Ok(match self.strategy {
            Strategy::ZeroShot => build_zero_shot(&image, pc)?,
            Strategy::FewShot => build_few_shot(&self.examples_for(step)?, &image, pc)?,
            Strategy::Metadata => build_with_metadata(&self.examples_for(step)?, &image, target_meta(record)?, pc)?,
            Strategy::Feedback => {
                build_with_feedback(&self.examples_for(step)?, buffer, &image, target_meta(record)?, pc)?
            }
        })
    }

    fn predict(&self, record: &ImageRecord, step: u64, buffer: &[FeedbackEntry]) -> Prediction {
        let failed = |error: String, images: usize| Prediction {
            id: record.id.clone(),
            y_hat: None,
            explanation: String::new(),
            cache_hit: false,
            clamped: false,
            error: Some(error),
            timestamp: self.gateway.timestamp(),
            images,
        };
        let prompt = match self.build(record, step, buffer) {
            Ok(p) => p,
            Err(e) => return failed(e.to_string(), 0),
        };
        match self.gateway.score(&prompt) {
            Ok((scored, reply)) => Prediction {
                id: record.id.clone(),
                y_hat: Some(scored.score),
                explanation: scored.explanation,
                cache_hit: reply.cache_hit,
                clamped: scored.clamped,
                error: None,
                timestamp: reply.created_at,
                images: prompt.image_count(),
            },
            Err(e) => failed(e.to_string(), prompt.image_count()),
        }
    }
}

/// Runs one strategy over the test split. With `out_dir`, writes
/// `predictions.jsonl` (and `feedback.jsonl` for the feedback strategy),
/// truncating earlier files; responses already in the gateway cache are
/// reused, so a restarted run reproduces an interrupted one.
pub fn run_strategy(
    strategy: Strategy,
    dataset: &Dataset,
    gateway: &Gateway,
    cfg: &RunConfig,
    out_dir: Option<&Path>,
) -> Result<RunOutcome, OrchestratorError> {
    let started = Instant::now();
    let before = gateway.telemetry();
    let tests: Vec<&ImageRecord> = dataset.split(Split::Test).collect();
    let train: Vec<ImageRecord> = dataset
        .split(Split::Train)
        .filter(|r| r.score.is_some())
        .cloned()
        .collect();

    if strategy.uses_examples() && cfg.k == 0 {
        return Err(OrchestratorError::Config(
            "k must be at least 1 for few-shot strategies".into(),
        ));
    }
    if strategy == Strategy::Feedback && cfg.warmup_count == 0 {
        return Err(OrchestratorError::Config(
            "feedback strategy needs warmup_count >= 1".into(),
        ));
    }
    if strategy.uses_metadata() {
        for r in tests.iter().copied().chain(train.iter()) {
            target_meta(r)?;
        }
    }

    // feedback: warm-up images are drawn first and kept out of the example pool
    let mut shuffled = train.clone();
    let mut warmup = Vec::new();
    let mut interleave_queue = Vec::new();
    let mut pool = train;
    if strategy == Strategy::Feedback {
        shuffled.shuffle(&mut sub_rng(cfg.seed, "warmup", 0));
        let needed = cfg.warmup_count + cfg.k;
        if shuffled.len() < needed {
            return Err(OrchestratorError::NotEnoughExamples {
                requested: needed,
                available: shuffled.len(),
            });
        }
        warmup = shuffled[..cfg.warmup_count].to_vec();
        pool = shuffled[cfg.warmup_count..].to_vec();
        pool.sort_by(|a, b| a.id.cmp(&b.id));
    }

    let mut runner = Runner {
        strategy,
        dataset,
        gateway,
        cfg,
        pool,
        fixed_examples: None,
    };
    if strategy.uses_examples() && !cfg.resample_per_step {
        let chosen = sample_examples(&runner.pool, cfg.k, cfg.seed)?;
        if strategy == Strategy::Feedback {
            let used: HashSet<&str> = chosen.iter().map(|r| r.id.as_str()).collect();
            interleave_queue = shuffled[cfg.warmup_count..]
                .iter()
                .filter(|r| !used.contains(r.id.as_str()))
                .cloned()
                .collect();
        }
        runner.fixed_examples = Some(runner.load_examples(&chosen)?);
    } else if strategy == Strategy::Feedback {
        interleave_queue = shuffled[cfg.warmup_count..].to_vec();
    }

    let fingerprint = config_fingerprint(strategy, dataset, gateway, cfg);
    let mut out = Writer::create(out_dir, PREDICTIONS_FILE)?;
    let line = |p: &Prediction| PredictionLine {
        id: p.id.clone(),
        y_hat: p.y_hat,
        explanation: p.explanation.clone(),
        strategy,
        config_fingerprint: fingerprint.clone(),
        timestamp: p.timestamp.clone(),
        clamped: p.clamped,
        error: p.error.clone(),
    };
    let limit = cfg.stop_after.unwrap_or(usize::MAX);
    let mut predictions = Vec::with_capacity(tests.len());
    let mut feedback_log = Vec::new();
    let mut buffer_at_first_test = 0;

    if strategy == Strategy::Feedback {
        let mut fb_out = Writer::create(out_dir, FEEDBACK_FILE)?;
        let mut buffer = FeedbackBuffer::new(cfg.buffer_cap);
        let mut step = 0u64;
        let mut learn = |record: &ImageRecord,
                         buffer: &mut FeedbackBuffer,
                         step: u64,
                         log: &mut Vec<FeedbackEntry>|
         -> Result<(), OrchestratorError> {
            let p = runner.predict(record, step, &buffer.entries());
            if let (Some(y_hat), Some(y), Some(n)) = (p.y_hat, record.score, record.noise) {
                if let Ok(entry) = buffer.update(&record.id, y, y_hat, n) {
                    fb_out.line(entry)?;
                    log.push(entry.clone());
                }
            }
            Ok(())
        };
        for record in &warmup {
            learn(record, &mut buffer, step, &mut feedback_log)?;
            step += 1;
        }
        buffer_at_first_test = buffer.len();
        let mut queue = interleave_queue.into_iter();
        for (i, record) in tests.iter().enumerate() {
            if predictions.len() >= limit {
                break;
            }
            let p = runner.predict(record, step, &buffer.entries());
            step += 1;
            out.line(&line(&p))?;
            predictions.push(p);
            if let Some(every) = cfg.interleave_every.filter(|&e| e > 0) {
                if (i + 1) % every == 0 && i + 1 < tests.len() {
                    if let Some(extra) = queue.next() {
                        learn(&extra, &mut buffer, step, &mut feedback_log)?;
                        step += 1;
                    }
                }
            }
        }
    } else {
        let workers = gateway.config().max_in_flight.clamp(1, tests.len().max(1));
        let next = AtomicUsize::new(0);
        let stop = AtomicBool::new(false);
        let runner = &runner;
        let tests = &tests;
        std::thread::scope(|s| -> Result<(), OrchestratorError> {
            let (tx, rx) = mpsc::channel::<(usize, Prediction)>();
            for _ in 0..workers {
                let tx = tx.clone();
                let (next, stop) = (&next, &stop);
                s.spawn(move || {
                    while !stop.load(Ordering::SeqCst) {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        if i >= tests.len() {
                            break;
                        }
                        let p = runner.predict(tests[i], i as u64, &[]);
                        if tx.send((i, p)).is_err() {
                            break;
                        }
                    }
                });
            }
            drop(tx);
            let mut pending = BTreeMap::new();
            'recv: for (i, p) in rx {
                pending.insert(i, p);
                while let Some(p) = pending.remove(&predictions.len()) {
                    if predictions.len() >= limit {
                        break 'recv;
                    }
                    out.line(&line(&p))?;
                    predictions.push(p);
                }
                if predictions.len() >= limit {
                    break;
                }
            }
            stop.store(true, Ordering::SeqCst);
            Ok(())
        })?;
    }

    let interrupted = predictions.len() < tests.len();
    let after = gateway.telemetry();
    Ok(RunOutcome {
        set: PredictionSet {
            strategy,
            predictions,
            config_fingerprint: fingerprint,
        },
        feedback: feedback_log,
        buffer_at_first_test,
        interrupted,
        telemetry: TelemetrySnapshot {
            network_calls: after.network_calls - before.network_calls,
            backend_calls: after.backend_calls - before.backend_calls,
            retries: after.retries - before.retries,
            cache_hits: after.cache_hits - before.cache_hits,
        },
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// Reads a JSON-lines file of `T`, skipping blank lines.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, String> {
    let f = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| format!("{}: {e}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("{} line {}: {e}", path.display(), i + 1))?);
    }
    Ok(out)
}

/// Truth/prediction pairs for successful predictions. Fails naming the
/// first id that is unknown or has no radiologist score.
pub fn paired_scores(lines: &[PredictionLine], dataset: &Dataset) -> Result<(Vec<f64>, Vec<f64>), String> {
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for l in lines {
        let Some(y_hat) = l.y_hat else { continue };
        let record = dataset
            .get(&l.id)
            .ok_or_else(|| format!("prediction id `{}` is not in the manifest", l.id))?;
        let y = record
            .score
            .ok_or_else(|| format!("record `{}` has no radiologist score", l.id))?;
        truth.push(y);
        pred.push(y_hat);
    }
    Ok((truth, pred))
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use super::*;

    fn rec(id: &str, score: f64) -> ImageRecord {
        ImageRecord {
            id: id.into(),
            path: PathBuf::from(format!("{id}.png")),
            split: Split::Train,
            score: Some(score),
            region: None,
            noise: None,
        }
    }

    fn uniform_pool(per_bin: usize) -> Vec<ImageRecord> {
        (0..STRATA * per_bin)
            .map(|i| rec(&format!("r{i:03}"), (i % STRATA) as f64 * 0.8 + 0.4))
            .collect()
    }

    fn per_stratum(sel: &[ImageRecord]) -> [usize; STRATA] {
        let mut c = [0; STRATA];
        for r in sel {
            c[stratum(r.score.unwrap())] += 1;
        }
        c
    }

    #[test]
    fn two_per_stratum_for_k10() {
        let sel = sample_examples(&uniform_pool(6), 10, 0).unwrap();
        assert_eq!(per_stratum(&sel), [2; STRATA]);
    }

    #[test]
    fn exhaustive_when_k_equals_pool() {
        let pool: Vec<_> = [0.5, 2.0, 3.9]
            .iter()
            .enumerate()
            .map(|(i, &s)| rec(&format!("x{i}"), s))
            .collect();
        let mut ids: Vec<_> = sample_examples(&pool, 3, 9)
            .unwrap()
            .into_iter()
            .map(|r| r.id)
            .collect();
        ids.sort();
        assert_eq!(ids, ["x0", "x1", "x2"]);
        assert!(matches!(
            sample_examples(&pool, 4, 9),
            Err(OrchestratorError::NotEnoughExamples {
                requested: 4,
                available: 3
            })
        ));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let pool = uniform_pool(20);
        assert_eq!(
            sample_examples(&pool, 10, 5).unwrap(),
            sample_examples(&pool, 10, 5).unwrap()
        );
        let differs = (0..10).any(|s| sample_examples(&pool, 10, s).unwrap() != sample_examples(&pool, 10, 5).unwrap());
        assert!(differs);
    }

    #[test]
    fn deficit_moves_to_nonempty_strata() {
        // only strata 0 and 4 populated
        let pool: Vec<_> = (0..20)
            .map(|i| rec(&format!("y{i:02}"), if i % 2 == 0 { 0.1 } else { 3.9 }))
            .collect();
        let c = per_stratum(&sample_examples(&pool, 10, 1).unwrap());
        assert_eq!(c, [5, 0, 0, 0, 5]);
        // small stratum is exhausted before others grow
        let mut skewed = vec![rec("lone", 2.0)];
        skewed.extend((0..30).map(|i| rec(&format!("z{i:02}"), 0.2)));
        let c = per_stratum(&sample_examples(&skewed, 4, 2).unwrap());
        assert_eq!(c, [3, 0, 1, 0, 0]);
    }

    #[test]
    fn top_score_falls_in_last_stratum() {
        assert_eq!(stratum(4.0), 4);
        assert_eq!(stratum(0.0), 0);
        assert_eq!(stratum(0.8), 1);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
        }
        assert_eq!("few-shot".parse::<Strategy>().unwrap(), Strategy::FewShot);
        assert!("cot".parse::<Strategy>().is_err());
    }
}
