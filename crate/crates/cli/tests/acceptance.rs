//! Acceptance suite. Prints one PASS/FAIL line per criterion, then fails the
//! test if any criterion failed.
//!
//! `UPDATE_GOLDEN=1 cargo test -p ctiqa-cli --test acceptance` rewrites the
//! prompt golden files.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ctiqa::dataset::{load_manifest, ImageRecord, Split};
use ctiqa::feedback::FeedbackEntry;
use ctiqa::gateway::{parse_score, BackendConfig, Gateway, GatewayError};
use ctiqa::image::ImageBuffer;
use ctiqa::metrics::{krocc, plcc, srocc};
use ctiqa::noise::{estimate_noise, EstimatorConfig};
use ctiqa::orchestrator::{paired_scores, run_strategy, RunConfig, Strategy};
use ctiqa::prompt::{
    build_few_shot, build_region_query, build_with_feedback, build_with_metadata, build_zero_shot, PromptConfig,
    ShotExample, TargetMetadata,
};
use ctiqa::report::parse_table_csv;
use ctiqa::synth::{air_phantom, poisson_gaussian, SynthRng};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

// criterion 1
const METRIC_TOL: f64 = 1e-12;
const METRIC_PAIRS: usize = 200;
const METRIC_MAX_N: usize = 50;
const TIE_PROB: f64 = 0.3;
const METRIC_BUDGET: Duration = Duration::from_secs(5);
// criterion 2
const PUBLISHED_ROWS: usize = 28;
const OVERALL_TOL: f64 = 5e-4;
// criterion 3
const NOISE_DRAWS: usize = 20;
const NOISE_REL_TOL: f64 = 0.30;
const NOISE_SIZE: usize = 256;
const NOISE_PAIR_FACTOR: f64 = 1.5;
const NOISE_BUDGET: Duration = Duration::from_secs(30);
// criterion 4
const RESUME_STEP: usize = 5;
// criterion 5
const ORDERING_SEEDS: u64 = 10;
const ORDERING_MIN_WINS: usize = 8;
// criterion 8
const PARSER_CASES: usize = 30;
// criterion 9
const CSV_DECIMALS_TOL: f64 = 5e-5;

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn bundled_manifest() -> PathBuf {
    repo_root().join("data/synthetic/manifest.csv")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn sweep_root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("feedback-sweep")
}

type Outcome = Result<String, String>;

// ---- criterion 1 ----

fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

// rank = (#smaller) + (#equal + 1) / 2, counted pairwise
fn oracle_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn oracle_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 && dy == 0.0 {
                continue;
            } else if dx == 0.0 {
                tx += 1;
            } else if dy == 0.0 {
                ty += 1;
            } else if (dx > 0.0) == (dy > 0.0) {
                conc += 1;
            } else {
                disc += 1;
            }
        }
    }
    let n1 = (conc + disc + tx) as f64;
    let n2 = (conc + disc + ty) as f64;
    (conc - disc) as f64 / (n1 * n2).sqrt()
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 && rng.random::<f64>() < TIE_PROB {
            let j = rng.random_range(0..i);
            v.push(v[j]);
        } else {
            v.push(rng.random_range(0.0..4.0));
        }
    }
    v
}

fn metric_oracles() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_231_101);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < METRIC_PAIRS {
        let n = rng.random_range(3..=METRIC_MAX_N);
        let x = random_vector(&mut rng, n);
        let y = random_vector(&mut rng, n);
        if x.iter().all(|&v| v == x[0]) || y.iter().all(|&v| v == y[0]) {
            continue;
        }
        let checks = [
            (plcc(&x, &y).unwrap(), oracle_pearson(&x, &y)),
            (
                srocc(&x, &y).unwrap(),
                oracle_pearson(&oracle_ranks(&x), &oracle_ranks(&y)),
            ),
            (krocc(&x, &y).unwrap(), oracle_tau_b(&x, &y)),
        ];
        for (got, want) in checks {
            worst = worst.max((got - want).abs());
        }
        done += 1;
    }
    let elapsed = started.elapsed();
    let detail = format!("{done} pairs, max |diff| {worst:.1e} (tol {METRIC_TOL:.0e}), {elapsed:.2?}");
    if worst <= METRIC_TOL && elapsed < METRIC_BUDGET {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- criterion 2 ----

#[derive(Deserialize)]
struct PublishedRow {
    table: u8,
    model: String,
    plcc: f64,
    srocc: f64,
    krocc: f64,
    overall: f64,
}

fn published_arithmetic() -> Outcome {
    let mut rd = csv::Reader::from_path(fixture("published_results.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<PublishedRow> = rd.deserialize().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for r in &rows {
        let d = (r.overall - (r.plcc + r.srocc + r.krocc)).abs();
        worst = worst.max(d);
        if d > OVERALL_TOL {
            bad.push(format!("table {} {}", r.table, r.model));
        }
    }
    let spot = |t: u8, m: &str| rows.iter().find(|r| r.table == t && r.model == m).map(|r| r.overall);
    let spots_ok = spot(1, "GPT-4o-mini") == Some(1.9864) && spot(3, "O3") == Some(1.8844);
    let detail = format!("{} rows, max |diff| {worst:.1e} (tol {OVERALL_TOL:.0e})", rows.len());
    if rows.len() == PUBLISHED_ROWS && bad.is_empty() && spots_ok {
        Ok(detail)
    } else {
        Err(format!("{detail}; off: {bad:?}; spot values ok: {spots_ok}"))
    }
}

// ---- criterion 3 ----

fn noise_image(seed: u64, a: f64, b: f64) -> ImageBuffer {
    let mut rng = SynthRng::new(seed);
    poisson_gaussian(
        &mut rng,
        NOISE_SIZE,
        NOISE_SIZE,
        air_phantom(NOISE_SIZE, NOISE_SIZE),
        a,
        b,
    )
}

fn noise_recovery() -> Outcome {
    let started = Instant::now();
    let cfg = EstimatorConfig::default();
    let mut draw = SynthRng::new(2024);
    let (mut ok, mut monotone, mut worst_a, mut worst_b) = (0, 0, 0.0f64, 0.0f64);
    let mut misses = Vec::new();
    for i in 0..NOISE_DRAWS {
        let a = draw.uniform(0.001, 0.01);
        let b = draw.uniform(1e-6, 1e-4);
        let seed = 100 + i as u64;
        let est = estimate_noise(&noise_image(seed, a, b), &cfg).map_err(|e| e.to_string())?;
        let (ea, eb) = ((est.a / a - 1.0).abs(), (est.b / b - 1.0).abs());
        worst_a = worst_a.max(ea);
        worst_b = worst_b.max(eb);
        if ea <= NOISE_REL_TOL && eb <= NOISE_REL_TOL {
            ok += 1;
        } else {
            misses.push(format!(
                "a={a:.4} b={b:.1e}: {:+.2}/{:+.2}",
                est.a / a - 1.0,
                est.b / b - 1.0
            ));
        }
        // same content and noise stream, more noise
        let louder = estimate_noise(&noise_image(seed, a * NOISE_PAIR_FACTOR, b * NOISE_PAIR_FACTOR), &cfg)
            .map_err(|e| e.to_string())?;
        monotone += (louder.sigma_ref > est.sigma_ref) as usize;
    }
    let elapsed = started.elapsed();
    let detail = format!(
        "{ok}/{NOISE_DRAWS} within ±{:.0}% (worst a {:.1}%, b {:.1}%), sigma_ref monotone in {monotone}/{NOISE_DRAWS} pairs, {elapsed:.2?}",
        NOISE_REL_TOL * 100.0,
        worst_a * 100.0,
        worst_b * 100.0
    );
    if ok == NOISE_DRAWS && monotone == NOISE_DRAWS && elapsed < NOISE_BUDGET {
        Ok(detail)
    } else {
        Err(format!("{detail}; misses: {misses:?}"))
    }
}

// ---- criterion 4 ----

fn ctiqa(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ctiqa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_cli(strategy: Strategy, out: &Path, extra: &[&str]) -> std::process::Output {
    let manifest = bundled_manifest();
    let mut args = vec![
        "run",
        "--manifest",
        manifest.to_str().unwrap(),
        "--strategy",
        strategy.as_str(),
        "--provider",
        "mock",
        "--out",
        out.to_str().unwrap(),
        "--run-id",
        strategy.as_str(),
    ];
    args.extend_from_slice(extra);
    ctiqa(&args)
}

fn mock_determinism(root: &Path) -> Outcome {
    let mut notes = Vec::new();
    for s in Strategy::ALL {
        let read = |base: &str| std::fs::read(root.join(base).join(s.as_str()).join("predictions.jsonl"));
        for base in ["first", "second"] {
            let o = run_cli(s, &root.join(base), &[]);
            if !o.status.success() {
                return Err(format!("{s} run failed: {}", String::from_utf8_lossy(&o.stderr)));
            }
        }
        let step = RESUME_STEP.to_string();
        let killed = run_cli(s, &root.join("resumed"), &["--stop-after", &step]);
        if killed.status.code() != Some(1) {
            return Err(format!("{s}: interrupted run exited with {:?}", killed.status.code()));
        }
        let partial = read("resumed").map_err(|e| e.to_string())?;
        let partial_lines = partial.iter().filter(|&&b| b == b'\n').count();
        let resumed = run_cli(s, &root.join("resumed"), &[]);
        if !resumed.status.success() {
            return Err(format!("{s} resume failed"));
        }
        let (a, b, c) = (read("first"), read("second"), read("resumed"));
        let (a, b, c) = (
            a.map_err(|e| e.to_string())?,
            b.map_err(|e| e.to_string())?,
            c.map_err(|e| e.to_string())?,
        );
        if a != b || a != c || partial_lines != RESUME_STEP || !a.starts_with(&partial) {
            return Err(format!(
                "{s}: rerun identical {}, resume identical {}, {partial_lines} lines before resume",
                a == b,
                a == c
            ));
        }
        notes.push(format!("{s} {}B", a.len()));
    }
    Ok(format!(
        "identical across reruns and resume at step {RESUME_STEP}: {}",
        notes.join(", ")
    ))
}

// ---- criterion 5 ----

fn feedback_ordering() -> Outcome {
    let ds = load_manifest(&bundled_manifest()).map_err(|e| e.to_string())?;
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..ORDERING_SEEDS {
        let gw = Gateway::from_config(BackendConfig::mock(seed), None).map_err(|e| e.to_string())?;
        let cfg = RunConfig {
            seed,
            ..RunConfig::default()
        };
        let rho = |s: Strategy, dir: Option<&Path>| -> Result<f64, String> {
            let out = run_strategy(s, &ds, &gw, &cfg, dir).map_err(|e| e.to_string())?;
            let (t, p) = paired_scores(&out.set.lines(), &ds)?;
            srocc(&t, &p).map_err(|e| e.to_string())
        };
        let zero = rho(Strategy::ZeroShot, None)?;
        let dir = sweep_root().join(format!("acceptance-ordering-{seed}"));
        let fb = rho(Strategy::Feedback, Some(&dir))?;
        wins += (fb >= zero) as usize;
        pairs.push(format!("{fb:.3}/{zero:.3}"));
    }
    let detail = format!(
        "feedback >= zero-shot SROCC in {wins}/{ORDERING_SEEDS} seeds (need {ORDERING_MIN_WINS}); feedback/zero: {}",
        pairs.join(" ")
    );
    if wins >= ORDERING_MIN_WINS {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- criterion 6 ----

fn feedback_files(dir: &Path, out: &mut Vec<PathBuf>) {
    let Ok(entries) = std::fs::read_dir(dir) else { return };
    for e in entries.flatten() {
        let p = e.path();
        if p.is_dir() {
            feedback_files(&p, out);
        } else if p.file_name().is_some_and(|n| n == "feedback.jsonl") {
            out.push(p);
        }
    }
}

fn feedback_invariant(extra_roots: &[&Path]) -> Outcome {
    let mut files = Vec::new();
    feedback_files(&sweep_root(), &mut files);
    for r in extra_roots {
        feedback_files(r, &mut files);
    }
    let mut entries = 0;
    let mut bad = Vec::new();
    for f in &files {
        let text = std::fs::read_to_string(f).map_err(|e| e.to_string())?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let e: FeedbackEntry = serde_json::from_str(line).map_err(|err| format!("{}: {err}", f.display()))?;
            entries += 1;
            if e.e != (e.y - e.y_hat).abs() {
                bad.push(format!("{}: {}", f.display(), e.id));
            }
        }
    }
    let detail = format!(
        "{entries} entries in {} feedback.jsonl files, {} violations",
        files.len(),
        bad.len()
    );
    if entries > 0 && bad.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail} {bad:?}"))
    }
}

// ---- criterion 7 ----

fn tiny(seed: usize) -> ImageBuffer {
    let px = (0..64).map(|i| ((i * 37 + seed * 11) % 64) as f64 / 63.0).collect();
    ImageBuffer::new(8, 8, px).unwrap()
}

fn shot(id: &str, score: f64, seed: usize) -> ShotExample {
    let record = ImageRecord {
        id: id.into(),
        path: PathBuf::from(format!("{id}.png")),
        split: Split::Train,
        score: Some(score),
        region: Some(["abdomen", "chest", "pelvis"][seed % 3].into()),
        noise: Some(0.004 + 0.001 * seed as f64),
    };
    ShotExample::new(record, tiny(seed)).unwrap()
}

fn golden_prompts() -> Result<Vec<(&'static str, Vec<u8>)>, String> {
    let cfg = PromptConfig::default();
    let e = |err: ctiqa::prompt::PromptError| err.to_string();
    let examples = vec![shot("tr_b", 2.5, 1), shot("tr_a", 0.8, 2), shot("tr_c", 3.6, 3)];
    let target = tiny(9);
    let meta = TargetMetadata {
        region: "chest",
        noise: 0.0125,
    };
    let buffer = vec![
        FeedbackEntry::new("tr_x", 1.4, 2.0, 0.031).unwrap(),
        FeedbackEntry::new("tr_y", 3.2, 3.0, 0.006).unwrap(),
    ];
    Ok(vec![
        (
            "zero_shot",
            build_zero_shot(&target, &cfg).map_err(e)?.canonical_bytes(),
        ),
        (
            "few_shot",
            build_few_shot(&examples, &target, &cfg).map_err(e)?.canonical_bytes(),
        ),
        (
            "metadata",
            build_with_metadata(&examples, &target, meta, &cfg)
                .map_err(e)?
                .canonical_bytes(),
        ),
        (
            "feedback",
            build_with_feedback(&examples, &buffer, &target, meta, &cfg)
                .map_err(e)?
                .canonical_bytes(),
        ),
        (
            "region_query",
            build_region_query(&target, &cfg).map_err(e)?.canonical_bytes(),
        ),
    ])
}

fn prompt_snapshots() -> Outcome {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some_and(|v| v == "1");
    let dir = fixture("golden");
    let mut mismatched = Vec::new();
    let prompts = golden_prompts()?;
    for (name, bytes) in &prompts {
        let path = dir.join(format!("{name}.json"));
        if update {
            std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
            std::fs::write(&path, bytes).map_err(|e| e.to_string())?;
        } else if std::fs::read(&path).ok().as_ref() != Some(bytes) {
            mismatched.push(*name);
        }
    }
    if mismatched.is_empty() {
        Ok(format!(
            "{} builders byte-identical to golden files{}",
            prompts.len(),
            if update { " (updated)" } else { "" }
        ))
    } else {
        Err(format!("mismatch: {mismatched:?} (UPDATE_GOLDEN=1 to accept)"))
    }
}

// ---- criterion 8 ----

#[derive(Deserialize)]
struct ParserCase {
    name: String,
    input: String,
    expect: Option<Expected>,
}

#[derive(Deserialize)]
struct Expected {
    score: f64,
    clamped: bool,
    fallback: bool,
}

fn parser_corpus() -> Outcome {
    let text = std::fs::read_to_string(fixture("parser_corpus.json")).map_err(|e| e.to_string())?;
    let cases: Vec<ParserCase> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let mut wrong = Vec::new();
    for c in &cases {
        let got = parse_score(&c.input);
        let pass = match (&c.expect, &got) {
            (Some(x), Ok(r)) => r.score == x.score && r.clamped == x.clamped && r.fallback == x.fallback,
            (None, Err(GatewayError::NoScoreFound(_))) => true,
            _ => false,
        };
        if !pass {
            wrong.push(c.name.clone());
        }
    }
    let detail = format!("{}/{} cases match", cases.len() - wrong.len(), cases.len());
    if cases.len() == PARSER_CASES && wrong.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; wrong: {wrong:?}"))
    }
}

// ---- criterion 9 ----

fn report_validity(runs: &Path) -> Outcome {
    let mut checked = 0;
    for s in Strategy::ALL {
        let dir = runs.join(s.as_str());
        let summary: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.join("summary.json")).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
        let n = summary["metrics"]["n"].as_u64().ok_or("summary without metrics")? as usize;

        let scatter = std::fs::read_to_string(dir.join("scatter.svg")).map_err(|e| e.to_string())?;
        let doc = roxmltree::Document::parse(&scatter).map_err(|e| format!("{s} scatter: {e}"))?;
        let points = doc
            .descendants()
            .filter(|x| x.has_tag_name("circle") && x.attribute("class") == Some("point"))
            .count();
        if points != n {
            return Err(format!("{s}: {points} scatter markers for {n} pairs"));
        }

        let hist = std::fs::read_to_string(dir.join("hist.svg")).map_err(|e| e.to_string())?;
        let doc = roxmltree::Document::parse(&hist).map_err(|e| format!("{s} hist: {e}"))?;
        for series in ["radiologist", "model"] {
            let total: usize = doc
                .descendants()
                .filter(|x| x.attribute("class") == Some("bar") && x.attribute("data-series") == Some(series))
                .filter_map(|x| x.attribute("data-count")?.parse::<usize>().ok())
                .sum();
            if total != n {
                return Err(format!("{s}: {series} histogram sums to {total}, expected {n}"));
            }
        }

        let rows = parse_table_csv(&std::fs::read(dir.join("table.csv")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let m = &summary["metrics"];
        for key in ["plcc", "srocc", "krocc", "overall"] {
            let want = m[key].as_f64().unwrap();
            let got = match key {
                "plcc" => rows[0].metrics.plcc,
                "srocc" => rows[0].metrics.srocc,
                "krocc" => rows[0].metrics.krocc,
                _ => rows[0].metrics.overall,
            };
            if (got - want).abs() > CSV_DECIMALS_TOL || ((got * 1e4).round() - got * 1e4).abs() > 1e-6 {
                return Err(format!("{s}: table {key} {got} vs {want}"));
            }
        }
        checked += 1;
    }
    Ok(format!(
        "{checked} runs: SVGs parse, bins sum to n, markers = pairs, CSV round-trips to 4 decimals"
    ))
}

#[test]
fn acceptance_suite() {
    let runs = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-runs");
    let _ = std::fs::remove_dir_all(&runs);
    std::fs::create_dir_all(&runs).unwrap();

    let c4 = mock_determinism(&runs);
    let results: Vec<(&str, Outcome)> = vec![
        ("metric oracle equivalence", metric_oracles()),
        ("published table arithmetic", published_arithmetic()),
        ("noise recovery", noise_recovery()),
        ("mock end-to-end determinism", c4),
        ("feedback ordering", feedback_ordering()),
        ("feedback error invariant", feedback_invariant(&[&runs])),
        ("prompt snapshots", prompt_snapshots()),
        ("parser robustness", parser_corpus()),
        ("report validity", report_validity(&runs.join("first"))),
    ];

    let mut out = std::io::stdout().lock();
    let mut failed = Vec::new();
    for (i, (name, r)) in results.iter().enumerate() {
        let (tag, detail) = match r {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed.push(i + 1);
                ("FAIL", d)
            }
        };
        writeln!(out, "{tag} criterion {}: {name}: {detail}", i + 1).unwrap();
    }
    out.flush().unwrap();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
