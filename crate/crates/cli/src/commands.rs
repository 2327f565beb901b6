use std::path::{Path, PathBuf};

use ctiqa::dataset::{load_manifest, save_manifest, Dataset, ImageRecord, Split};
use ctiqa::gateway::{parse_region, BackendConfig, Gateway, ResponseCache, TelemetrySnapshot};
use ctiqa::metrics::{evaluate as compute_metrics, MetricReport};
use ctiqa::noise::{self, summarize_noise, EstimatorConfig};
use ctiqa::orchestrator::{
    config_fingerprint, paired_scores, read_jsonl, run_strategy, OrchestratorError, PredictionLine, PREDICTIONS_FILE,
};
use ctiqa::prompt::build_region_query;
use ctiqa::report::{emit_histogram, emit_scatter, emit_table, RunSummary, TableFormat};
use ctiqa::synth::{write_dataset, SyntheticDatasetSpec};
use serde::{Deserialize, Serialize};

use crate::config::{BackendFlags, PromptFlags, RunFlags};
use crate::CliError;

pub const SUMMARY_FILE: &str = "summary.json";

/// Contents of `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub strategy: String,
    pub model_name: String,
    pub config_fingerprint: String,
    pub manifest: PathBuf,
    pub requested: usize,
    pub failures: usize,
    pub cache_hit_rate: f64,
    pub wall_time_secs: f64,
    pub telemetry: TelemetrySnapshot,
    pub buffer_at_first_test: Option<usize>,
    pub metrics: Option<MetricReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics_note: Option<String>,
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::fatal(format!("{}: {e}", dir.display())))?;
    }
    Ok(())
}

fn open_manifest(path: &Path) -> Result<Dataset, CliError> {
    load_manifest(path).map_err(|e| CliError::config(e.to_string()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    ensure_parent(path)?;
    std::fs::write(path, bytes).map_err(|e| CliError::fatal(format!("{}: {e}", path.display())))
}

/// Records with paths valid relative to `out`'s directory: unchanged when it
/// is the dataset root, absolute otherwise.
fn records_for(dataset: &Dataset, out: &Path) -> Vec<ImageRecord> {
    let out_dir = out
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let same = match (std::fs::canonicalize(out_dir), std::fs::canonicalize(&dataset.root)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    dataset
        .records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if !same {
                let p = dataset.resolve(&r);
                r.path = std::fs::canonicalize(&p)
                    .or_else(|_| std::path::absolute(&p))
                    .unwrap_or(p);
            }
            r
        })
        .collect()
}

pub fn ingest_check(manifest: &Path) -> Result<(), CliError> {
    let ds = open_manifest(manifest)?;
    let (train, test) = ds.counts();
    let mut bad = Vec::new();
    for r in &ds.records {
        if let Err(e) = ds.load_image(r) {
            bad.push(e.to_string());
        }
    }
    let with = |f: fn(&ImageRecord) -> bool| ds.records.iter().filter(|r| f(r)).count();
    println!("records: {} (train {train}, test {test})", ds.records.len());
    println!(
        "scored: {}  region: {}  noise: {}",
        with(|r| r.score.is_some()),
        with(|r| r.region.is_some()),
        with(|r| r.noise.is_some())
    );
    println!("images decoded: {}/{}", ds.records.len() - bad.len(), ds.records.len());
    if bad.is_empty() {
        Ok(())
    } else {
        for b in &bad {
            eprintln!("  {b}");
        }
        Err(CliError::fatal(format!("{} image(s) could not be decoded", bad.len())))
    }
}

pub fn estimate_noise(manifest: &Path, out: &Path, decimals: u32) -> Result<(), CliError> {
    if !(1..=6).contains(&decimals) {
        return Err(CliError::config("--decimals must be in [1, 6]"));
    }
    let ds = open_manifest(manifest)?;
    let mut records = records_for(&ds, out);
    let cfg = EstimatorConfig::default();
    let mut overwritten = 0;
    for (r, orig) in records.iter_mut().zip(&ds.records) {
        let image = ds.load_image(orig).map_err(|e| CliError::fatal(e.to_string()))?;
        let est = noise::estimate_noise(&image, &cfg)
            .map_err(|e| CliError::fatal(format!("{}: {e}", ds.resolve(orig).display())))?;
        if r.noise.is_some() {
            overwritten += 1;
        }
        r.noise = Some(summarize_noise(&est, decimals));
    }
    if overwritten > 0 {
        eprintln!("warning: overwrote {overwritten} existing noise value(s)");
    }
    ensure_parent(out)?;
    save_manifest(out, &records).map_err(|e| CliError::fatal(e.to_string()))?;
    println!("estimated noise for {} records -> {}", records.len(), out.display());
    Ok(())
}

fn gateway(backend: BackendConfig, cache_dir: Option<&Path>) -> Result<Gateway, CliError> {
    Gateway::from_config(backend, cache_dir.map(ResponseCache::new)).map_err(|e| CliError::config(e.to_string()))
}

pub fn tag_regions(
    manifest: &Path,
    out: &Path,
    cache_dir: Option<&Path>,
    backend: &BackendFlags,
    prompt: &PromptFlags,
) -> Result<(), CliError> {
    let ds = open_manifest(manifest)?;
    let pcfg = prompt.resolve(&Default::default())?;
    let gw = gateway(backend.resolve(None)?, cache_dir)?;
    let mut records = records_for(&ds, out);
    let (mut failed, mut unparsed) = (0, 0);
    for (r, orig) in records.iter_mut().zip(&ds.records) {
        let label = ds
            .load_image(orig)
            .map_err(|e| e.to_string())
            .and_then(|img| build_region_query(&img, &pcfg).map_err(|e| e.to_string()))
            .and_then(|p| gw.send(&p).map_err(|e| e.to_string()));
        r.region = Some(match label {
            Ok(reply) => parse_region(&reply.content, &pcfg.region_vocabulary).unwrap_or_else(|| {
                unparsed += 1;
                "unknown".to_string()
            }),
            Err(e) => {
                eprintln!("  {}: {e}", orig.id);
                failed += 1;
                "unknown".to_string()
            }
        });
    }
    ensure_parent(out)?;
    save_manifest(out, &records).map_err(|e| CliError::fatal(e.to_string()))?;
    println!(
        "tagged {} records ({} unparseable, {} failed) -> {}",
        records.len(),
        unparsed,
        failed,
        out.display()
    );
    if failed * 10 > records.len() {
        return Err(CliError::fatal(format!("{failed} of {} records failed", records.len())));
    }
    Ok(())
}

fn orchestrator_error(e: OrchestratorError) -> CliError {
    match e {
        OrchestratorError::Config(_)
        | OrchestratorError::MissingMetadata { .. }
        | OrchestratorError::NotEnoughExamples { .. }
        | OrchestratorError::Dataset(_) => CliError::config(e.to_string()),
        _ => CliError::fatal(e.to_string()),
    }
}

pub fn run(flags: &RunFlags) -> Result<(), CliError> {
    let cfg = flags.resolve()?;
    let ds = open_manifest(&cfg.manifest)?;
    let gw = gateway(cfg.backend.clone(), Some(&cfg.cache_dir))?;
    let fingerprint = config_fingerprint(cfg.strategy, &ds, &gw, &cfg.run);
    let run_id = cfg
        .run_id
        .clone()
        .unwrap_or_else(|| format!("{}-{}", cfg.strategy, &fingerprint[..12]));
    let dir = cfg.out_root.join(&run_id);
    let outcome = run_strategy(cfg.strategy, &ds, &gw, &cfg.run, Some(&dir)).map_err(orchestrator_error)?;
    let set = &outcome.set;
    if outcome.interrupted {
        return Err(CliError::fatal(format!(
            "stopped after {} of {} predictions; rerun to resume from cache",
            set.predictions.len(),
            ds.split(Split::Test).count()
        )));
    }

    let lines = set.lines();
    let (metrics, note) = match paired_scores(&lines, &ds) {
        Ok((t, p)) => match compute_metrics(&t, &p) {
            Ok(m) => (Some(m), None),
            Err(e) => (None, Some(e.to_string())),
        },
        Err(e) => (None, Some(e)),
    };
    let record = RunRecord {
        run_id: run_id.clone(),
        strategy: cfg.strategy.to_string(),
        model_name: cfg.backend.model_name.clone(),
        config_fingerprint: fingerprint,
        manifest: std::fs::canonicalize(&cfg.manifest).unwrap_or(cfg.manifest.clone()),
        requested: set.predictions.len(),
        failures: set.failures(),
        cache_hit_rate: set.cache_hit_rate(),
        wall_time_secs: outcome.wall_time_secs,
        telemetry: outcome.telemetry,
        buffer_at_first_test: (cfg.strategy == ctiqa::orchestrator::Strategy::Feedback)
            .then_some(outcome.buffer_at_first_test),
        metrics,
        metrics_note: note.clone(),
    };
    write_file(
        &dir.join(SUMMARY_FILE),
        serde_json::to_vec_pretty(&record).expect("serializable"),
    )?;
    if let Some(m) = metrics {
        write_outputs(&dir, &[summary_of(&record, m)], &lines, &ds)?;
        println!(
            "{run_id}: PLCC {:.4}  SROCC {:.4}  KROCC {:.4}  Overall {:.4}  (n={})",
            m.plcc, m.srocc, m.krocc, m.overall, m.n
        );
    } else if let Some(n) = note {
        println!("{run_id}: metrics skipped: {n}");
    }
    println!(
        "{} predictions, {} failed, cache hits {:.0}% -> {}",
        record.requested,
        record.failures,
        100.0 * record.cache_hit_rate,
        dir.display()
    );
    if record.failures > 0 {
        return Err(CliError::partial(format!("{} record(s) failed", record.failures)));
    }
    Ok(())
}

fn summary_of(r: &RunRecord, metrics: MetricReport) -> RunSummary {
    RunSummary {
        model_name: r.model_name.clone(),
        strategy: r.strategy.clone(),
        metrics,
        requested: r.requested,
        failures: r.failures,
        cache_hit_rate: r.cache_hit_rate,
        wall_time_secs: r.wall_time_secs,
    }
}

fn write_tables(dir: &Path, summaries: &[RunSummary]) -> Result<(), CliError> {
    for f in [TableFormat::Csv, TableFormat::Json, TableFormat::Markdown] {
        let bytes = emit_table(summaries, f).map_err(|e| CliError::fatal(e.to_string()))?;
        write_file(&dir.join(format!("table.{}", f.extension())), bytes)?;
    }
    Ok(())
}

fn write_outputs(dir: &Path, summaries: &[RunSummary], lines: &[PredictionLine], ds: &Dataset) -> Result<(), CliError> {
    write_tables(dir, summaries)?;
    let (t, p) = paired_scores(lines, ds).map_err(CliError::config)?;
    let scatter = emit_scatter(&t, &p).map_err(|e| CliError::fatal(e.to_string()))?;
    let hist = emit_histogram(&t, &p).map_err(|e| CliError::fatal(e.to_string()))?;
    write_file(&dir.join("scatter.svg"), scatter)?;
    write_file(&dir.join("hist.svg"), hist)
}

pub fn evaluate(predictions: &Path, manifest: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let lines: Vec<PredictionLine> = read_jsonl(predictions).map_err(CliError::config)?;
    let ds = open_manifest(manifest)?;
    let (t, p) = paired_scores(&lines, &ds).map_err(CliError::config)?;
    let m = compute_metrics(&t, &p).map_err(|e| CliError::fatal(e.to_string()))?;
    println!("n        {}", m.n);
    println!("PLCC     {:.4}", m.plcc);
    println!("SROCC    {:.4}", m.srocc);
    println!("KROCC    {:.4}", m.krocc);
    println!("Overall  {:.4}", m.overall);
    if let Some(out) = out {
        write_file(out, serde_json::to_vec_pretty(&m).expect("serializable"))?;
    }
    Ok(())
}

pub fn report(runs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let mut summaries = Vec::new();
    for dir in runs {
        let path = dir.join(SUMMARY_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let rec: RunRecord =
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        match rec.metrics {
            Some(m) => summaries.push(summary_of(&rec, m)),
            None => eprintln!("warning: {} has no metrics; skipped", dir.display()),
        }
        // figures are regenerated so a report directory is self-contained
        if let (Some(_), Ok(ds)) = (rec.metrics, load_manifest(&rec.manifest)) {
            if let Ok(lines) = read_jsonl::<PredictionLine>(&dir.join(PREDICTIONS_FILE)) {
                if let Ok((t, p)) = paired_scores(&lines, &ds) {
                    if let (Ok(s), Ok(h)) = (emit_scatter(&t, &p), emit_histogram(&t, &p)) {
                        write_file(&out.join(format!("{}-scatter.svg", rec.run_id)), s)?;
                        write_file(&out.join(format!("{}-hist.svg", rec.run_id)), h)?;
                    }
                }
            }
        }
    }
    if summaries.is_empty() {
        return Err(CliError::config("no run with metrics to report"));
    }
    write_tables(out, &summaries)?;
    print!(
        "{}",
        String::from_utf8_lossy(
            &emit_table(&summaries, TableFormat::Markdown).map_err(|e| CliError::fatal(e.to_string()))?
        )
    );
    Ok(())
}

pub fn synth_dataset(out: &Path, train: usize, test: usize, size: usize, seed: u64) -> Result<(), CliError> {
    if size < 16 {
        return Err(CliError::config("--size must be at least 16"));
    }
    let spec = SyntheticDatasetSpec {
        train,
        test,
        size,
        seed,
        ..SyntheticDatasetSpec::default()
    };
    let records = write_dataset(out, &spec).map_err(|e| CliError::fatal(e.to_string()))?;
    println!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}
