//! JSON run configuration merged with command-line flags (flag > file > default).

use std::path::{Path, PathBuf};

use ctiqa::gateway::{BackendConfig, Provider};
use ctiqa::orchestrator::{RunConfig, Strategy};
use ctiqa::prompt::{PromptConfig, TemplateSet};
use serde::Deserialize;

use crate::CliError;

/// Backend given inline or as a path to a separate JSON file.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum BackendRef {
    Path(PathBuf),
    Inline(Box<BackendConfig>),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub manifest: Option<PathBuf>,
    pub backend: Option<BackendRef>,
    pub strategy: Option<Strategy>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub warmup_count: Option<usize>,
    pub buffer_cap: Option<usize>,
    pub resample_per_step: Option<bool>,
    pub interleave_every: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub run_id: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub rubric_labels: Option<[String; 5]>,
    pub region_vocabulary: Option<Vec<String>>,
    pub noise_decimals: Option<u32>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// Paths inside a config file are relative to the file's directory.
fn rebase(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let mut cfg: FileConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        cfg.manifest = cfg.manifest.map(|p| rebase(&base, p));
        cfg.out_dir = cfg.out_dir.map(|p| rebase(&base, p));
        cfg.cache_dir = cfg.cache_dir.map(|p| rebase(&base, p));
        cfg.templates_dir = cfg.templates_dir.map(|p| rebase(&base, p));
        cfg.backend = cfg.backend.map(|b| match b {
            BackendRef::Path(p) => BackendRef::Path(rebase(&base, p)),
            inline => inline,
        });
        Ok(cfg)
    }
}

/// Backend overrides shared by `run` and `tag-regions`.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct BackendFlags {
    /// Backend JSON file (overrides the config file's `backend`).
    #[arg(long)]
    pub backend: Option<PathBuf>,
    /// `mock` or `openai_compatible`.
    #[arg(long)]
    pub provider: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key.
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub requests_per_minute: Option<u32>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub mock_seed: Option<u64>,
}

impl BackendFlags {
    pub fn resolve(&self, file: Option<&BackendRef>) -> Result<BackendConfig, CliError> {
        let mut cfg = match (&self.backend, file) {
            (Some(p), _) => read_json(p)?,
            (None, Some(BackendRef::Path(p))) => read_json(p)?,
            (None, Some(BackendRef::Inline(b))) => (**b).clone(),
            (None, None) => BackendConfig::default(),
        };
        if let Some(p) = &self.provider {
            cfg.provider = match p.as_str() {
                "mock" => Provider::Mock,
                "openai_compatible" | "openai-compatible" => Provider::OpenaiCompatible,
                other => return Err(CliError::config(format!("unknown provider `{other}`"))),
            };
        }
        if let Some(v) = &self.model {
            cfg.model_name = v.clone();
        }
        if let Some(v) = &self.base_url {
            cfg.base_url = v.clone();
        }
        if let Some(v) = &self.api_key_env {
            cfg.api_key_env = v.clone();
        }
        if let Some(v) = self.temperature {
            cfg.temperature = v;
        }
        if let Some(v) = self.max_retries {
            cfg.max_retries = v;
        }
        if let Some(v) = self.requests_per_minute {
            cfg.requests_per_minute = v;
        }
        if let Some(v) = self.max_in_flight {
            cfg.max_in_flight = v;
        }
        if let Some(v) = self.mock_seed {
            cfg.mock_seed = v;
        }
        cfg.validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct PromptFlags {
    /// Directory of template files replacing the built-in set.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Comma-separated region labels.
    #[arg(long, value_delimiter = ',')]
    pub regions: Option<Vec<String>>,
    #[arg(long)]
    pub noise_decimals: Option<u32>,
}

impl PromptFlags {
    pub fn resolve(&self, file: &FileConfig) -> Result<PromptConfig, CliError> {
        let mut cfg = PromptConfig::default();
        if let Some(dir) = self.templates.as_ref().or(file.templates_dir.as_ref()) {
            cfg.templates = TemplateSet::from_dir(dir).map_err(|e| CliError::config(e.to_string()))?;
        }
        if let Some(labels) = &file.rubric_labels {
            cfg.rubric_labels = labels.clone();
        }
        if let Some(v) = self.regions.clone().or_else(|| file.region_vocabulary.clone()) {
            if v.is_empty() {
                return Err(CliError::config("region vocabulary is empty"));
            }
            cfg.region_vocabulary = v;
        }
        if let Some(d) = self.noise_decimals.or(file.noise_decimals) {
            if !(1..=6).contains(&d) {
                return Err(CliError::config("noise_decimals must be in [1, 6]"));
            }
            cfg.noise_decimals = d;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct RunFlags {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// zero_shot, few_shot, metadata or feedback.
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// In-context example count.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub warmup_count: Option<usize>,
    #[arg(long)]
    pub buffer_cap: Option<usize>,
    #[arg(long)]
    pub resample_per_step: bool,
    /// Feedback only: score one extra training image every N test records.
    #[arg(long)]
    pub interleave_every: Option<usize>,
    /// Output root; the run goes to `<out>/<run-id>/`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub run_id: Option<String>,
    /// Response cache directory (default `<out>/cache`).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Exit after writing this many predictions, leaving the run unfinished.
    #[arg(long, hide = true)]
    pub stop_after: Option<usize>,
    #[command(flatten)]
    pub backend: BackendFlags,
    #[command(flatten)]
    pub prompt: PromptFlags,
}

#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub manifest: PathBuf,
    pub strategy: Strategy,
    pub backend: BackendConfig,
    pub run: RunConfig,
    pub out_root: PathBuf,
    pub run_id: Option<String>,
    pub cache_dir: PathBuf,
}

impl RunFlags {
    pub fn resolve(&self) -> Result<ResolvedRun, CliError> {
        let file = FileConfig::load(self.config.as_deref())?;
        let manifest = self
            .manifest
            .clone()
            .or(file.manifest.clone())
            .ok_or_else(|| CliError::config("no manifest given (--manifest or `manifest` in the config file)"))?;
        let strategy = self
            .strategy
            .or(file.strategy)
            .ok_or_else(|| CliError::config("no strategy given (--strategy or `strategy` in the config file)"))?;
        let defaults = RunConfig::default();
        let run = RunConfig {
            k: self.k.or(file.k).unwrap_or(defaults.k),
            seed: self.seed.or(file.seed).unwrap_or(defaults.seed),
            warmup_count: self.warmup_count.or(file.warmup_count).unwrap_or(defaults.warmup_count),
            buffer_cap: self.buffer_cap.or(file.buffer_cap).unwrap_or(defaults.buffer_cap),
            resample_per_step: self.resample_per_step || file.resample_per_step.unwrap_or(defaults.resample_per_step),
            interleave_every: self.interleave_every.or(file.interleave_every),
            stop_after: self.stop_after,
            prompt: self.prompt.resolve(&file)?,
        };
        if strategy.uses_examples() && run.k == 0 {
            return Err(CliError::config("k must be at least 1 for few-shot strategies"));
        }
        if run.buffer_cap == 0 {
            return Err(CliError::config("buffer_cap must be at least 1"));
        }
        let out_root = self
            .out
            .clone()
            .or(file.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        let cache_dir = self
            .cache_dir
            .clone()
            .or(file.cache_dir.clone())
            .unwrap_or_else(|| out_root.join("cache"));
        Ok(ResolvedRun {
            manifest,
            strategy,
            backend: self.backend.resolve(file.backend.as_ref())?,
            run,
            out_root,
            run_id: self.run_id.clone().or(file.run_id.clone()),
            cache_dir,
        })
    }
}
