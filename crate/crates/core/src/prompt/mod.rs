//! Prompt construction for every inference strategy.
//!
//! Builders are pure: equal inputs give byte-identical [`Prompt::canonical_bytes`].
//! In-context examples are always rendered in ascending score order (ties by
//! id) so the same example set yields the same prompt regardless of how it
//! was sampled.

mod template;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ImageRecord;
use crate::feedback::FeedbackEntry;
use crate::format::compact;
use crate::image::{ImageBuffer, ImageError};
use crate::noise::round_half_up;

pub use template::{Template, TemplateSet, DEFAULT_VERSION, TEMPLATE_SLOTS};

pub const PNG_MEDIA_TYPE: &str = "image/png";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("few-shot prompts need at least one example; use the zero-shot builder")]
    NoExamples,
    #[error("record `{id}` is missing {field}")]
    MissingMetadata { id: String, field: &'static str },
    #[error("example `{0}` has no radiologist score")]
    UnscoredExample(String),
    #[error("template `{name}`: {reason}")]
    Template { name: String, reason: String },
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Part {
    Text {
        text: String,
    },
    Image {
        media_type: String,
        #[serde(with = "base64_bytes")]
        data: Vec<u8>,
    },
}

impl Part {
    pub fn text(s: impl Into<String>) -> Self {
        Part::Text { text: s.into() }
    }

    pub fn png(image: &ImageBuffer) -> Result<Self, PromptError> {
        Ok(Part::Image {
            media_type: PNG_MEDIA_TYPE.to_string(),
            data: image.to_png16()?,
        })
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Part::Text { text } => Some(text),
            Part::Image { .. } => None,
        }
    }
}

mod base64_bytes {
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(s)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub parts: Vec<Part>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Score,
    Region,
}

/// A provider-neutral chat request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub kind: PromptKind,
    pub system_text: String,
    pub turns: Vec<Turn>,
    /// Hash of the template set that rendered this prompt. Not part of the
    /// canonical bytes; cache keys include it separately.
    #[serde(skip)]
    pub template_hash: String,
}

impl Prompt {
    /// Canonical serialization: compact JSON with fixed field order, images
    /// as base64.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("prompt serialization cannot fail")
    }

    pub fn parts(&self) -> impl Iterator<Item = &Part> {
        self.turns.iter().flat_map(|t| t.parts.iter())
    }

    pub fn image_count(&self) -> usize {
        self.parts().filter(|p| matches!(p, Part::Image { .. })).count()
    }

    /// The last image in the prompt, which is always the image being scored.
    pub fn target_image(&self) -> Option<&[u8]> {
        self.parts()
            .filter_map(|p| match p {
                Part::Image { data, .. } => Some(data.as_slice()),
                Part::Text { .. } => None,
            })
            .last()
    }

    /// System text followed by every text part, newline separated.
    pub fn all_text(&self) -> String {
        let mut out = self.system_text.clone();
        for t in self.parts().filter_map(Part::as_text) {
            out.push('\n');
            out.push_str(t);
        }
        out
    }
}

/// Default rubric labels for scores 0 through 4.
pub const DEFAULT_RUBRIC: [&str; 5] = ["very poor", "poor", "fair", "good", "excellent"];
pub const DEFAULT_REGIONS: [&str; 6] = ["abdomen", "kidney", "liver", "pelvis", "chest", "unknown"];

#[derive(Debug, Clone, PartialEq)]
pub struct PromptConfig {
    pub rubric_labels: [String; 5],
    pub region_vocabulary: Vec<String>,
    /// Decimal places used when rendering noise values.
    pub noise_decimals: u32,
    pub templates: TemplateSet,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            rubric_labels: DEFAULT_RUBRIC.map(String::from),
            region_vocabulary: DEFAULT_REGIONS.iter().map(|s| s.to_string()).collect(),
            noise_decimals: 3,
            templates: TemplateSet::builtin(),
        }
    }
}

impl PromptConfig {
    fn render(&self, name: &str, values: &[(&str, &str)]) -> String {
        self.templates.get(name).render(values)
    }

    fn rubric(&self) -> String {
        self.rubric_labels
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{i}: {l}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn system(&self) -> String {
        self.render("system", &[("rubric", &self.rubric())])
    }

    pub fn format_noise(&self, noise: f64) -> String {
        let d = self.noise_decimals.clamp(1, 6);
        format!("{:.*}", d as usize, round_half_up(noise, d))
    }

    fn metadata_block(&self, region: &str, noise: f64) -> String {
        self.render("metadata", &[("region", region), ("noise", &self.format_noise(noise))])
    }
}

/// An in-context example: a scored training record and its image.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotExample {
    pub record: ImageRecord,
    pub image: ImageBuffer,
}

impl ShotExample {
    pub fn new(record: ImageRecord, image: ImageBuffer) -> Result<Self, PromptError> {
        if record.score.is_none() {
            return Err(PromptError::UnscoredExample(record.id));
        }
        Ok(Self { record, image })
    }

    pub fn score(&self) -> f64 {
        self.record.score.unwrap_or_default()
    }
}

/// Target-side metadata for metadata-aware prompts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetMetadata<'a> {
    pub region: &'a str,
    pub noise: f64,
}

fn sorted_examples(examples: &[ShotExample]) -> Vec<&ShotExample> {
    let mut v: Vec<&ShotExample> = examples.iter().collect();
    v.sort_by(|a, b| {
        a.score()
            .total_cmp(&b.score())
            .then_with(|| a.record.id.cmp(&b.record.id))
    });
    v
}

fn score_prompt(cfg: &PromptConfig, turns: Vec<Turn>) -> Prompt {
    Prompt {
        kind: PromptKind::Score,
        system_text: cfg.system(),
        turns,
        template_hash: cfg.templates.hash(),
    }
}

fn examples_turn(examples: &[ShotExample], cfg: &PromptConfig, with_metadata: bool) -> Result<Turn, PromptError> {
    let n = examples.len().to_string();
    let mut parts = vec![Part::text(cfg.render("examples_intro", &[("examples", &n)]))];
    for (i, ex) in sorted_examples(examples).into_iter().enumerate() {
        let metadata = if with_metadata {
            let region = ex
                .record
                .region
                .as_deref()
                .ok_or_else(|| PromptError::MissingMetadata {
                    id: ex.record.id.clone(),
                    field: "region",
                })?;
            let noise = ex.record.noise.ok_or_else(|| PromptError::MissingMetadata {
                id: ex.record.id.clone(),
                field: "noise",
            })?;
            cfg.metadata_block(region, noise)
        } else {
            String::new()
        };
        let index = (i + 1).to_string();
        let score = compact(ex.score(), 4);
        parts.push(Part::text(cfg.render(
            "example",
            &[("index", &index), ("score", &score), ("metadata", &metadata)],
        )));
        parts.push(Part::png(&ex.image)?);
    }
    Ok(Turn {
        role: Role::User,
        parts,
    })
}

fn target_parts(
    target: &ImageBuffer,
    cfg: &PromptConfig,
    metadata: Option<TargetMetadata<'_>>,
) -> Result<Vec<Part>, PromptError> {
    let block = metadata
        .map(|m| cfg.metadata_block(m.region, m.noise))
        .unwrap_or_default();
    Ok(vec![
        Part::text(cfg.render("target", &[("metadata", &block)])),
        Part::png(target)?,
    ])
}

/// Scores a single image with no examples.
pub fn build_zero_shot(target: &ImageBuffer, cfg: &PromptConfig) -> Result<Prompt, PromptError> {
    Ok(score_prompt(
        cfg,
        vec![Turn {
            role: Role::User,
            parts: target_parts(target, cfg, None)?,
        }],
    ))
}

/// Scored examples in one user turn, the target in a final user turn.
pub fn build_few_shot(
    examples: &[ShotExample],
    target: &ImageBuffer,
    cfg: &PromptConfig,
) -> Result<Prompt, PromptError> {
    if examples.is_empty() {
        return Err(PromptError::NoExamples);
    }
    Ok(score_prompt(
        cfg,
        vec![
            examples_turn(examples, cfg, false)?,
            Turn {
                role: Role::User,
                parts: target_parts(target, cfg, None)?,
            },
        ],
    ))
}

/// Few-shot prompt where every example and the target carry `Region:` and
/// `Noise:` lines.
pub fn build_with_metadata(
    examples: &[ShotExample],
    target: &ImageBuffer,
    target_meta: TargetMetadata<'_>,
    cfg: &PromptConfig,
) -> Result<Prompt, PromptError> {
    build_with_feedback(examples, &[], target, target_meta, cfg)
}

/// Metadata prompt plus one feedback line per entry, placed before the target.
/// With an empty buffer the result equals [`build_with_metadata`].
pub fn build_with_feedback(
    examples: &[ShotExample],
    buffer: &[FeedbackEntry],
    target: &ImageBuffer,
    target_meta: TargetMetadata<'_>,
    cfg: &PromptConfig,
) -> Result<Prompt, PromptError> {
    if examples.is_empty() {
        return Err(PromptError::NoExamples);
    }
    let mut final_parts = Vec::new();
    if !buffer.is_empty() {
        let lines: Vec<String> = buffer
            .iter()
            .map(|e| {
                cfg.render(
                    "feedback_line",
                    &[
                        ("id", &e.id),
                        ("predicted", &compact(e.y_hat, 4)),
                        ("truth", &compact(e.y, 4)),
                        ("error", &compact(e.e, 4)),
                        ("noise", &cfg.format_noise(e.n)),
                    ],
                )
            })
            .collect();
        final_parts.push(Part::text(cfg.render("feedback", &[("feedback", &lines.join("\n"))])));
    }
    final_parts.extend(target_parts(target, cfg, Some(target_meta))?);
    Ok(score_prompt(
        cfg,
        vec![
            examples_turn(examples, cfg, true)?,
            Turn {
                role: Role::User,
                parts: final_parts,
            },
        ],
    ))
}

/// Asks for a single region label from the configured vocabulary.
pub fn build_region_query(target: &ImageBuffer, cfg: &PromptConfig) -> Result<Prompt, PromptError> {
    let vocabulary = cfg.region_vocabulary.join(", ");
    Ok(Prompt {
        kind: PromptKind::Region,
        system_text: cfg.render("region_system", &[]),
        turns: vec![Turn {
            role: Role::User,
            parts: vec![
                Part::text(cfg.render("region_query", &[("vocabulary", &vocabulary)])),
                Part::png(target)?,
            ],
        }],
        template_hash: cfg.templates.hash(),
    })
}
