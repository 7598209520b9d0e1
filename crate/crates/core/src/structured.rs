//! Re-ranker inputs built from a question and a candidate answer.
//!
//! Two layouts are supported:
//!
//! * **fs** (fine-grained structured): `subject [S] description [D] tags [T]`,
//!   with tags joined by `"; "`. Each segment is always followed by its marker,
//!   even when the segment text is empty. Ablations remove a segment together
//!   with its marker.
//! * **cat** (flat): `subject description tags` in one unmarked segment.
//!
//! The scorer service wraps the rendered query and answer with its own model
//! tokens (`[CLS] query [SEP] answer [SEP]`) and registers the three markers
//! as atomic vocabulary entries.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Question;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum StructuredError {
    #[error("an ablation cannot drop all three segments")]
    EverythingDropped,
    #[error("question `{question_id}` field {field} contains the reserved marker `{marker}`")]
    ReservedMarker {
        question_id: String,
        field: Field,
        marker: &'static str,
    },
    #[error("unknown segment `{0}` (expected S, D or T)")]
    UnknownSegment(String),
    #[error("unknown input format `{0}` (expected fs or cat)")]
    UnknownFormat(String),
}

/// Splitter marker following a query segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Marker {
    S,
    D,
    T,
}

impl Marker {
    pub const ALL: [Marker; 3] = [Marker::S, Marker::D, Marker::T];

    /// Literal form inserted into rendered text.
    pub fn surface(self) -> &'static str {
        match self {
            Marker::S => "[S]",
            Marker::D => "[D]",
            Marker::T => "[T]",
        }
    }
}

/// Question field carried by a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Field {
    Subject,
    Description,
    Tags,
}

impl Field {
    pub const ALL: [Field; 3] = [Field::Subject, Field::Description, Field::Tags];

    pub fn marker(self) -> Marker {
        match self {
            Field::Subject => Marker::S,
            Field::Description => Marker::D,
            Field::Tags => Marker::T,
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Field::Subject => "subject",
            Field::Description => "description",
            Field::Tags => "tags",
        })
    }
}

impl FromStr for Field {
    type Err = StructuredError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "s" | "subject" => Ok(Field::Subject),
            "d" | "description" => Ok(Field::Description),
            "t" | "tags" => Ok(Field::Tags),
            _ => Err(StructuredError::UnknownSegment(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Cat,
    Fs,
}

impl InputFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            InputFormat::Cat => "cat",
            InputFormat::Fs => "fs",
        }
    }
}

impl fmt::Display for InputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InputFormat {
    type Err = StructuredError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cat" | "ce-cat" => Ok(InputFormat::Cat),
            "fs" | "ce-fs" => Ok(InputFormat::Fs),
            _ => Err(StructuredError::UnknownFormat(s.to_string())),
        }
    }
}

/// Segments to remove from the fs layout.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationSpec {
    drop: BTreeSet<Field>,
}

impl AblationSpec {
    pub fn none() -> Self {
        AblationSpec::default()
    }

    pub fn dropping(fields: impl IntoIterator<Item = Field>) -> Result<Self, StructuredError> {
        let drop: BTreeSet<Field> = fields.into_iter().collect();
        if drop.len() == Field::ALL.len() {
            return Err(StructuredError::EverythingDropped);
        }
        Ok(AblationSpec { drop })
    }

    pub fn drops(&self, field: Field) -> bool {
        self.drop.contains(&field)
    }

    pub fn is_empty(&self) -> bool {
        self.drop.is_empty()
    }

    pub fn dropped(&self) -> impl Iterator<Item = Field> + '_ {
        self.drop.iter().copied()
    }

    /// Short label such as `full` or `w/o [T]`.
    pub fn label(&self) -> String {
        if self.drop.is_empty() {
            return "full".into();
        }
        let markers: Vec<&str> = self.drop.iter().map(|f| f.marker().surface()).collect();
        format!("w/o {}", markers.join(" "))
    }
}

impl FromStr for AblationSpec {
    type Err = StructuredError;

    /// Comma-separated segment names, e.g. `T` or `S,D`; empty means none.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let fields = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Field>, _>>()?;
        AblationSpec::dropping(fields)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySegment {
    pub text: String,
    /// `None` for the flat layout.
    pub marker: Option<Marker>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredInput {
    pub query_segments: Vec<QuerySegment>,
    pub answer_text: String,
}

impl StructuredInput {
    /// Query side as one string: segment texts and marker surfaces separated
    /// by single spaces. Empty segment texts contribute nothing but their marker.
    pub fn render_query(&self) -> String {
        let mut pieces: Vec<&str> = Vec::with_capacity(self.query_segments.len() * 2);
        for seg in &self.query_segments {
            if !seg.text.is_empty() {
                pieces.push(&seg.text);
            }
            if let Some(m) = seg.marker {
                pieces.push(m.surface());
            }
        }
        pieces.join(" ")
    }

    pub fn markers(&self) -> Vec<Marker> {
        self.query_segments.iter().filter_map(|s| s.marker).collect()
    }

    /// Full pair including the model-side tokens, for display.
    pub fn render_with_model_tokens(&self) -> String {
        format!("[CLS] {} [SEP] {} [SEP]", self.render_query(), self.answer_text)
    }
}

/// Tags joined by `"; "`.
pub fn render_tags(tags: &[String]) -> String {
    tags.join("; ")
}

fn check_reserved(question: &Question) -> Result<(), StructuredError> {
    let tags = render_tags(&question.tags);
    for (field, text) in [
        (Field::Subject, question.subject.as_str()),
        (Field::Description, question.description.as_str()),
        (Field::Tags, tags.as_str()),
    ] {
        if let Some(m) = Marker::ALL.iter().find(|m| text.contains(m.surface())) {
            return Err(StructuredError::ReservedMarker {
                question_id: question.id.clone(),
                field,
                marker: m.surface(),
            });
        }
    }
    Ok(())
}

fn field_text(question: &Question, field: Field) -> String {
    match field {
        Field::Subject => question.subject.clone(),
        Field::Description => question.description.clone(),
        Field::Tags => render_tags(&question.tags),
    }
}

/// Fine-grained structured input: `(subject, S)`, `(description, D)`,
/// `(tags, T)` minus the ablated segments.
pub fn build_fs_input(
    question: &Question,
    answer_text: &str,
    ablation: &AblationSpec,
) -> Result<StructuredInput, StructuredError> {
    if ablation.drop.len() == Field::ALL.len() {
        return Err(StructuredError::EverythingDropped);
    }
    check_reserved(question)?;
    let query_segments = Field::ALL
        .iter()
        .filter(|f| !ablation.drops(**f))
        .map(|&f| QuerySegment {
            text: field_text(question, f),
            marker: Some(f.marker()),
        })
        .collect();
    Ok(StructuredInput {
        query_segments,
        answer_text: answer_text.to_string(),
    })
}

/// Flat input: non-empty parts of subject, description and (optionally) the
/// rendered tags, joined by single spaces.
pub fn build_cat_input(question: &Question, answer_text: &str, include_tags: bool) -> StructuredInput {
    let tags = render_tags(&question.tags);
    let mut parts = vec![question.subject.as_str(), question.description.as_str()];
    if include_tags {
        parts.push(&tags);
    }
    parts.retain(|p| !p.is_empty());
    StructuredInput {
        query_segments: vec![QuerySegment {
            text: parts.join(" "),
            marker: None,
        }],
        answer_text: answer_text.to_string(),
    }
}

/// Options for [`build_input`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputOptions {
    pub format: InputFormat,
    /// Applies to the fs layout only.
    pub ablation: AblationSpec,
    /// Applies to the cat layout only.
    pub cat_includes_tags: bool,
}

impl InputOptions {
    pub fn fs(ablation: AblationSpec) -> Self {
        InputOptions {
            format: InputFormat::Fs,
            ablation,
            cat_includes_tags: true,
        }
    }

    pub fn cat() -> Self {
        InputOptions {
            format: InputFormat::Cat,
            ablation: AblationSpec::none(),
            cat_includes_tags: true,
        }
    }
}

pub fn build_input(question: &Question, answer_text: &str, options: &InputOptions) -> Result<StructuredInput, StructuredError> {
    match options.format {
        InputFormat::Fs => build_fs_input(question, answer_text, &options.ablation),
        InputFormat::Cat => Ok(build_cat_input(question, answer_text, options.cat_includes_tags)),
    }
}
