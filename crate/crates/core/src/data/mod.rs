//! Multimodal samples, datasets, group-aware splits, and their on-disk formats.

mod checkpoint;
mod io;
mod split;
mod synthetic;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use io::{load_dataset, save_dataset, FORMAT_VERSION};
pub use split::{split, Splits};
pub use synthetic::{generate_synthetic, SyntheticSpec, TaskKind};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityKind {
    Vector,
    Sequence,
}

impl fmt::Display for ModalityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModalityKind::Vector => "vector",
            ModalityKind::Sequence => "sequence",
        })
    }
}

impl FromStr for ModalityKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vector" => Ok(ModalityKind::Vector),
            "sequence" => Ok(ModalityKind::Sequence),
            other => Err(Error::Config(format!("unknown modality kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Regression,
    Classification,
}

/// One modality's features for one sample.
#[derive(Clone, Debug, PartialEq)]
pub enum Features {
    Vector(Vec<f64>),
    /// Steps of equal width; lengths may differ between samples.
    Sequence(Vec<Vec<f64>>),
}

impl Features {
    pub fn kind(&self) -> ModalityKind {
        match self {
            Features::Vector(_) => ModalityKind::Vector,
            Features::Sequence(_) => ModalityKind::Sequence,
        }
    }

    /// Per-step width (the vector length for vector features).
    pub fn width(&self) -> Option<usize> {
        match self {
            Features::Vector(v) => Some(v.len()),
            Features::Sequence(s) => s.first().map(Vec::len),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Label {
    Value(f64),
    Class(usize),
}

impl Label {
    /// Numeric view: the value itself, or the class index.
    pub fn as_f64(&self) -> f64 {
        match *self {
            Label::Value(v) => v,
            Label::Class(c) => c as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Speaker analogue; splits never put one group in two partitions.
    pub group_id: String,
    pub modalities: Vec<Features>,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub name: String,
    pub kind: ModalityKind,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub label_kind: LabelKind,
    /// Zero for regression.
    pub class_count: usize,
    pub sample_count: usize,
    pub modalities: Vec<ModalitySpec>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::data(format!(
                "unsupported dataset format version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.modalities.is_empty() {
            return Err(Error::data("manifest declares no modalities"));
        }
        if let Some(m) = self.modalities.iter().find(|m| m.width == 0) {
            return Err(Error::data(format!("modality {} has zero width", m.name)));
        }
        if self.label_kind == LabelKind::Classification && self.class_count < 2 {
            return Err(Error::data("classification needs at least two classes"));
        }
        Ok(())
    }

    pub fn widths(&self) -> Vec<usize> {
        self.modalities.iter().map(|m| m.width).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.modalities.iter().map(|m| m.name.clone()).collect()
    }

    /// Width of the model's prediction vector: 1 for regression, else the class count.
    pub fn output_dim(&self) -> usize {
        match self.label_kind {
            LabelKind::Regression => 1,
            LabelKind::Classification => self.class_count,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Checks every sample against the manifest.
    pub fn new(manifest: DatasetManifest, samples: Vec<Sample>) -> Result<Self> {
        manifest.validate()?;
        for s in &samples {
            check_sample(&manifest, s)?;
        }
        let mut manifest = manifest;
        manifest.sample_count = samples.len();
        Ok(Dataset { manifest, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset(&self, samples: Vec<Sample>) -> Dataset {
        let mut manifest = self.manifest.clone();
        manifest.sample_count = samples.len();
        Dataset { manifest, samples }
    }
}

fn check_sample(manifest: &DatasetManifest, s: &Sample) -> Result<()> {
    if s.modalities.len() != manifest.modalities.len() {
        return Err(Error::data(format!(
            "sample {} has {} modalities, manifest declares {}",
            s.id,
            s.modalities.len(),
            manifest.modalities.len()
        )));
    }
    for (f, spec) in s.modalities.iter().zip(&manifest.modalities) {
        if f.kind() != spec.kind {
            return Err(Error::data(format!("sample {}: modality {} should be a {}", s.id, spec.name, spec.kind)));
        }
        let ok = match f {
            Features::Vector(v) => v.len() == spec.width,
            Features::Sequence(steps) => !steps.is_empty() && steps.iter().all(|x| x.len() == spec.width),
        };
        if !ok {
            return Err(Error::data(format!(
                "sample {}: modality {} does not have width {}",
                s.id, spec.name, spec.width
            )));
        }
    }
    match (manifest.label_kind, s.label) {
        (LabelKind::Regression, Label::Value(_)) => Ok(()),
        (LabelKind::Classification, Label::Class(c)) if c < manifest.class_count => Ok(()),
        _ => Err(Error::data(format!("sample {}: label {:?} does not fit the manifest", s.id, s.label))),
    }
}
