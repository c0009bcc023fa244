//! Text checkpoints: a magic line, one JSON metadata line, then one block per
//! parameter (`param <name> <dims...>` followed by its values on one line).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DatasetManifest;
use crate::autodiff::Parameterized;
use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::tensor::DenseTensor;

const MAGIC: &str = "mrrf-checkpoint 1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelSpec,
    pub dataset: DatasetManifest,
    /// Free-form provenance such as split seed and ratios.
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<(String, DenseTensor)>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, dataset: &DatasetManifest, extra: BTreeMap<String, serde_json::Value>) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                model: model.spec().clone(),
                dataset: dataset.clone(),
                extra,
            },
            params: model
                .parameters()
                .iter()
                .map(|p| (p.name().to_string(), p.value().clone()))
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::build(&self.header.model, &self.header.dataset, 0)?;
        model.load_values(self.params.iter().map(|(n, v)| (n.as_str(), v)))?;
        Ok(model)
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = String::from(MAGIC);
        out.push('\n');
        out.push_str(&serde_json::to_string(&self.header).map_err(|e| Error::data(format!("cannot encode checkpoint header: {e}")))?);
        out.push('\n');
        for (name, t) in &self.params {
            let dims: Vec<String> = t.dims().iter().map(usize::to_string).collect();
            let _ = writeln!(out, "param {name} {}", dims.join(" "));
            let values: Vec<String> = t.data().iter().map(f64::to_string).collect();
            out.push_str(&values.join(" "));
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::data(format!("{source}:{line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, MAGIC)) => {}
            Some((n, other)) => return Err(err(n, format!("not a checkpoint (header {other:?})"))),
            None => return Err(err(1, "empty checkpoint".into())),
        }
        let (n, meta) = lines.next().ok_or_else(|| err(2, "missing metadata line".into()))?;
        let header: CheckpointHeader = serde_json::from_str(meta).map_err(|e| err(n, e.to_string()))?;
        let mut params = Vec::new();
        while let Some((n, line)) = lines.next() {
            if line.is_empty() {
                continue;
            }
            let mut words = line.split(' ');
            if words.next() != Some("param") {
                return Err(err(n, format!("expected a param block, found {line:?}")));
            }
            let name = words.next().ok_or_else(|| err(n, "param block without a name".into()))?;
            let dims = words
                .map(|w| w.parse::<usize>().map_err(|_| err(n, format!("bad dimension {w:?}"))))
                .collect::<Result<Vec<_>>>()?;
            let (vn, vline) = lines.next().ok_or_else(|| err(n + 1, format!("values for {name} missing")))?;
            let values = if vline.is_empty() {
                Vec::new()
            } else {
                vline
                    .split(' ')
                    .map(|w| w.parse::<f64>().map_err(|_| err(vn, format!("bad value {w:?}"))))
                    .collect::<Result<Vec<_>>>()?
            };
            let t = DenseTensor::from_dims(&dims, values).map_err(|e| err(vn, format!("{name}: {e}")))?;
            params.push((name.to_string(), t));
        }
        Ok(Checkpoint { header, params })
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_text()?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    Checkpoint::parse(&text, &path.display().to_string())
}
