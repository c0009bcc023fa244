//! Dataset directory layout:
//!
//! - `manifest.toml`: format version, label kind, class count, sample count, modalities
//! - `labels.csv`: `id,group_id,label`
//! - `<modality>.csv`: `id,f0..` for vectors, `id,step,f0..` for sequences
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a save
//! followed by a load reproduces every value bit for bit.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, DatasetManifest, Features, Label, LabelKind, ModalityKind, Sample};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.toml";
const LABELS: &str = "labels.csv";

fn modality_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.csv"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn feature_header(width: usize) -> String {
    (0..width).map(|j| format!(",f{j}")).collect()
}

fn push_row(out: &mut String, prefix: &str, values: &[f64]) {
    out.push_str(prefix);
    for v in values {
        let _ = write!(out, ",{v}");
    }
    out.push('\n');
}

pub fn save_dataset(data: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = toml::to_string(&data.manifest).map_err(|e| Error::data(format!("cannot encode manifest: {e}")))?;
    write(&dir.join(MANIFEST), &manifest)?;

    let mut labels = String::from("id,group_id,label\n");
    for s in &data.samples {
        let label = match s.label {
            Label::Value(v) => v.to_string(),
            Label::Class(c) => c.to_string(),
        };
        let _ = writeln!(labels, "{},{},{label}", s.id, s.group_id);
    }
    write(&dir.join(LABELS), &labels)?;

    for (m, spec) in data.manifest.modalities.iter().enumerate() {
        let mut out = match spec.kind {
            ModalityKind::Vector => format!("id{}\n", feature_header(spec.width)),
            ModalityKind::Sequence => format!("id,step{}\n", feature_header(spec.width)),
        };
        for s in &data.samples {
            match &s.modalities[m] {
                Features::Vector(v) => push_row(&mut out, &s.id, v),
                Features::Sequence(steps) => {
                    for (t, x) in steps.iter().enumerate() {
                        push_row(&mut out, &format!("{},{t}", s.id), x);
                    }
                }
            }
        }
        write(&modality_file(dir, &spec.name), &out)?;
    }
    Ok(())
}

struct Table {
    path: PathBuf,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn read(path: PathBuf, header: &str) -> Result<Self> {
        let text = fs::read_to_string(&path).map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(text.as_bytes());
        let found = reader
            .headers()
            .map_err(|e| Error::data(format!("{}:1: {e}", path.display())))?
            .iter()
            .collect::<Vec<_>>()
            .join(",");
        if found != header {
            return Err(Error::data(format!(
                "{}:1: header is {found:?}, expected {header:?}",
                path.display()
            )));
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                Error::data(format!("{}:{line}: {e}", path.display()))
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec));
        }
        Ok(Table { path, rows })
    }

    fn err(&self, line: u64, msg: impl std::fmt::Display) -> Error {
        Error::data(format!("{}:{line}: {msg}", self.path.display()))
    }

    fn number<T: std::str::FromStr>(&self, line: u64, field: &str, what: &str) -> Result<T> {
        field
            .parse()
            .map_err(|_| self.err(line, format!("cannot parse {what} from {field:?}")))
    }
}

/// Loads from a dataset directory or its manifest path.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let (dir, manifest_path) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST))
    } else {
        (path.parent().map(Path::to_path_buf).unwrap_or_default(), path.to_path_buf())
    };
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", manifest_path.display())))?;
    let manifest: DatasetManifest =
        toml::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", manifest_path.display())))?;
    manifest.validate()?;

    let labels = Table::read(dir.join(LABELS), "id,group_id,label")?;
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut samples = Vec::with_capacity(labels.rows.len());
    for (line, rec) in &labels.rows {
        if rec.len() != 3 {
            return Err(labels.err(*line, format!("expected 3 columns, found {}", rec.len())));
        }
        let id = rec[0].to_string();
        let label = match manifest.label_kind {
            LabelKind::Regression => Label::Value(labels.number(*line, &rec[2], "label")?),
            LabelKind::Classification => Label::Class(labels.number(*line, &rec[2], "class")?),
        };
        if index.insert(id.clone(), samples.len()).is_some() {
            return Err(labels.err(*line, format!("duplicate sample id {id}")));
        }
        samples.push(Sample {
            id,
            group_id: rec[1].to_string(),
            modalities: Vec::with_capacity(manifest.modalities.len()),
            label,
        });
    }
    if samples.len() != manifest.sample_count {
        return Err(Error::data(format!(
            "{}: manifest declares {} samples, labels have {}",
            manifest_path.display(),
            manifest.sample_count,
            samples.len()
        )));
    }

    for spec in &manifest.modalities {
        let w = spec.width;
        let file = modality_file(&dir, &spec.name);
        let lead = match spec.kind {
            ModalityKind::Vector => 1,
            ModalityKind::Sequence => 2,
        };
        let header = match spec.kind {
            ModalityKind::Vector => format!("id{}", feature_header(w)),
            ModalityKind::Sequence => format!("id,step{}", feature_header(w)),
        };
        let table = Table::read(file, &header)?;
        let mut features: Vec<Option<Features>> = vec![None; samples.len()];
        for (line, rec) in &table.rows {
            let id = &rec[0];
            if rec.len() != lead + w {
                return Err(table.err(
                    *line,
                    format!("row for {id} has {} feature columns, manifest declares width {w}", rec.len().saturating_sub(lead)),
                ));
            }
            let &i = index
                .get(id)
                .ok_or_else(|| table.err(*line, format!("unknown sample id {id}")))?;
            let values = (lead..rec.len())
                .map(|j| table.number(*line, &rec[j], "feature"))
                .collect::<Result<Vec<f64>>>()?;
            match spec.kind {
                ModalityKind::Vector => {
                    if features[i].is_some() {
                        return Err(table.err(*line, format!("duplicate row for {id}")));
                    }
                    features[i] = Some(Features::Vector(values));
                }
                ModalityKind::Sequence => {
                    let step: usize = table.number(*line, &rec[1], "step")?;
                    let slot = features[i].get_or_insert_with(|| Features::Sequence(Vec::new()));
                    let Features::Sequence(steps) = slot else { unreachable!() };
                    if step != steps.len() {
                        return Err(table.err(*line, format!("step {step} for {id} out of order, expected {}", steps.len())));
                    }
                    steps.push(values);
                }
            }
        }
        for (s, f) in samples.iter_mut().zip(features) {
            let f = f.ok_or_else(|| {
                Error::data(format!("{}: no features for sample {}", modality_file(&dir, &spec.name).display(), s.id))
            })?;
            s.modalities.push(f);
        }
    }
    Dataset::new(manifest, samples)
}
