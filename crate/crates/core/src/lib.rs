//! Multimodal fusion layers with per-modality Tucker compression, the
//! training stack around them, and the experiment harness.
//!
//! Fused representations are computed either densely (tensor fusion), with a
//! shared-rank CP factorization (low-rank fusion), or with a Tucker
//! factorization whose ranks differ per modality. Everything runs on `f64`
//! row-major tensors with a small tape-based differentiator.

#![cfg_attr(test, allow(clippy::needless_range_loop))]

pub mod autodiff;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod selftest;
pub mod sweep;
pub mod tensor;
pub mod train;

pub use autodiff::{grad_check, Differentiable, GradCheckOptions, GradCheckReport, Parameter, Parameterized, Tape};
pub use data::{Dataset, DatasetManifest, Features, Label, LabelKind, ModalityKind, Sample, SyntheticSpec};
pub use encoders::EncoderKind;
pub use error::{Error, Result};
pub use fusion::{Fusion, FusionKind, FusionLayer, LmfLayer, MrrfLayer, TensorFusion, ConcatFusion};
pub use metrics::MetricReport;
pub use model::{EncoderSpec, Model, ModelSpec};
pub use optim::{AdamConfig, AdamState};
pub use tensor::{DenseTensor, Matrix, Shape};
pub use train::{train, TrainConfig, TrainLog};
