//! Encoders, one fusion layer, and a linear head assembled into a trainable model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Differentiable, Gradients, Parameter, Parameterized, Tape, Var};
use crate::data::{DatasetManifest, Features, Label, ModalityKind, Sample};
use crate::encoders::{Encoder, EncoderKind, Linear, LstmEncoder, MeanPoolEncoder, MlpEncoder};
use crate::error::{Error, Result};
use crate::fusion::{ConcatFusion, Fusion, FusionKind, FusionLayer, LmfLayer, MrrfLayer, TensorFusion};
use crate::tensor::DenseTensor;

fn default_fusion_dim() -> usize {
    8
}

fn default_mlp_hidden() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    /// Hidden width of the MLP; ignored by the other kinds.
    #[serde(default = "default_mlp_hidden")]
    pub hidden: usize,
    /// Embedding size `d_m` handed to fusion (before padding).
    pub out: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub fusion: FusionKind,
    /// Fusion output size `h`.
    #[serde(default = "default_fusion_dim")]
    pub fusion_dim: usize,
    /// MRRF ranks per modality; missing means full rank (`d_m + 1`).
    #[serde(default)]
    pub ranks: Option<Vec<usize>>,
    /// LMF shared rank.
    #[serde(default)]
    pub lmf_rank: Option<usize>,
    pub encoders: Vec<EncoderSpec>,
}

impl ModelSpec {
    /// `d_m + 1` for every modality.
    pub fn padded_dims(&self) -> Vec<usize> {
        self.encoders.iter().map(|e| e.out + 1).collect()
    }

    /// Effective MRRF ranks after defaulting and clamping.
    pub fn mrrf_ranks(&self) -> Result<Vec<usize>> {
        let padded = self.padded_dims();
        match &self.ranks {
            None => Ok(padded),
            Some(r) => crate::fusion::clamp_ranks(&padded, r),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoders.is_empty() {
            return Err(Error::Config("model needs at least one encoder".into()));
        }
        if self.fusion_dim == 0 {
            return Err(Error::Config("fusion_dim must be positive".into()));
        }
        for (m, e) in self.encoders.iter().enumerate() {
            if e.out == 0 || (e.kind == EncoderKind::Mlp && e.hidden == 0) {
                return Err(Error::Config(format!("encoder {m} has a zero-sized layer")));
            }
        }
        if self.fusion == FusionKind::Mrrf {
            self.mrrf_ranks()?;
        }
        if self.lmf_rank == Some(0) {
            return Err(Error::Config("lmf_rank must be positive".into()));
        }
        Ok(())
    }
}

/// Training / checking objective on one prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// `|p − y|`, subgradient 0 at equality.
    L1,
    /// `½ (p − y)²`.
    Squared,
    /// Softmax cross-entropy on logits.
    CrossEntropy,
}

impl Objective {
    pub fn value_and_grad(&self, pred: &[f64], label: &Label) -> Result<(f64, Vec<f64>)> {
        match (self, label) {
            (Objective::L1 | Objective::Squared, Label::Value(y)) => {
                if pred.len() != 1 {
                    return Err(Error::shape(format!("regression expects one output, got {}", pred.len())));
                }
                let d = pred[0] - y;
                Ok(if *self == Objective::L1 {
                    (d.abs(), vec![if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 }])
                } else {
                    (0.5 * d * d, vec![d])
                })
            }
            (Objective::CrossEntropy, Label::Class(c)) => {
                if *c >= pred.len() {
                    return Err(Error::shape(format!("class {c} out of range for {} logits", pred.len())));
                }
                let max = pred.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = pred.iter().map(|p| (p - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                let loss = z.ln() + max - pred[*c];
                let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
                grad[*c] -= 1.0;
                Ok((loss, grad))
            }
            _ => Err(Error::invalid(format!("{self:?} objective cannot score label {label:?}"))),
        }
    }

    /// L1 for regression labels, cross-entropy for class labels.
    pub fn training_default(label: &Label) -> Self {
        match label {
            Label::Value(_) => Objective::L1,
            Label::Class(_) => Objective::CrossEntropy,
        }
    }

    /// Smooth variant used for gradient checking.
    pub fn smooth_default(label: &Label) -> Self {
        match label {
            Label::Value(_) => Objective::Squared,
            Label::Class(_) => Objective::CrossEntropy,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    modality_names: Vec<String>,
    encoders: Vec<Encoder>,
    fusion: FusionLayer,
    head: Linear,
}

impl Model {
    /// Builds a freshly initialized model for data described by `manifest`.
    pub fn build(spec: &ModelSpec, manifest: &DatasetManifest, seed: u64) -> Result<Self> {
        spec.validate()?;
        if spec.encoders.len() != manifest.modalities.len() {
            return Err(Error::Config(format!(
                "{} encoders configured for {} modalities",
                spec.encoders.len(),
                manifest.modalities.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x6d6f64656c);
        let mut encoders = Vec::with_capacity(spec.encoders.len());
        for (m, (e, modality)) in spec.encoders.iter().zip(&manifest.modalities).enumerate() {
            let prefix = format!("enc{m}.");
            let width = modality.width;
            let enc = match (e.kind, modality.kind) {
                (EncoderKind::Mlp, ModalityKind::Vector) => Encoder::Mlp(MlpEncoder::new(width, e.hidden, e.out, &prefix, &mut rng)?),
                (EncoderKind::Lstm, ModalityKind::Sequence) => Encoder::Lstm(LstmEncoder::new(width, e.out, &prefix, &mut rng)?),
                (EncoderKind::Meanpool, _) => Encoder::MeanPool(MeanPoolEncoder::new(width, e.out, &prefix, &mut rng)?),
                (kind, mk) => {
                    return Err(Error::Config(format!(
                        "{kind} encoder cannot read {mk} modality {}",
                        modality.name
                    )))
                }
            };
            encoders.push(enc);
        }
        let padded = spec.padded_dims();
        let h = spec.fusion_dim;
        let prefix = "fusion.";
        let fusion = match spec.fusion {
            FusionKind::Cf => FusionLayer::Concat(ConcatFusion::new(&padded, h, prefix, &mut rng)?),
            FusionKind::Tf => FusionLayer::Tensor(TensorFusion::new(&padded, h, prefix, &mut rng)?),
            FusionKind::Lmf => FusionLayer::LowRank(LmfLayer::new(&padded, spec.lmf_rank.unwrap_or(4), h, prefix, &mut rng)?),
            FusionKind::Mrrf => FusionLayer::Mrrf(MrrfLayer::new(&padded, &spec.mrrf_ranks()?, h, prefix, &mut rng)?),
        };
        let head = Linear::new(h, manifest.output_dim(), "head.", &mut rng)?;
        Ok(Model {
            spec: spec.clone(),
            modality_names: manifest.names(),
            encoders,
            fusion,
            head,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn encoders(&self) -> &[Encoder] {
        &self.encoders
    }

    pub fn fusion(&self) -> &FusionLayer {
        &self.fusion
    }

    pub fn fusion_mut(&mut self) -> &mut FusionLayer {
        &mut self.fusion
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Linear {
        &mut self.head
    }

    pub fn output_dim(&self) -> usize {
        self.head.output_dim()
    }

    /// True when any encoder is recurrent.
    pub fn is_recurrent(&self) -> bool {
        self.encoders.iter().any(|e| matches!(e, Encoder::Lstm(_)))
    }

    fn check_modalities(&self, modalities: &[Features]) -> Result<()> {
        if modalities.len() < self.encoders.len() {
            return Err(Error::data(format!(
                "sample is missing modality {}",
                self.modality_names
                    .get(modalities.len())
                    .map(String::as_str)
                    .unwrap_or("?")
            )));
        }
        Ok(())
    }

    /// Padded embeddings, one per modality.
    pub fn embed(&self, modalities: &[Features]) -> Result<Vec<Vec<f64>>> {
        self.check_modalities(modalities)?;
        self.encoders
            .iter()
            .zip(modalities)
            .map(|(e, f)| Ok(crate::tensor::pad_one(&e.forward(f)?).into_data()))
            .collect()
    }

    /// Prediction vector: regression value or class logits.
    pub fn predict(&self, modalities: &[Features]) -> Result<Vec<f64>> {
        let padded = self.embed(modalities)?;
        let refs: Vec<&[f64]> = padded.iter().map(Vec::as_slice).collect();
        let h = self.fusion.forward(&refs)?;
        self.head.forward(&h)
    }

    pub fn forward_tape(&self, tape: &mut Tape, modalities: &[Features]) -> Result<Var> {
        self.check_modalities(modalities)?;
        let mut padded = Vec::with_capacity(self.encoders.len());
        for (e, f) in self.encoders.iter().zip(modalities) {
            let z = e.forward_tape(tape, f)?;
            padded.push(tape.pad_one(z)?);
        }
        let h = self.fusion.forward_tape(tape, &padded)?;
        self.head.forward_tape(tape, h)
    }

    /// Loss on one sample and its parameter gradients, with the seed scaled by `weight`.
    pub fn loss_and_gradients(
        &self,
        sample: &Sample,
        objective: Objective,
        weight: f64,
        fault: Option<&str>,
    ) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new();
        tape.corrupt_adjoint(fault)?;
        let out = self.forward_tape(&mut tape, &sample.modalities)?;
        let (loss, grad) = objective.value_and_grad(tape.value(out).data(), &sample.label)?;
        let mut seed = DenseTensor::vector(grad)?;
        seed.scale(weight);
        Ok((loss, tape.backward(out, &seed)?))
    }

    /// Copies values for every parameter name found in `values`; all names must be present.
    pub fn load_values<'a>(&mut self, values: impl IntoIterator<Item = (&'a str, &'a DenseTensor)>) -> Result<()> {
        let mut lookup: std::collections::HashMap<&str, &DenseTensor> = values.into_iter().collect();
        for p in self.parameters_mut() {
            let v = lookup
                .remove(p.name())
                .ok_or_else(|| Error::data(format!("checkpoint has no value for parameter {}", p.name())))?;
            p.set_value(v.clone())?;
        }
        if let Some(extra) = lookup.keys().next() {
            return Err(Error::data(format!("checkpoint parameter {extra} does not belong to this model")));
        }
        Ok(())
    }
}

impl Parameterized for Model {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut p: Vec<&Parameter> = self.encoders.iter().flat_map(|e| e.parameters()).collect();
        p.extend(self.fusion.parameters());
        p.extend(self.head.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p: Vec<&mut Parameter> = self.encoders.iter_mut().flat_map(|e| e.parameters_mut()).collect();
        p.extend(self.fusion.parameters_mut());
        p.extend(self.head.parameters_mut());
        p
    }
}

impl Differentiable for Model {
    type Input = Sample;

    fn loss(&self, sample: &Sample) -> Result<f64> {
        let pred = self.predict(&sample.modalities)?;
        Ok(Objective::smooth_default(&sample.label).value_and_grad(&pred, &sample.label)?.0)
    }

    fn loss_gradients(&self, sample: &Sample, fault: Option<&str>) -> Result<Gradients> {
        Ok(self
            .loss_and_gradients(sample, Objective::smooth_default(&sample.label), 1.0, fault)?
            .1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LabelKind, ModalitySpec};
    use crate::tensor::pad_one;
    use rand::Rng;

    pub(crate) fn manifest(kinds: &[ModalityKind], widths: &[usize], label: LabelKind) -> DatasetManifest {
        DatasetManifest {
            format_version: crate::data::FORMAT_VERSION,
            label_kind: label,
            class_count: if label == LabelKind::Classification { 3 } else { 0 },
            sample_count: 0,
            modalities: kinds
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(m, (&kind, &width))| ModalitySpec {
                    name: format!("m{m}"),
                    kind,
                    width,
                })
                .collect(),
        }
    }

    fn spec(fusion: FusionKind, kind: EncoderKind) -> ModelSpec {
        ModelSpec {
            fusion,
            fusion_dim: 3,
            ranks: None,
            lmf_rank: Some(2),
            encoders: vec![EncoderSpec { kind, hidden: 4, out: 2 }; 3],
        }
    }

    fn sample(r: &mut impl Rng, kinds: &[ModalityKind], widths: &[usize]) -> Sample {
        Sample {
            id: "s".into(),
            group_id: "g".into(),
            modalities: kinds
                .iter()
                .zip(widths)
                .map(|(k, &w)| match k {
                    ModalityKind::Vector => Features::Vector((0..w).map(|_| r.random_range(-1.0..1.0)).collect()),
                    ModalityKind::Sequence => Features::Sequence(
                        (0..3).map(|_| (0..w).map(|_| r.random_range(-1.0..1.0)).collect()).collect(),
                    ),
                })
                .collect(),
            label: Label::Value(0.3),
        }
    }

    #[test]
    fn zero_fusion_gives_head_bias() {
        let kinds = [ModalityKind::Vector; 3];
        let m = manifest(&kinds, &[3, 4, 2], LabelKind::Regression);
        for fusion in FusionKind::ALL {
            let mut model = Model::build(&spec(fusion, EncoderKind::Mlp), &m, 1).unwrap();
            for p in model.fusion_mut().parameters_mut() {
                p.values_mut().fill(0.0);
            }
            model.head_mut().bias.values_mut()[0] = 0.75;
            let mut r = ChaCha8Rng::seed_from_u64(2);
            for _ in 0..3 {
                let s = sample(&mut r, &kinds, &[3, 4, 2]);
                assert_eq!(model.predict(&s.modalities).unwrap(), vec![0.75]);
            }
        }
    }

    #[test]
    fn cf_model_matches_hand_composition() {
        let kinds = [ModalityKind::Vector; 3];
        let m = manifest(&kinds, &[3, 4, 2], LabelKind::Regression);
        let model = Model::build(&spec(FusionKind::Cf, EncoderKind::Mlp), &m, 3).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let s = sample(&mut r, &kinds, &[3, 4, 2]);
        let mut concat = vec![];
        for (e, f) in model.encoders().iter().zip(&s.modalities) {
            let Encoder::Mlp(mlp) = e else { unreachable!() };
            let Features::Vector(x) = f else { unreachable!() };
            concat.extend(pad_one(&mlp.forward(x).unwrap()).into_data());
        }
        let FusionLayer::Concat(cf) = model.fusion() else { unreachable!() };
        let w = cf.weight().value();
        let h: Vec<f64> = (0..3)
            .map(|a| (0..concat.len()).map(|j| w.get(&[a, j]).unwrap() * concat[j]).sum())
            .collect();
        let head = model.head();
        let mut y = head.bias.value().data()[0];
        for (j, hj) in h.iter().enumerate() {
            y += head.weight.value().get(&[0, j]).unwrap() * hj;
        }
        let got = model.predict(&s.modalities).unwrap()[0];
        assert!((got - y).abs() < 1e-12);
    }

    #[test]
    fn mean_pool_model_ignores_step_order() {
        let kinds = [ModalityKind::Sequence; 3];
        let m = manifest(&kinds, &[3, 2, 2], LabelKind::Regression);
        let model = Model::build(&spec(FusionKind::Mrrf, EncoderKind::Meanpool), &m, 5).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let s = sample(&mut r, &kinds, &[3, 2, 2]);
        let mut shuffled = s.clone();
        for f in &mut shuffled.modalities {
            if let Features::Sequence(steps) = f {
                steps.reverse();
            }
        }
        let a = model.predict(&s.modalities).unwrap()[0];
        let b = model.predict(&shuffled.modalities).unwrap()[0];
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn missing_modality_is_named() {
        let kinds = [ModalityKind::Vector; 3];
        let m = manifest(&kinds, &[3, 4, 2], LabelKind::Regression);
        let model = Model::build(&spec(FusionKind::Tf, EncoderKind::Mlp), &m, 7).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let mut s = sample(&mut r, &kinds, &[3, 4, 2]);
        s.modalities.pop();
        let err = model.predict(&s.modalities).unwrap_err();
        assert!(matches!(&err, Error::Data(msg) if msg.contains("m2")), "{err}");
    }

    #[test]
    fn incompatible_encoder_is_config_error() {
        let kinds = [ModalityKind::Vector; 3];
        let m = manifest(&kinds, &[3, 4, 2], LabelKind::Regression);
        assert!(matches!(
            Model::build(&spec(FusionKind::Tf, EncoderKind::Lstm), &m, 7),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn full_rank_mrrf_equals_tf_from_reconstruction() {
        let kinds = [ModalityKind::Vector; 3];
        let m = manifest(&kinds, &[3, 4, 2], LabelKind::Regression);
        let mrrf = Model::build(&spec(FusionKind::Mrrf, EncoderKind::Mlp), &m, 9).unwrap();
        let mut tf = Model::build(&spec(FusionKind::Tf, EncoderKind::Mlp), &m, 9).unwrap();
        let FusionLayer::Mrrf(layer) = mrrf.fusion() else { unreachable!() };
        let dense = layer.reconstruct_dense().unwrap();
        // encoders and head are drawn before/after fusion from the same stream, so copy them explicitly
        let values: Vec<(String, DenseTensor)> = mrrf
            .parameters()
            .iter()
            .filter(|p| !p.name().starts_with("fusion."))
            .map(|p| (p.name().to_string(), p.value().clone()))
            .chain(std::iter::once(("fusion.weight".to_string(), dense)))
            .collect();
        tf.load_values(values.iter().map(|(n, v)| (n.as_str(), v))).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let s = sample(&mut r, &kinds, &[3, 4, 2]);
            let a = mrrf.predict(&s.modalities).unwrap()[0];
            let b = tf.predict(&s.modalities).unwrap()[0];
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn taped_and_direct_predictions_agree() {
        let kinds = [ModalityKind::Sequence; 3];
        let m = manifest(&kinds, &[3, 2, 2], LabelKind::Regression);
        let model = Model::build(&spec(FusionKind::Lmf, EncoderKind::Lstm), &m, 11).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(12);
        let s = sample(&mut r, &kinds, &[3, 2, 2]);
        let mut tape = Tape::new();
        let out = model.forward_tape(&mut tape, &s.modalities).unwrap();
        let direct = model.predict(&s.modalities).unwrap();
        assert!((tape.value(out).data()[0] - direct[0]).abs() < 1e-13);
    }

    #[test]
    fn objectives() {
        let (l, g) = Objective::L1.value_and_grad(&[2.0], &Label::Value(0.5)).unwrap();
        assert_eq!((l, g), (1.5, vec![1.0]));
        let (l, g) = Objective::Squared.value_and_grad(&[2.0], &Label::Value(0.5)).unwrap();
        assert_eq!((l, g), (1.125, vec![1.5]));
        let (l, g) = Objective::CrossEntropy.value_and_grad(&[0.0, 0.0], &Label::Class(1)).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert_eq!(g, vec![0.5, -0.5]);
        assert!(Objective::CrossEntropy.value_and_grad(&[0.0], &Label::Value(1.0)).is_err());
    }
}
