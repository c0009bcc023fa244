//! Regression and classification scores.
//!
//! Acc-2 treats a zero prediction as positive and drops zero truths from the
//! denominator. Acc-7 rounds half away from zero, then clamps to [-3, 3].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::{Dataset, Label, LabelKind};
use crate::error::{Error, Result};
use crate::model::Model;

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    if pred.is_empty() {
        return Err(Error::shape("mae of empty vectors"));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Sample correlation; `None` when either side has zero variance.
pub fn pearson_corr(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    check_lengths(pred, truth)?;
    if pred.len() < 2 {
        return Err(Error::invalid("correlation needs at least two points"));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

/// Sign agreement; `None` when every truth is zero.
pub fn acc2(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    check_lengths(pred, truth)?;
    let mut total = 0usize;
    let mut hits = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if *t == 0.0 {
            continue;
        }
        total += 1;
        if (*p >= 0.0) == (*t > 0.0) {
            hits += 1;
        }
    }
    Ok((total > 0).then(|| hits as f64 / total as f64))
}

/// Seven-way bin in {-3..3}.
pub fn sentiment_bin(x: f64) -> i32 {
    // f64::round already rounds half away from zero
    x.round().clamp(-3.0, 3.0) as i32
}

pub fn acc7(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    if pred.is_empty() {
        return Err(Error::shape("acc7 of empty vectors"));
    }
    let hits = pred
        .iter()
        .zip(truth)
        .filter(|(p, t)| sentiment_bin(**p) == sentiment_bin(**t))
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::shape(format!("{} predictions for {} targets", pred.len(), truth.len())));
    }
    Ok(pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64)
}

/// F1 of one class against the rest; 0 when precision + recall is 0.
pub fn f1(pred: &[usize], truth: &[usize], positive: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!("{} predictions for {} targets", pred.len(), truth.len())));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == positive, t == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub count: usize,
    /// Regression: absolute error of values. Classification: of class indices.
    pub mae: f64,
    pub pearson_corr: Option<f64>,
    pub acc2: Option<f64>,
    pub acc7: Option<f64>,
    /// Classification accuracy over all classes.
    pub acc_k: Option<f64>,
    /// Regression reports negative (0) and positive (1) sign classes.
    pub f1_per_class: BTreeMap<usize, f64>,
}

const UNDEFINED: &str = "NA";

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| UNDEFINED.to_string(), |v| v.to_string())
}

impl MetricReport {
    pub fn regression(pred: &[f64], truth: &[f64]) -> Result<Self> {
        let signs = |xs: &[f64]| -> Vec<usize> { xs.iter().map(|&x| usize::from(x >= 0.0)).collect() };
        let nonzero: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] != 0.0).collect();
        let p: Vec<f64> = nonzero.iter().map(|&i| pred[i]).collect();
        let t: Vec<f64> = nonzero.iter().map(|&i| truth[i]).collect();
        let (ps, ts) = (signs(&p), signs(&t));
        let mut f1_per_class = BTreeMap::new();
        if !t.is_empty() {
            for c in 0..2 {
                f1_per_class.insert(c, f1(&ps, &ts, c)?);
            }
        }
        Ok(MetricReport {
            count: pred.len(),
            mae: mae(pred, truth)?,
            pearson_corr: if pred.len() >= 2 { pearson_corr(pred, truth)? } else { None },
            acc2: acc2(pred, truth)?,
            acc7: Some(acc7(pred, truth)?),
            acc_k: None,
            f1_per_class,
        })
    }

    pub fn classification(pred: &[usize], truth: &[usize], classes: usize) -> Result<Self> {
        let pf: Vec<f64> = pred.iter().map(|&c| c as f64).collect();
        let tf: Vec<f64> = truth.iter().map(|&c| c as f64).collect();
        let mut f1_per_class = BTreeMap::new();
        for c in 0..classes {
            f1_per_class.insert(c, f1(pred, truth, c)?);
        }
        Ok(MetricReport {
            count: pred.len(),
            mae: mae(&pf, &tf)?,
            pearson_corr: if pred.len() >= 2 { pearson_corr(&pf, &tf)? } else { None },
            acc2: None,
            acc7: None,
            acc_k: Some(accuracy(pred, truth)?),
            f1_per_class,
        })
    }

    /// Two-column `metric,value` table; undefined values are written as `NA`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let _ = writeln!(out, "count,{}", self.count);
        let _ = writeln!(out, "mae,{}", self.mae);
        let _ = writeln!(out, "pearson_corr,{}", fmt_opt(self.pearson_corr));
        let _ = writeln!(out, "acc2,{}", fmt_opt(self.acc2));
        let _ = writeln!(out, "acc7,{}", fmt_opt(self.acc7));
        let _ = writeln!(out, "acc_k,{}", fmt_opt(self.acc_k));
        for (c, v) in &self.f1_per_class {
            let _ = writeln!(out, "f1_class_{c},{v}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = BTreeMap::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            let (k, v) = line
                .split_once(',')
                .ok_or_else(|| Error::data(format!("metrics line {}: expected metric,value", n + 1)))?;
            rows.insert(k.to_string(), v.to_string());
        }
        let num = |k: &str| -> Result<Option<f64>> {
            match rows.get(k).map(String::as_str) {
                None => Err(Error::data(format!("metrics table has no {k} row"))),
                Some(UNDEFINED) => Ok(None),
                Some(v) => v
                    .parse()
                    .map(Some)
                    .map_err(|_| Error::data(format!("metrics row {k}: bad number {v:?}"))),
            }
        };
        let mut f1_per_class = BTreeMap::new();
        for (k, v) in &rows {
            if let Some(c) = k.strip_prefix("f1_class_") {
                let c = c.parse().map_err(|_| Error::data(format!("bad class in {k}")))?;
                let v = v.parse().map_err(|_| Error::data(format!("metrics row {k}: bad number {v:?}")))?;
                f1_per_class.insert(c, v);
            }
        }
        Ok(MetricReport {
            count: num("count")?.unwrap_or(0.0) as usize,
            mae: num("mae")?.ok_or_else(|| Error::data("mae cannot be undefined"))?,
            pearson_corr: num("pearson_corr")?,
            acc2: num("acc2")?,
            acc7: num("acc7")?,
            acc_k: num("acc_k")?,
            f1_per_class,
        })
    }
}

/// Raw model outputs for every sample, in dataset order.
pub fn predict_all(model: &Model, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    data.samples
        .par_iter()
        .map(|s| model.predict(&s.modalities))
        .collect()
}

pub fn evaluate(model: &Model, data: &Dataset) -> Result<MetricReport> {
    if data.is_empty() {
        return Err(Error::data("cannot evaluate on an empty split"));
    }
    let outputs = predict_all(model, data)?;
    match data.manifest.label_kind {
        LabelKind::Regression => {
            let pred: Vec<f64> = outputs.iter().map(|o| o[0]).collect();
            let truth: Vec<f64> = data.samples.iter().map(|s| s.label.as_f64()).collect();
            MetricReport::regression(&pred, &truth)
        }
        LabelKind::Classification => {
            let pred: Vec<usize> = outputs.iter().map(|o| argmax(o)).collect();
            let truth: Vec<usize> = data
                .samples
                .iter()
                .map(|s| match s.label {
                    Label::Class(c) => c,
                    Label::Value(v) => v as usize,
                })
                .collect();
            MetricReport::classification(&pred, &truth, data.manifest.class_count)
        }
    }
}
