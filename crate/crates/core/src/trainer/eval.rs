//! Error metric, evaluation reports and invariance audits.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cloudgen::{rotate_cloud, Dataset, VectorCloud};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trainer::TrainedModel;

/// `sqrt(sum (pred - truth)^2) / sqrt(sum truth^2)`, as a fraction.
pub fn error_metric(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::dim("prediction count", truth.len(), pred.len()));
    }
    let den: f64 = truth.iter().map(|t| t * t).sum();
    if den == 0.0 {
        return Err(Error::UndefinedMetric("all truth labels are zero"));
    }
    let num: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((num / den).sqrt())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub error_pct: f64,
    pub predictions: Vec<f64>,
    pub labels: Vec<f64>,
    pub abs_errors: Vec<f64>,
}

impl EvalReport {
    pub fn from_predictions(predictions: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        let error_pct = 100.0 * error_metric(&predictions, &labels)?;
        let abs_errors = predictions.iter().zip(&labels).map(|(p, t)| (p - t).abs()).collect();
        Ok(Self {
            error_pct,
            predictions,
            labels,
            abs_errors,
        })
    }
}

pub fn evaluate<T: Scalar>(model: &TrainedModel<T>, dataset: &Dataset) -> Result<EvalReport> {
    let clouds: Vec<&Array2<f64>> = dataset.samples.iter().map(|s| &s.q).collect();
    let predictions = model.predict_many(&clouds)?;
    EvalReport::from_predictions(predictions, dataset.labels())
}

/// Frame or ordering change applied to every cloud of a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    /// Frame rotation by this angle in radians.
    Rotation(f64),
    /// Frame translation.
    Translation([f64; 2]),
    /// Random row order drawn from this seed.
    Permutation(u64),
}

impl Transform {
    pub fn describe(&self) -> String {
        match self {
            Transform::Rotation(b) => format!("rotation:{:.6}deg", b.to_degrees()),
            Transform::Translation([x, y]) => format!("translation:{x},{y}"),
            Transform::Permutation(seed) => format!("permutation:{seed}"),
        }
    }

    /// Parses `rot:<deg>`, `trans:<dx>,<dy>` or `perm:<seed>`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad transform `{s}`; use rot:<deg>, trans:<dx>,<dy> or perm:<seed>"));
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "rot" | "rotation" => Ok(Transform::Rotation(arg.parse::<f64>().map_err(|_| bad())?.to_radians())),
            "trans" | "translation" => {
                let (x, y) = arg.split_once(',').ok_or_else(bad)?;
                Ok(Transform::Translation([
                    x.trim().parse().map_err(|_| bad())?,
                    y.trim().parse().map_err(|_| bad())?,
                ]))
            }
            "perm" | "permutation" => Ok(Transform::Permutation(arg.parse().map_err(|_| bad())?)),
            _ => Err(bad()),
        }
    }

    /// The feature matrix the transformed frame produces for `sample`.
    ///
    /// Rotations turn the position and velocity blocks by `-beta`.
    /// Translations shift the absolute point positions and the centre alike
    /// and re-form the relative positions. Permutations reorder rows.
    pub fn apply(&self, sample: &VectorCloud, index: usize) -> Array2<f64> {
        match *self {
            Transform::Rotation(beta) => rotate_cloud(&sample.q, beta),
            Transform::Translation(t) => {
                let mut q = sample.q.clone();
                let c = [sample.center[0] + t[0], sample.center[1] + t[1]];
                for mut row in q.rows_mut() {
                    row[0] = (sample.center[0] + row[0] + t[0]) - c[0];
                    row[1] = (sample.center[1] + row[1] + t[1]) - c[1];
                }
                q
            }
            Transform::Permutation(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
                let mut order: Vec<usize> = (0..sample.q.nrows()).collect();
                order.shuffle(&mut rng);
                sample.q.select(ndarray::Axis(0), &order)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AuditRow {
    pub transform: String,
    pub max_deviation: f64,
}

/// For each transform, `max_i |f(T Q_i) - f(Q_i)| / (|f(Q_i)| + 1e-12)`.
pub fn invariance_audit<T: Scalar>(
    model: &TrainedModel<T>,
    dataset: &Dataset,
    transforms: &[Transform],
) -> Result<Vec<AuditRow>> {
    let base: Vec<f64> = dataset
        .samples
        .par_iter()
        .map(|s| model.predict(&s.q))
        .collect::<Result<_>>()?;
    transforms
        .iter()
        .map(|t| {
            let dev = dataset
                .samples
                .par_iter()
                .enumerate()
                .map(|(i, s)| {
                    let moved = model.predict(&t.apply(s, i))?;
                    Ok((moved - base[i]).abs() / (base[i].abs() + 1e-12))
                })
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            Ok(AuditRow {
                transform: t.describe(),
                max_deviation: dev,
            })
        })
        .collect()
}

pub fn audit_csv(rows: &[AuditRow]) -> String {
    let mut out = String::from("transform,max_deviation\n");
    for r in rows {
        out.push_str(&format!("{},{:e}\n", r.transform, r.max_deviation));
    }
    out
}
