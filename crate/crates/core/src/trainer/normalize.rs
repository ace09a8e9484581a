//! Feature and label scaling fitted on a training set.

use ndarray::{s, Array2};

use crate::cloudgen::{Dataset, N_FEATURES};
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-12;

/// Per-column shift and scale of the cloud features.
///
/// The position block (columns 0-1) and the velocity block (columns 2-3) are
/// divided by the root mean square of their magnitudes and never shifted, so
/// normalisation commutes with frame rotations. Scalar columns are
/// standardised.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Normalizer {
    pub mean: [f64; N_FEATURES],
    pub scale: [f64; N_FEATURES],
}

impl Normalizer {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; N_FEATURES],
            scale: [1.0; N_FEATURES],
        }
    }

    pub fn apply(&self, q: &Array2<f64>) -> Array2<f64> {
        let mut out = q.clone();
        for mut row in out.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[k]) / self.scale[k];
            }
        }
        out
    }

    pub fn apply_dataset(&self, dataset: &Dataset) -> Dataset {
        let mut out = dataset.clone();
        for s in &mut out.samples {
            s.q = self.apply(&s.q);
        }
        out
    }

    /// Flat `mean | scale` for checkpoint extras.
    pub fn to_vec(&self) -> Vec<f64> {
        self.mean.iter().chain(&self.scale).copied().collect()
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 2 * N_FEATURES {
            return Err(Error::dim("normalizer entries", 2 * N_FEATURES, v.len()));
        }
        let mut n = Self::identity();
        n.mean.copy_from_slice(&v[..N_FEATURES]);
        n.scale.copy_from_slice(&v[N_FEATURES..]);
        Ok(n)
    }
}

fn floored(std: f64, what: &str) -> f64 {
    if std < STD_FLOOR {
        log::warn!("{what} is constant over the training set; using scale {STD_FLOOR:e}");
        STD_FLOOR
    } else {
        std
    }
}

pub fn fit_normalizer(dataset: &Dataset) -> Result<Normalizer> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot fit a normalizer on an empty dataset".into()));
    }
    let rows: usize = dataset.samples.iter().map(|s| s.q.nrows()).sum();
    let count = rows as f64;
    let mut norm = Normalizer::identity();
    for (block, name) in [(0usize, "position block"), (2, "velocity block")] {
        let ss: f64 = dataset
            .samples
            .iter()
            .map(|s| s.q.slice(s![.., block..block + 2]).iter().map(|v| v * v).sum::<f64>())
            .sum();
        let rms = floored((ss / count).sqrt(), name);
        norm.scale[block] = rms;
        norm.scale[block + 1] = rms;
    }
    for k in 4..N_FEATURES {
        let mean = dataset.samples.iter().map(|s| s.q.column(k).sum()).sum::<f64>() / count;
        let var = dataset
            .samples
            .iter()
            .map(|s| s.q.column(k).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
            .sum::<f64>()
            / count;
        norm.mean[k] = mean;
        norm.scale[k] = floored(var.sqrt(), &format!("feature column {k}"));
    }
    Ok(norm)
}

/// Standardisation of the scalar target.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LabelScale {
    pub mean: f64,
    pub std: f64,
}

impl LabelScale {
    pub fn fit(labels: &[f64]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("no labels to standardise".into()));
        }
        let n = labels.len() as f64;
        let mean = labels.iter().sum::<f64>() / n;
        let var = labels.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: floored(var.sqrt(), "label"),
        })
    }

    pub fn forward(&self, tau: f64) -> f64 {
        (tau - self.mean) / self.std
    }

    pub fn inverse(&self, z: f64) -> f64 {
        self.mean + self.std * z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloudgen::rotate_cloud;
    use crate::trainer::fixtures::random_dataset;

    #[test]
    fn normalised_data_is_a_fixed_point() {
        let ds = random_dataset(20, 7, 1);
        let once = fit_normalizer(&ds).unwrap().apply_dataset(&ds);
        let again = fit_normalizer(&once).unwrap();
        for k in 0..N_FEATURES {
            assert!(again.mean[k].abs() < 1e-12, "mean {k}");
            assert!((again.scale[k] - 1.0).abs() < 1e-12, "scale {k}");
        }
        let twice = again.apply_dataset(&once);
        for (a, b) in once.samples.iter().zip(&twice.samples) {
            assert!(a.q.iter().zip(&b.q).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn rotation_commutes_with_normalisation() {
        let ds = random_dataset(10, 5, 2);
        let norm = fit_normalizer(&ds).unwrap();
        let rotated = ds.rotated(0.7);
        let norm_rot = fit_normalizer(&rotated).unwrap();
        for k in 0..N_FEATURES {
            assert!((norm.scale[k] - norm_rot.scale[k]).abs() < 1e-12 * norm.scale[k]);
        }
        for s in &ds.samples {
            let a = rotate_cloud(&norm.apply(&s.q), 0.7);
            let b = norm.apply(&rotate_cloud(&s.q, 0.7));
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn labels_untouched_and_constant_column_floored() {
        let mut ds = random_dataset(5, 4, 3);
        for s in &mut ds.samples {
            s.q.column_mut(6).fill(2.5);
        }
        let norm = fit_normalizer(&ds).unwrap();
        assert_eq!(norm.scale[6], STD_FLOOR);
        let out = norm.apply_dataset(&ds);
        assert_eq!(out.labels(), ds.labels());
        assert!(out.samples[0].q.column(6).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn label_scale_round_trip() {
        let ls = LabelScale::fit(&[1.0, 3.0]).unwrap();
        assert_eq!((ls.mean, ls.std), (2.0, 1.0));
        assert_eq!(ls.inverse(ls.forward(7.5)), 7.5);
        assert!(LabelScale::fit(&[]).is_err());
        assert!(fit_normalizer(&Dataset {
            samples: vec![],
            meta: random_dataset(1, 1, 0).meta
        })
        .is_err());
    }
}
