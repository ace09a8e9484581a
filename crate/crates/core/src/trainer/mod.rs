//! Normalisation, training, evaluation and invariance audits.

mod eval;
mod model;
mod normalize;
mod train;

pub use eval::{audit_csv, error_metric, evaluate, invariance_audit, AuditRow, EvalReport, Transform};
pub use model::{Grads, Input, ModelKind, Network, TrainedModel};
pub use normalize::{fit_normalizer, LabelScale, Normalizer, STD_FLOOR};
pub use train::{fit, history_csv, train, EpochRecord, TrainConfig, TrainingSet};

#[cfg(test)]
pub(crate) mod fixtures {
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::cloudgen::{Dataset, DatasetMeta, RegionOfInfluence, VectorCloud, N_FEATURES};

    /// Random clouds with column-dependent offsets and spreads.
    pub(crate) fn random_dataset(samples: usize, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..samples)
            .map(|_| VectorCloud {
                q: Array2::from_shape_fn((n, N_FEATURES), |(_, k)| {
                    rng.random_range(-1.0..1.0) * (k as f64 + 1.0) + k as f64
                }),
                tau: rng.random_range(0.0..2.0),
                center: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                ellipse: RegionOfInfluence {
                    l1: 1.0,
                    l2: 1.0,
                    axis: [1.0, 0.0],
                    center: [0.0, 0.0],
                },
                source: 0,
                cell: (0, 0),
            })
            .collect();
        Dataset {
            samples,
            meta: DatasetMeta {
                stencil: n,
                eps: 0.01,
                nu: 0.02,
                zeta: 1.0,
                seed,
                fields: vec![],
            },
        }
    }
}
