//! Mini-batch Adam on mean squared error of standardised labels.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cloudgen::Dataset;
use crate::error::{Error, Result};
use crate::gkn::{edge_payload_bytes, PreparedCloud};
use crate::numnet::{AdamConfig, AdamState};
use crate::scalar::Scalar;
use crate::trainer::{error_metric, fit_normalizer, Grads, Input, LabelScale, ModelKind, Network, Normalizer, TrainedModel};

/// Samples per gradient partial sum. Partial sums are combined in a fixed
/// order, so results do not depend on the number of worker threads.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning rate halves every this many epochs; 0 keeps it constant.
    pub lr_halving_epochs: usize,
    pub seed: u64,
    pub kind: ModelKind,
    /// Stop once the epoch's training loss falls below this; 0 disables.
    pub early_stop_loss: f64,
    /// Evaluate batches on the calling thread only.
    pub deterministic: bool,
    /// Upper bound for GKN edge blocks kept across epochs. Larger training
    /// sets rebuild edges on every pass.
    pub edge_cache_bytes: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            lr: 1e-3,
            lr_halving_epochs: 80,
            seed: 0,
            kind: ModelKind::GknRi,
            early_stop_loss: 0.0,
            deterministic: false,
            edge_cache_bytes: 1 << 30,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate {} is not positive", self.lr)));
        }
        if !(self.early_stop_loss >= 0.0) {
            return Err(Error::InvalidArgument("early_stop_loss must be non-negative".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_halving_epochs {
            0 => self.lr,
            h => self.lr * 0.5f64.powi((epoch / h) as i32),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean squared error on standardised labels, accumulated over the
    /// epoch's batches before each update.
    pub train_loss: f64,
    pub train_error_pct: f64,
    pub wall_seconds: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,train_error_pct,wall_seconds\n");
    for r in history {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.train_error_pct, r.wall_seconds));
    }
    out
}

/// Normalised inputs and standardised targets in the network's scalar type.
pub struct TrainingSet<T> {
    clouds: Vec<Array2<T>>,
    prepared: Vec<PreparedCloud<T>>,
    targets: Vec<T>,
    labels: Vec<f64>,
    label_scale: LabelScale,
}

impl<T: Scalar> TrainingSet<T> {
    /// GKN edge blocks are built once when they fit in `edge_cache_bytes`.
    pub fn new(
        network: &Network<T>,
        dataset: &Dataset,
        normalizer: &Normalizer,
        label_scale: LabelScale,
        edge_cache_bytes: u64,
    ) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let clouds: Vec<Array2<T>> = dataset
            .samples
            .par_iter()
            .map(|s| normalizer.apply(&s.q).mapv(T::of))
            .collect();
        let labels = dataset.labels();
        let targets = labels.iter().map(|&t| T::of(label_scale.forward(t))).collect();
        let mut set = Self {
            clouds,
            prepared: Vec::new(),
            targets,
            labels,
            label_scale,
        };
        if let Network::Gkn { config, .. } = network {
            let bytes = edge_payload_bytes(dataset.len(), dataset.meta.stencil, config.edge_mode.dim());
            if bytes <= edge_cache_bytes {
                set.prepared = set
                    .clouds
                    .par_iter()
                    .map(|q| network.prepare(q.view()).map(|p| p.expect("gkn network")))
                    .collect::<Result<_>>()?;
                set.clouds = Vec::new();
            } else {
                log::info!("edge blocks need {bytes} bytes; rebuilding them every epoch");
            }
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn label_scale(&self) -> LabelScale {
        self.label_scale
    }

    fn input(&self, i: usize) -> Input<'_, T> {
        if self.prepared.is_empty() {
            Input::Cloud(self.clouds[i].view())
        } else {
            Input::Prepared(&self.prepared[i])
        }
    }
}

/// Summed gradient of `(1/B) sum (pred - target)^2` over `batch`, plus the
/// predictions.
fn batch_gradient<T: Scalar>(
    network: &Network<T>,
    data: &TrainingSet<T>,
    batch: &[usize],
    deterministic: bool,
) -> Result<(Grads<T>, Vec<T>)> {
    let two_over_b = T::of(2.0 / batch.len() as f64);
    let chunk = |idx: &[usize]| -> Result<(Grads<T>, Vec<T>)> {
        let mut g = network.zero_grads();
        let mut preds = Vec::with_capacity(idx.len());
        for &i in idx {
            let target = data.targets[i];
            preds.push(network.accumulate_grads(data.input(i), |p| two_over_b * (p - target), &mut g)?);
        }
        Ok((g, preds))
    };
    let partials: Vec<Result<(Grads<T>, Vec<T>)>> = if deterministic {
        batch.chunks(CHUNK).map(chunk).collect()
    } else {
        batch.par_chunks(CHUNK).map(chunk).collect()
    };
    let mut total: Option<Grads<T>> = None;
    let mut preds = Vec::with_capacity(batch.len());
    for part in partials {
        let (g, p) = part?;
        match &mut total {
            None => total = Some(g),
            Some(t) => t.add_assign(&g),
        }
        preds.extend(p);
    }
    Ok((total.expect("non-empty batch"), preds))
}

fn is_numerical(e: &Error) -> bool {
    matches!(e, Error::NonFinite(_) | Error::NonFiniteGradient { .. })
}

/// Trains `network` in place. On divergence the parameters are restored to
/// the end of the last finite epoch and [`Error::Diverged`] is returned.
pub fn train<T: Scalar>(network: &mut Network<T>, data: &TrainingSet<T>, config: &TrainConfig) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut adam = AdamState::new(
        network,
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let start = Instant::now();
    let ls = data.label_scale;

    for epoch in 0..config.epochs {
        adam.set_lr(config.lr_at(epoch));
        let last_good = network.clone();
        order.shuffle(&mut rng);
        let mut preds = vec![0.0f64; data.len()];
        let mut sq_sum = 0.0f64;
        let mut diverged = false;
        for batch in order.chunks(config.batch_size) {
            let (grads, p) = match batch_gradient(network, data, batch, config.deterministic) {
                Ok(v) => v,
                Err(e) if is_numerical(&e) => {
                    log::warn!("epoch {epoch}: {e}");
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            for (&i, &pi) in batch.iter().zip(&p) {
                let r = (pi - data.targets[i]).to_f64_lossy();
                sq_sum += r * r;
                preds[i] = ls.inverse(pi.to_f64_lossy());
            }
            match adam.step(network, &grads) {
                Ok(()) => {}
                Err(e) if is_numerical(&e) => {
                    log::warn!("epoch {epoch}: {e}");
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let train_loss = sq_sum / data.len() as f64;
        if diverged || !train_loss.is_finite() {
            *network = last_good;
            return Err(Error::Diverged { epoch });
        }
        let train_error_pct = 100.0 * error_metric(&preds, &data.labels).unwrap_or(f64::NAN);
        let record = EpochRecord {
            epoch,
            train_loss,
            train_error_pct,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {train_loss:.6e}, train error {train_error_pct:.3}%, lr {:.2e}",
            config.lr_at(epoch)
        );
        history.push(record);
        if train_loss < config.early_stop_loss {
            break;
        }
    }
    Ok(history)
}

/// Fits the scalings on `dataset`, then trains.
pub fn fit<T: Scalar>(
    mut network: Network<T>,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(TrainedModel<T>, Vec<EpochRecord>)> {
    let normalizer = fit_normalizer(dataset)?;
    let labels = LabelScale::fit(&dataset.labels())?;
    let data = TrainingSet::new(&network, dataset, &normalizer, labels, config.edge_cache_bytes)?;
    let history = train(&mut network, &data, config)?;
    Ok((
        TrainedModel {
            network,
            normalizer,
            labels,
        },
        history,
    ))
}
