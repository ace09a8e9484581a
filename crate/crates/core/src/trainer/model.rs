//! Operator-agnostic model wrapper used by training and evaluation.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gkn::{self, EdgeMode, GknConfig, GknGrads, GknParams, PreparedCloud};
use crate::numnet::{Checkpoint, Parameters};
use crate::scalar::Scalar;
use crate::trainer::{LabelScale, Normalizer};
use crate::vcnn::{self, VcnnConfig, VcnnGrads, VcnnParams, VcnnVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    GknRi,
    GknRaw,
    Vcnn,
    VcnnSplit,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::GknRi, ModelKind::GknRaw, ModelKind::Vcnn, ModelKind::VcnnSplit];

    pub const fn tag(self) -> &'static str {
        match self {
            ModelKind::GknRi => "gkn_ri",
            ModelKind::GknRaw => "gkn_raw",
            ModelKind::Vcnn => "vcnn",
            ModelKind::VcnnSplit => "vcnn_split",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.tag() == tag)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model kind `{tag}`")))
    }

    pub fn is_gkn(self) -> bool {
        matches!(self, ModelKind::GknRi | ModelKind::GknRaw)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::from_tag(s)
    }
}

/// One of the two operators together with its architecture.
#[derive(Debug, Clone, PartialEq)]
pub enum Network<T> {
    Gkn { params: GknParams<T>, config: GknConfig },
    Vcnn { params: VcnnParams<T>, config: VcnnConfig },
}

/// Gradient set matching a [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub enum Grads<T> {
    Gkn(GknGrads<T>),
    Vcnn(VcnnGrads<T>),
}

/// Network input: a raw cloud, or a GKN cloud whose edge block is already
/// built.
pub enum Input<'a, T> {
    Cloud(ArrayView2<'a, T>),
    Prepared(&'a PreparedCloud<T>),
}

impl<T: Scalar> Network<T> {
    /// Reference architecture for `kind`.
    pub fn new<R: Rng + ?Sized>(kind: ModelKind, rng: &mut R) -> Result<Self> {
        match kind {
            ModelKind::GknRi => Self::gkn(GknConfig::rotation_invariant(), rng),
            ModelKind::GknRaw => Self::gkn(GknConfig::raw_concat(), rng),
            ModelKind::Vcnn => Self::vcnn(VcnnConfig::single_d(), rng),
            ModelKind::VcnnSplit => Self::vcnn(VcnnConfig::split_d(), rng),
        }
    }

    pub fn gkn<R: Rng + ?Sized>(config: GknConfig, rng: &mut R) -> Result<Self> {
        Ok(Network::Gkn {
            params: GknParams::new(&config, rng)?,
            config,
        })
    }

    pub fn vcnn<R: Rng + ?Sized>(config: VcnnConfig, rng: &mut R) -> Result<Self> {
        Ok(Network::Vcnn {
            params: VcnnParams::new(&config, rng)?,
            config,
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Network::Gkn { config, .. } => match config.edge_mode {
                EdgeMode::RotationInvariant => ModelKind::GknRi,
                EdgeMode::RawConcat => ModelKind::GknRaw,
            },
            Network::Vcnn { config, .. } => match config.variant {
                VcnnVariant::SingleD => ModelKind::Vcnn,
                VcnnVariant::SplitD => ModelKind::VcnnSplit,
            },
        }
    }

    pub fn zero_grads(&self) -> Grads<T> {
        match self {
            Network::Gkn { params, .. } => Grads::Gkn(params.zero_grads()),
            Network::Vcnn { params, .. } => Grads::Vcnn(params.zero_grads()),
        }
    }

    /// Edge block for GKN networks, `None` for VCNN.
    pub fn prepare(&self, q: ArrayView2<T>) -> Result<Option<PreparedCloud<T>>> {
        match self {
            Network::Gkn { config, .. } => PreparedCloud::new(q, config.edge_mode).map(Some),
            Network::Vcnn { .. } => Ok(None),
        }
    }

    pub fn predict(&self, input: Input<T>) -> Result<T> {
        match (self, input) {
            (Network::Gkn { params, config }, Input::Cloud(q)) => Ok(gkn::gkn_forward(params, config, q)?.0),
            (Network::Gkn { params, config }, Input::Prepared(c)) => {
                Ok(gkn::gkn_forward_prepared(params, config, c)?.0)
            }
            (Network::Vcnn { params, config }, Input::Cloud(q)) => Ok(vcnn::vcnn_forward(params, config, q)?.0),
            (Network::Vcnn { .. }, Input::Prepared(_)) => Err(Error::InvalidArgument(
                "prepared edge blocks only apply to GKN".into(),
            )),
        }
    }

    /// Forward pass, then accumulates `dloss(prediction) * d prediction`
    /// into `grads`. Returns the prediction.
    pub fn accumulate_grads(
        &self,
        input: Input<T>,
        dloss: impl FnOnce(T) -> T,
        grads: &mut Grads<T>,
    ) -> Result<T> {
        match (self, grads) {
            (Network::Gkn { params, config }, Grads::Gkn(g)) => {
                let (tau, cache) = match input {
                    Input::Cloud(q) => gkn::gkn_forward(params, config, q)?,
                    Input::Prepared(c) => gkn::gkn_forward_prepared(params, config, c)?,
                };
                gkn::gkn_backward_into(params, config, &cache, dloss(tau), g)?;
                Ok(tau)
            }
            (Network::Vcnn { params, config }, Grads::Vcnn(g)) => {
                let Input::Cloud(q) = input else {
                    return Err(Error::InvalidArgument("prepared edge blocks only apply to GKN".into()));
                };
                let (tau, cache) = vcnn::vcnn_forward(params, config, q)?;
                vcnn::vcnn_backward_into(params, config, &cache, dloss(tau), g)?;
                Ok(tau)
            }
            _ => Err(Error::InvalidArgument("gradient set does not match the network".into())),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        match self {
            Network::Gkn { params, config } => Network::Gkn {
                params: params.cast(),
                config: config.clone(),
            },
            Network::Vcnn { params, config } => Network::Vcnn {
                params: params.cast(),
                config: config.clone(),
            },
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = match self {
            Network::Gkn { params, config } => params.to_checkpoint(config),
            Network::Vcnn { params, config } => params.to_checkpoint(config),
        };
        ck.set("kind", self.kind().tag());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        match ck.model.as_str() {
            "gkn" => {
                let (params, config) = GknParams::from_checkpoint(ck)?;
                Ok(Network::Gkn { params, config })
            }
            "vcnn" => {
                let (params, config) = VcnnParams::from_checkpoint(ck)?;
                Ok(Network::Vcnn { params, config })
            }
            other => Err(Error::InvalidArgument(format!("unknown model `{other}` in checkpoint"))),
        }
    }
}

impl<T: Scalar> Parameters<T> for Network<T> {
    fn blocks(&self) -> Vec<&[T]> {
        match self {
            Network::Gkn { params, .. } => params.blocks(),
            Network::Vcnn { params, .. } => params.blocks(),
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Network::Gkn { params, .. } => params.blocks_mut(),
            Network::Vcnn { params, .. } => params.blocks_mut(),
        }
    }
}

impl<T: Scalar> Grads<T> {
    pub fn add_assign(&mut self, other: &Self) {
        match (self, other) {
            (Grads::Gkn(a), Grads::Gkn(b)) => a.add_assign(b),
            (Grads::Vcnn(a), Grads::Vcnn(b)) => a.add_assign(b),
            _ => panic!("adding gradient sets of different networks"),
        }
    }

    pub fn scale(&mut self, factor: T) {
        match self {
            Grads::Gkn(g) => g.scale(factor),
            Grads::Vcnn(g) => g.scale(factor),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Grads::Gkn(g) => g.is_zero(),
            Grads::Vcnn(g) => g.is_zero(),
        }
    }
}

impl<T: Scalar> Parameters<T> for Grads<T> {
    fn blocks(&self) -> Vec<&[T]> {
        match self {
            Grads::Gkn(g) => g.blocks(),
            Grads::Vcnn(g) => g.blocks(),
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Grads::Gkn(g) => g.blocks_mut(),
            Grads::Vcnn(g) => g.blocks_mut(),
        }
    }
}

/// Network plus the scalings needed to map raw clouds to raw predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel<T> {
    pub network: Network<T>,
    pub normalizer: Normalizer,
    pub labels: LabelScale,
}

impl<T: Scalar> TrainedModel<T> {
    pub fn kind(&self) -> ModelKind {
        self.network.kind()
    }

    /// Normalised cloud in the network's scalar type.
    pub fn encode(&self, q: &Array2<f64>) -> Array2<T> {
        self.normalizer.apply(q).mapv(T::of)
    }

    /// Prediction for a raw feature matrix, in label units.
    pub fn predict(&self, q: &Array2<f64>) -> Result<f64> {
        let z = self.network.predict(Input::Cloud(self.encode(q).view()))?;
        Ok(self.labels.inverse(z.to_f64_lossy()))
    }

    /// Predictions for many clouds, in input order.
    pub fn predict_many(&self, clouds: &[&Array2<f64>]) -> Result<Vec<f64>> {
        use rayon::prelude::*;
        clouds.par_iter().map(|q| self.predict(q)).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.network.to_checkpoint();
        ck.extras.push(("normalizer".into(), self.normalizer.to_vec()));
        ck.extras.push(("label_scale".into(), vec![self.labels.mean, self.labels.std]));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let network = Network::from_checkpoint(ck)?;
        let normalizer = Normalizer::from_slice(ck.extra("normalizer")?)?;
        let ls = ck.extra("label_scale")?;
        if ls.len() != 2 {
            return Err(Error::dim("label scale entries", 2, ls.len()));
        }
        Ok(Self {
            network,
            normalizer,
            labels: LabelScale {
                mean: ls[0],
                std: ls[1],
            },
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
