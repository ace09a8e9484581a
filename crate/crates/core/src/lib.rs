//! Frame-invariant neural operators on point clouds sampled from 2-D flow
//! fields: a graph kernel network and a vector-cloud network, plus the flow
//! generator, cloud sampler, trainer and cost benchmarks around them.

pub mod bench;
pub mod cloudgen;
pub mod error;
pub mod fieldgen;
pub mod geom;
pub mod gkn;
pub mod numnet;
pub mod scalar;
pub mod trainer;
pub mod vcnn;

mod binio;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mlp64 = numnet::Mlp<f64>;
pub type Mlp32 = numnet::Mlp<f32>;
pub type GknParams64 = gkn::GknParams<f64>;
pub type GknParams32 = gkn::GknParams<f32>;
pub type VcnnParams64 = vcnn::VcnnParams<f64>;
pub type VcnnParams32 = vcnn::VcnnParams<f32>;
pub type Network64 = trainer::Network<f64>;
pub type Network32 = trainer::Network<f32>;
pub type TrainedModel64 = trainer::TrainedModel<f64>;
pub type TrainedModel32 = trainer::TrainedModel<f32>;
