//! Training samples: elliptical region of influence, fixed-size stencil
//! sampling, the `n x 11` feature matrix and dataset files.

mod dataset;
mod ellipse;
mod features;
pub mod io;
mod stencil;

pub use dataset::{build_dataset, truncation_box, Dataset, DatasetMeta, IndexBox, SamplingConfig, VectorCloud};
pub use ellipse::{influence_ellipse, RegionOfInfluence};
pub use features::{assemble_features, rotate_cloud, FEATURE_TAGS, N_FEATURES};
pub use stencil::{collect_candidates, sample_stencil};
