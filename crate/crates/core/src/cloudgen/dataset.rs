use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cloudgen::{
    assemble_features, collect_candidates, influence_ellipse, sample_stencil, RegionOfInfluence,
};
use crate::error::{Error, Result};
use crate::fieldgen::FlowField;
use crate::geom::Vec2;

/// One region-to-point sample.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorCloud {
    /// `n x 11` feature matrix.
    pub q: Array2<f64>,
    pub tau: f64,
    /// Centre position in the field's current frame.
    pub center: Vec2,
    pub ellipse: RegionOfInfluence,
    /// Index of the source field within the dataset.
    pub source: u32,
    /// Grid cell of the centre.
    pub cell: (u32, u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub stencil: usize,
    pub eps: f64,
    pub nu: f64,
    pub zeta: f64,
    pub seed: u64,
    /// Per source field: (flow angle, frame rotation), radians.
    pub fields: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<VectorCloud>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.tau).collect()
    }

    /// Same samples with every cloud rotated into a frame turned by `beta`.
    pub fn rotated(&self, beta: f64) -> Self {
        let mut out = self.clone();
        for s in &mut out.samples {
            s.q = crate::cloudgen::rotate_cloud(&s.q, beta);
            s.center = crate::geom::rotate(s.center, -beta);
            s.ellipse.axis = crate::geom::rotate(s.ellipse.axis, -beta);
        }
        for f in &mut out.meta.fields {
            f.1 += beta;
        }
        out
    }
}

/// Inclusive cell-index box `[i0, i1] x [j0, j1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexBox {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl IndexBox {
    pub fn contains(&self, i: usize, j: usize) -> bool {
        (self.i0..=self.i1).contains(&i) && (self.j0..=self.j1).contains(&j)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub stencil: usize,
    pub eps: f64,
    /// Ellipse diffusion coefficient (the transport `C_nu`).
    pub nu: f64,
    /// Ellipse dissipation coefficient (`C_zeta * tau_ref`).
    pub zeta: f64,
    pub seed: u64,
    /// Truncation threshold relative to the largest `tau`.
    pub truncation_rel: f64,
    pub truncation_pad: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            stencil: 150,
            eps: 0.01,
            nu: 0.02,
            zeta: 1.0,
            seed: 0,
            truncation_rel: 1e-6,
            truncation_pad: 2,
        }
    }
}

/// Bounding box of cells where `tau` exceeds `rel` times its maximum over
/// all `fields`, padded by `pad` cells and clipped to the grid.
pub fn truncation_box(fields: &[FlowField], rel: f64, pad: usize) -> Result<IndexBox> {
    let first = fields
        .first()
        .ok_or_else(|| Error::InvalidArgument("truncation box needs at least one field".into()))?;
    let (nx, ny) = (first.grid.nx, first.grid.ny);
    if fields.iter().any(|f| f.grid.nx != nx || f.grid.ny != ny) {
        return Err(Error::InvalidArgument("fields live on different grids".into()));
    }
    let peak = fields
        .iter()
        .flat_map(|f| f.tau.iter().copied())
        .fold(0.0f64, f64::max);
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument("no positive tau in any field".into()));
    }
    let threshold = rel * peak;
    let mut bx: Option<IndexBox> = None;
    for f in fields {
        for j in 0..ny {
            for i in 0..nx {
                if f.tau[f.grid.idx(i, j)] > threshold {
                    bx = Some(match bx {
                        None => IndexBox { i0: i, i1: i, j0: j, j1: j },
                        Some(b) => IndexBox {
                            i0: b.i0.min(i),
                            i1: b.i1.max(i),
                            j0: b.j0.min(j),
                            j1: b.j1.max(j),
                        },
                    });
                }
            }
        }
    }
    let b = bx.expect("peak is positive");
    Ok(IndexBox {
        i0: b.i0.saturating_sub(pad),
        i1: (b.i1 + pad).min(nx - 1),
        j0: b.j0.saturating_sub(pad),
        j1: (b.j1 + pad).min(ny - 1),
    })
}

/// Independent RNG stream per (seed, field, cell).
fn stream_seed(seed: u64, field: usize, cell: usize) -> u64 {
    let mut z = seed
        ^ (field as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (cell as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    // splitmix64 finaliser
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One labelled cloud per fluid cell inside `bx` (or the box derived from
/// `fields` when `None`), fields in order, cells row-major.
pub fn build_dataset(
    fields: &[FlowField],
    config: &SamplingConfig,
    bx: Option<IndexBox>,
) -> Result<Dataset> {
    if config.stencil == 0 {
        return Err(Error::InvalidArgument("stencil size must be at least 1".into()));
    }
    let bx = match bx {
        Some(b) => b,
        None => truncation_box(fields, config.truncation_rel, config.truncation_pad)?,
    };
    let mut samples = Vec::new();
    for (fi, field) in fields.iter().enumerate() {
        let g = &field.grid;
        let centers: Vec<(usize, usize)> = (0..g.ny)
            .flat_map(|j| (0..g.nx).map(move |i| (i, j)))
            .filter(|&(i, j)| bx.contains(i, j) && g.is_fluid(g.idx(i, j)))
            .collect();
        let built: Result<Vec<VectorCloud>> = centers
            .par_iter()
            .map(|&(i, j)| {
                let k = g.idx(i, j);
                let mut e = influence_ellipse(field.u[k], config.nu, config.zeta, config.eps)?;
                e.center = field.position(i, j);
                let cands = collect_candidates(field, (i, j), &e)?;
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, fi, k));
                let picks = sample_stencil(&cands, config.stencil, &mut rng);
                let q = assemble_features(field, (i, j), &picks, &e)?;
                Ok(VectorCloud {
                    q,
                    tau: field.tau[k],
                    center: e.center,
                    ellipse: e,
                    source: fi as u32,
                    cell: (i as u32, j as u32),
                })
            })
            .collect();
        samples.extend(built?);
    }
    Ok(Dataset {
        samples,
        meta: DatasetMeta {
            stencil: config.stencil,
            eps: config.eps,
            nu: config.nu,
            zeta: config.zeta,
            seed: config.seed,
            fields: fields.iter().map(|f| (f.meta.alpha, f.frame_rotation)).collect(),
        },
    })
}
