use rand::seq::index;
use rand::Rng;

use crate::cloudgen::RegionOfInfluence;
use crate::error::{Error, Result};
use crate::fieldgen::FlowField;

/// Fluid cells whose offset from `center` lies inside the ellipse, in
/// row-major order.
///
/// Offsets are measured in the field's current frame, the same frame the
/// ellipse axis was derived in.
pub fn collect_candidates(
    field: &FlowField,
    center: (usize, usize),
    ellipse: &RegionOfInfluence,
) -> Result<Vec<usize>> {
    let g = &field.grid;
    let reach = ellipse.l1.max(ellipse.l2);
    let ri = (reach / g.dx).ceil() as usize + 1;
    let rj = (reach / g.dy).ceil() as usize + 1;
    let (ci, cj) = center;
    let mut out = Vec::new();
    for j in cj.saturating_sub(rj)..=(cj + rj).min(g.ny - 1) {
        for i in ci.saturating_sub(ri)..=(ci + ri).min(g.nx - 1) {
            let k = g.idx(i, j);
            if g.is_fluid(k) && ellipse.contains(field.relative_position(center, (i, j))) {
                out.push(k);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Sampling {
            i: ci,
            j: cj,
            reason: "no fluid cell inside the region of influence".into(),
        });
    }
    Ok(out)
}

/// Draws `n` candidates: without replacement when enough are available,
/// otherwise uniformly with replacement.
pub fn sample_stencil<R: Rng + ?Sized>(candidates: &[usize], n: usize, rng: &mut R) -> Vec<usize> {
    assert!(!candidates.is_empty() && n >= 1, "sampling needs candidates and n >= 1");
    if candidates.len() >= n {
        index::sample(rng, candidates.len(), n)
            .into_iter()
            .map(|k| candidates[k])
            .collect()
    } else {
        (0..n)
            .map(|_| candidates[rng.random_range(0..candidates.len())])
            .collect()
    }
}
