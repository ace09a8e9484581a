use ndarray::Array2;

use crate::cloudgen::RegionOfInfluence;
use crate::error::{Error, Result};
use crate::fieldgen::FlowField;
use crate::geom::{dot, norm, rotate};

/// Columns of a feature row: relative position, velocity, then the seven
/// frame-invariant scalars.
pub const FEATURE_TAGS: [&str; 11] = [
    "x_rel", "y_rel", "u_x", "u_y", "theta", "s", "b", "u_mag", "eta", "r", "r_prime",
];
pub const N_FEATURES: usize = 11;

/// Builds the `indices.len() x 11` feature matrix for a cloud centred at
/// cell `center`.
///
/// Proximity scalars: `r = exp(-|x|^2 / l2^2)` and
/// `r' = exp(-[(x.a / l1)^2 + (x.a_perp / l2)^2])` with `a` the ellipse axis.
pub fn assemble_features(
    field: &FlowField,
    center: (usize, usize),
    indices: &[usize],
    ellipse: &RegionOfInfluence,
) -> Result<Array2<f64>> {
    let g = &field.grid;
    let mut q = Array2::zeros((indices.len(), N_FEATURES));
    for (row, &k) in indices.iter().enumerate() {
        if !g.is_fluid(k) {
            let (i, j) = g.ij(k);
            return Err(Error::Sampling {
                i,
                j,
                reason: "stencil cell is inside the obstacle".into(),
            });
        }
        let x = field.relative_position(center, g.ij(k));
        let u = field.u[k];
        let r = if ellipse.l2 > 0.0 {
            (-dot(x, x) / (ellipse.l2 * ellipse.l2)).exp()
        } else {
            f64::from(x == [0.0, 0.0])
        };
        let r_prime = (-ellipse.metric(x)).exp();
        let vals = [
            x[0],
            x[1],
            u[0],
            u[1],
            field.theta[k],
            field.s[k],
            f64::from(field.b[k]),
            norm(u),
            field.eta[k],
            r,
            r_prime,
        ];
        if let Some(c) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::Sampling {
                i: center.0,
                j: center.1,
                reason: format!("non-finite `{}` in row {row}", FEATURE_TAGS[c]),
            });
        }
        for (c, v) in vals.into_iter().enumerate() {
            q[[row, c]] = v;
        }
    }
    Ok(q)
}

/// Expresses a feature matrix in a frame rotated by `beta`: the two vector
/// blocks rotate by `-beta`, scalar columns are untouched.
pub fn rotate_cloud(q: &Array2<f64>, beta: f64) -> Array2<f64> {
    let mut out = q.clone();
    for mut row in out.rows_mut() {
        for c in [0, 2] {
            let v = rotate([row[c], row[c + 1]], -beta);
            row[c] = v[0];
            row[c + 1] = v[1];
        }
    }
    out
}
