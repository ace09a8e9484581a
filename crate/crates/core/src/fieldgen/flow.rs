use crate::error::{Error, Result};
use crate::fieldgen::StructuredGrid;
use crate::geom::{norm, rotate, Vec2};

/// Parameters of the analytic flow a field was generated from.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlowMeta {
    pub u_inf: f64,
    /// Free-stream direction in the canonical frame (radians).
    pub alpha: f64,
    pub radius: f64,
}

/// Per-cell flow quantities on a structured grid.
///
/// Velocities are stored in the current observer frame. The grid itself is
/// always described in the canonical frame; positions in the current frame
/// are `R(-frame_rotation) * x + frame_offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub grid: StructuredGrid,
    pub u: Vec<Vec2>,
    pub s: Vec<f64>,
    pub eta: Vec<f64>,
    pub b: Vec<u8>,
    pub theta: Vec<f64>,
    pub tau: Vec<f64>,
    pub frame_rotation: f64,
    pub frame_offset: Vec2,
    pub meta: FlowMeta,
}

impl FlowField {
    /// Field with the given canonical-frame velocity function on an
    /// unmasked grid. Wall distance and boundary flags are zero.
    pub fn from_velocity_fn(grid: StructuredGrid, f: impl Fn(Vec2) -> Vec2) -> Self {
        let n = grid.n_cells();
        let mut u = vec![[0.0; 2]; n];
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let k = grid.idx(i, j);
                if grid.is_fluid(k) {
                    u[k] = f(grid.center(i, j));
                }
            }
        }
        let theta = vec![grid.cell_area(); n];
        let mut field = Self {
            grid,
            u,
            s: vec![0.0; n],
            eta: vec![0.0; n],
            b: vec![0; n],
            theta,
            tau: vec![0.0; n],
            frame_rotation: 0.0,
            frame_offset: [0.0, 0.0],
            meta: FlowMeta::default(),
        };
        field.s = strain_magnitude(&field);
        field
    }

    pub fn uniform(grid: StructuredGrid, u: Vec2) -> Self {
        Self::from_velocity_fn(grid, |_| u)
    }

    /// Cell centre expressed in the current frame.
    #[inline]
    pub fn position(&self, i: usize, j: usize) -> Vec2 {
        let p = rotate(self.grid.center(i, j), -self.frame_rotation);
        [p[0] + self.frame_offset[0], p[1] + self.frame_offset[1]]
    }

    /// Offset between two cells in the current frame, computed from index
    /// differences so that it does not depend on absolute coordinates.
    #[inline]
    pub fn relative_position(&self, from: (usize, usize), to: (usize, usize)) -> Vec2 {
        let d = [
            (to.0 as f64 - from.0 as f64) * self.grid.dx,
            (to.1 as f64 - from.1 as f64) * self.grid.dy,
        ];
        rotate(d, -self.frame_rotation)
    }

    /// Velocity of cell `k` in the canonical frame.
    #[inline]
    pub fn canonical_velocity(&self, k: usize) -> Vec2 {
        rotate(self.u[k], self.frame_rotation)
    }

    /// The same physical field seen from a frame rotated by `beta`.
    ///
    /// Vector channels rotate by `-beta`; scalar channels are copied.
    pub fn rotate_frame(&self, beta: f64) -> Self {
        let mut out = self.clone();
        for u in &mut out.u {
            *u = rotate(*u, -beta);
        }
        out.frame_offset = rotate(self.frame_offset, -beta);
        out.frame_rotation = self.frame_rotation + beta;
        out
    }

    /// Shifts the origin of the current frame by `shift`.
    pub fn translate_frame(&self, shift: Vec2) -> Self {
        let mut out = self.clone();
        out.frame_offset = [self.frame_offset[0] + shift[0], self.frame_offset[1] + shift[1]];
        out
    }

    /// `sum(tau * theta)` over fluid cells.
    pub fn integrated_tau(&self) -> f64 {
        (0..self.grid.n_cells())
            .filter(|&k| self.grid.is_fluid(k))
            .map(|k| self.tau[k] * self.theta[k])
            .sum()
    }
}

/// Velocity of potential flow past a cylinder of `radius` centred at the
/// origin, free stream `u_inf` at angle `alpha`. Uses the complex velocity
/// `w = u - iv = U (e^{-i alpha} - R^2 e^{i alpha} / z^2)`.
pub fn cylinder_velocity(p: Vec2, u_inf: f64, alpha: f64, radius: f64) -> Vec2 {
    let (x, y) = (p[0], p[1]);
    let r2 = x * x + y * y;
    // 1 / z^2 = conj(z)^2 / |z|^4
    let inv_re = (x * x - y * y) / (r2 * r2);
    let inv_im = -2.0 * x * y / (r2 * r2);
    let (sa, ca) = alpha.sin_cos();
    let k = radius * radius;
    // e^{i a} / z^2
    let t_re = ca * inv_re - sa * inv_im;
    let t_im = ca * inv_im + sa * inv_re;
    let w_re = u_inf * (ca - k * t_re);
    let w_im = u_inf * (-sa - k * t_im);
    [w_re, -w_im]
}

/// Potential flow past a cylinder at the origin on `grid`.
///
/// Cells whose centres lie inside the cylinder are masked. Wall distance is
/// `max(|x| - radius, 0)` and the boundary flag marks fluid cells with a
/// masked 4-neighbour.
pub fn potential_flow_cylinder(
    grid: &StructuredGrid,
    u_inf: f64,
    alpha: f64,
    radius: f64,
) -> Result<FlowField> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {radius}")));
    }
    let hi = grid.extent();
    let lo = grid.origin;
    if lo[0] > -radius || lo[1] > -radius || hi[0] < radius || hi[1] < radius {
        return Err(Error::InvalidArgument(format!(
            "cylinder of radius {radius} does not fit in [{}, {}] x [{}, {}]",
            lo[0], hi[0], lo[1], hi[1]
        )));
    }
    let mut grid = grid.clone();
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let k = grid.idx(i, j);
            grid.obstacle_mask[k] = norm(grid.center(i, j)) < radius;
        }
    }

    let n = grid.n_cells();
    let mut u = vec![[0.0; 2]; n];
    let mut eta = vec![0.0; n];
    let mut b = vec![0u8; n];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let k = grid.idx(i, j);
            if !grid.is_fluid(k) {
                continue;
            }
            let c = grid.center(i, j);
            u[k] = cylinder_velocity(c, u_inf, alpha, radius);
            eta[k] = (norm(c) - radius).max(0.0);
            if grid
                .neighbors(i, j)
                .any(|(a, bb)| !grid.is_fluid(grid.idx(a, bb)))
            {
                b[k] = 1;
            }
        }
    }
    let theta = vec![grid.cell_area(); n];
    let mut field = FlowField {
        grid,
        u,
        s: vec![0.0; n],
        eta,
        b,
        theta,
        tau: vec![0.0; n],
        frame_rotation: 0.0,
        frame_offset: [0.0, 0.0],
        meta: FlowMeta {
            u_inf,
            alpha,
            radius,
        },
    };
    field.s = strain_magnitude(&field);
    Ok(field)
}

/// Frobenius norm of `grad u + grad u^T` per cell.
///
/// Central differences where both neighbours are fluid, one-sided next to
/// the mask or the domain edge, zero on solid cells. Derivatives are taken
/// of the canonical-frame velocity, so the result does not depend on the
/// observer frame.
pub fn strain_magnitude(field: &FlowField) -> Vec<f64> {
    let g = &field.grid;
    let vel = |i: usize, j: usize| field.canonical_velocity(g.idx(i, j));
    let fluid = |i: usize, j: usize| g.is_fluid(g.idx(i, j));

    let mut out = vec![0.0; g.n_cells()];
    for j in 0..g.ny {
        for i in 0..g.nx {
            if !fluid(i, j) {
                continue;
            }
            let here = vel(i, j);
            let left = (i > 0 && fluid(i - 1, j)).then(|| vel(i - 1, j));
            let right = (i + 1 < g.nx && fluid(i + 1, j)).then(|| vel(i + 1, j));
            let down = (j > 0 && fluid(i, j - 1)).then(|| vel(i, j - 1));
            let up = (j + 1 < g.ny && fluid(i, j + 1)).then(|| vel(i, j + 1));
            let ddx = difference(left, here, right, g.dx);
            let ddy = difference(down, here, up, g.dy);
            // ddx = (du/dx, dv/dx), ddy = (du/dy, dv/dy)
            let sxx = 2.0 * ddx[0];
            let syy = 2.0 * ddy[1];
            let sxy = ddy[0] + ddx[1];
            out[g.idx(i, j)] = (sxx * sxx + syy * syy + 2.0 * sxy * sxy).sqrt();
        }
    }
    out
}

fn difference(minus: Option<Vec2>, here: Vec2, plus: Option<Vec2>, h: f64) -> Vec2 {
    match (minus, plus) {
        (Some(m), Some(p)) => [(p[0] - m[0]) / (2.0 * h), (p[1] - m[1]) / (2.0 * h)],
        (None, Some(p)) => [(p[0] - here[0]) / h, (p[1] - here[1]) / h],
        (Some(m), None) => [(here[0] - m[0]) / h, (here[1] - m[1]) / h],
        (None, None) => [0.0, 0.0],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid() -> StructuredGrid {
        StructuredGrid::covering(-4.0, 8.0, -4.0, 4.0, 0.25).unwrap()
    }

    #[test]
    fn upstream_stagnation_point() {
        for alpha in [0.0f64, 0.3, -1.1] {
            let p = [-alpha.cos(), -alpha.sin()];
            let u = cylinder_velocity(p, 2.0, alpha, 1.0);
            assert!(norm(u) < 1e-14, "{u:?}");
        }
    }

    #[test]
    fn free_stream_limit() {
        let alpha = 0.4;
        let u = cylinder_velocity([-1e4, 3e3], 1.5, alpha, 1.0);
        assert!((u[0] - 1.5 * alpha.cos()).abs() < 1e-7);
        assert!((u[1] - 1.5 * alpha.sin()).abs() < 1e-7);
    }

    #[test]
    fn surface_speed_doubles_at_ninety_degrees() {
        // Tangential speed on the surface is 2 U |sin(phi - alpha)|.
        let alpha = 0.2;
        let phi = alpha + PI / 2.0;
        let u = cylinder_velocity([2.0 * phi.cos(), 2.0 * phi.sin()], 3.0, alpha, 2.0);
        assert!((norm(u) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn oversized_cylinder_rejected() {
        assert!(potential_flow_cylinder(&grid(), 1.0, 0.0, 5.0).is_err());
        assert!(potential_flow_cylinder(&grid(), 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn cylinder_field_invariants() {
        let f = potential_flow_cylinder(&grid(), 1.0, 0.3, 1.0).unwrap();
        let g = &f.grid;
        for k in 0..g.n_cells() {
            assert!(f.s[k] >= 0.0 && f.eta[k] >= 0.0);
            assert_eq!(f.theta[k], g.dx * g.dy);
            if !g.is_fluid(k) {
                assert_eq!(f.u[k], [0.0, 0.0]);
                assert_eq!(f.b[k], 0);
            }
        }
        assert!(g.obstacle_mask.iter().any(|&m| m));
        assert!(f.b.contains(&1));
    }

    #[test]
    fn uniform_flow_has_zero_strain() {
        let f = FlowField::uniform(grid(), [1.3, -0.2]);
        assert!(f.s.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn pure_shear_strain() {
        // u = (g y, 0): grad u + grad u^T = [[0, g], [g, 0]], Frobenius norm sqrt(2) |g|.
        let gamma = -0.7;
        let f = FlowField::from_velocity_fn(grid(), |p| [gamma * p[1], 0.0]);
        let g = &f.grid;
        for j in 1..g.ny - 1 {
            for i in 1..g.nx - 1 {
                let s = f.s[g.idx(i, j)];
                assert!((s - 2f64.sqrt() * gamma.abs()).abs() < 1e-12, "{s}");
            }
        }
    }

    #[test]
    fn rigid_rotation_has_zero_strain() {
        let w = 0.9;
        let f = FlowField::from_velocity_fn(grid(), |p| [-w * p[1], w * p[0]]);
        assert!(f.s.iter().all(|&s| s.abs() < 1e-12));
    }

    #[test]
    fn strain_is_frame_independent() {
        let f = potential_flow_cylinder(&grid(), 1.0, 0.3, 1.0).unwrap();
        let r = f.rotate_frame(0.77);
        let s = strain_magnitude(&r);
        for (a, b) in s.iter().zip(&f.s) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rotate_frame_identity_period_and_composition() {
        let f = potential_flow_cylinder(&grid(), 1.0, 0.3, 1.0).unwrap();
        assert_eq!(f.rotate_frame(0.0).u, f.u);

        let full = f.rotate_frame(2.0 * PI);
        for (a, b) in full.u.iter().zip(&f.u) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }

        let twice = f.rotate_frame(PI / 2.0).rotate_frame(PI / 2.0);
        let once = f.rotate_frame(PI);
        for (a, b) in twice.u.iter().zip(&once.u) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn rotate_frame_keeps_scalars_and_speed() {
        let mut f = potential_flow_cylinder(&grid(), 1.0, 0.3, 1.0).unwrap();
        f.tau = (0..f.grid.n_cells()).map(|k| k as f64 * 1e-3).collect();
        let r = f.rotate_frame(1.234);
        assert_eq!((&r.s, &r.eta, &r.theta, &r.tau, &r.b), (&f.s, &f.eta, &f.theta, &f.tau, &f.b));
        for (a, b) in r.u.iter().zip(&f.u) {
            assert!((norm(*a) - norm(*b)).abs() < 1e-12);
        }
        assert_eq!(r.frame_rotation, 1.234);
    }
}
