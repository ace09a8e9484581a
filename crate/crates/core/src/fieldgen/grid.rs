use crate::error::{Error, Result};
use crate::geom::Vec2;

/// Uniform cell-centred Cartesian grid with an optional solid mask.
///
/// Cells are indexed `(i, j)` with `i` along x; flat index is `j * nx + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredGrid {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub origin: Vec2,
    pub obstacle_mask: Vec<bool>,
}

impl StructuredGrid {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64, origin: Vec2) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 3x3 cells, got {nx}x{ny}"
            )));
        }
        if !(dx > 0.0 && dy > 0.0) || !dx.is_finite() || !dy.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "cell sizes must be positive, got dx={dx} dy={dy}"
            )));
        }
        Ok(Self {
            nx,
            ny,
            dx,
            dy,
            origin,
            obstacle_mask: vec![false; nx * ny],
        })
    }

    /// Grid covering `[x0, x1] x [y0, y1]` with square-ish cells of size `h`.
    pub fn covering(x0: f64, x1: f64, y0: f64, y1: f64, h: f64) -> Result<Self> {
        let nx = ((x1 - x0) / h).round() as usize;
        let ny = ((y1 - y0) / h).round() as usize;
        Self::new(nx, ny, (x1 - x0) / nx as f64, (y1 - y0) / ny as f64, [x0, y0])
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    /// Cell centre in the canonical (unrotated) frame.
    #[inline]
    pub fn center(&self, i: usize, j: usize) -> Vec2 {
        [
            self.origin[0] + (i as f64 + 0.5) * self.dx,
            self.origin[1] + (j as f64 + 0.5) * self.dy,
        ]
    }

    #[inline]
    pub fn is_fluid(&self, idx: usize) -> bool {
        !self.obstacle_mask[idx]
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// Upper corner of the domain.
    pub fn extent(&self) -> Vec2 {
        [
            self.origin[0] + self.nx as f64 * self.dx,
            self.origin[1] + self.ny as f64 * self.dy,
        ]
    }

    /// 4-neighbours that exist inside the domain.
    pub fn neighbors(&self, i: usize, j: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (nx, ny) = (self.nx as isize, self.ny as isize);
        [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)]
            .into_iter()
            .filter_map(move |(di, dj)| {
                let (a, b) = (i as isize + di, j as isize + dj);
                (a >= 0 && b >= 0 && a < nx && b < ny).then_some((a as usize, b as usize))
            })
    }
}
