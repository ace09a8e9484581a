//! Scalar fields on a cell grid, exported as CSV and as a standalone SVG
//! heatmap. Compared panels share one colour scale.

use std::fmt::Write as _;

use cloudop_core::cloudgen::Dataset;
use cloudop_core::fieldgen::FlowField;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct ContourGrid {
    pub title: String,
    pub nx: usize,
    pub ny: usize,
    /// Frame coordinates of each cell, row-major with `j` outer.
    pub xy: Vec<[f64; 2]>,
    /// `None` marks solid or unsampled cells.
    pub values: Vec<Option<f64>>,
}

impl ContourGrid {
    pub fn from_field(field: &FlowField, column: &str) -> Result<Self, CliError> {
        let g = &field.grid;
        let pick = |k: usize| -> Result<f64, CliError> {
            Ok(match column {
                "tau" => field.tau[k],
                "s" => field.s[k],
                "eta" => field.eta[k],
                "theta" => field.theta[k],
                "ux" => field.u[k][0],
                "uy" => field.u[k][1],
                _ => return Err(CliError::Config(format!("unknown column `{column}`; use tau, s, eta, theta, ux or uy"))),
            })
        };
        let mut xy = Vec::with_capacity(g.n_cells());
        let mut values = Vec::with_capacity(g.n_cells());
        for j in 0..g.ny {
            for i in 0..g.nx {
                let k = g.idx(i, j);
                xy.push(field.position(i, j));
                values.push(if g.is_fluid(k) { Some(pick(k)?) } else { None });
            }
        }
        Self::checked(column.to_string(), g.nx, g.ny, xy, values)
    }

    /// Grid spanning the sampled cells of `dataset`, holding `values[i]` at
    /// the cell of sample `i`.
    pub fn from_samples(title: &str, dataset: &Dataset, values: &[f64]) -> Result<Self, CliError> {
        if values.len() != dataset.len() {
            return Err(CliError::Config(format!(
                "{} values for {} samples",
                values.len(),
                dataset.len()
            )));
        }
        let Some(first) = dataset.samples.first() else {
            return Err(CliError::Config("dataset is empty".into()));
        };
        let (mut i0, mut i1, mut j0, mut j1) = (first.cell.0, first.cell.0, first.cell.1, first.cell.1);
        for s in &dataset.samples {
            i0 = i0.min(s.cell.0);
            i1 = i1.max(s.cell.0);
            j0 = j0.min(s.cell.1);
            j1 = j1.max(s.cell.1);
        }
        let nx = (i1 - i0 + 1) as usize;
        let ny = (j1 - j0 + 1) as usize;
        let mut xy = vec![[f64::NAN; 2]; nx * ny];
        let mut grid = vec![None; nx * ny];
        for (s, &v) in dataset.samples.iter().zip(values) {
            let k = (s.cell.1 - j0) as usize * nx + (s.cell.0 - i0) as usize;
            if grid[k].is_some() {
                return Err(CliError::Config(format!(
                    "several samples share cell ({}, {}); export one field at a time",
                    s.cell.0, s.cell.1
                )));
            }
            grid[k] = Some(v);
            xy[k] = s.center;
        }
        Self::checked(title.to_string(), nx, ny, xy, grid)
    }

    fn checked(title: String, nx: usize, ny: usize, xy: Vec<[f64; 2]>, values: Vec<Option<f64>>) -> Result<Self, CliError> {
        if values.iter().all(Option::is_none) {
            return Err(CliError::Config(format!("field `{title}` has no values to plot")));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CliError::Numerical(format!("field `{title}` contains non-finite values")));
        }
        Ok(Self { title, nx, ny, xy, values })
    }

    pub fn range(&self) -> (f64, f64) {
        self.values
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,value\n");
        for (p, v) in self.xy.iter().zip(&self.values) {
            if let Some(v) = v {
                let _ = writeln!(out, "{},{},{}", p[0], p[1], v);
            }
        }
        out
    }
}

/// Panels must share dimensions and the set of defined cells.
pub fn check_compatible(grids: &[ContourGrid]) -> Result<(), CliError> {
    let Some(a) = grids.first() else {
        return Err(CliError::Config("nothing to plot".into()));
    };
    for b in &grids[1..] {
        if (a.nx, a.ny) != (b.nx, b.ny) {
            return Err(CliError::Config(format!(
                "grid mismatch: `{}` is {}x{}, `{}` is {}x{}",
                a.title, a.nx, a.ny, b.title, b.nx, b.ny
            )));
        }
        if a.values.iter().zip(&b.values).any(|(x, y)| x.is_some() != y.is_some()) {
            return Err(CliError::Config(format!("`{}` and `{}` cover different cells", a.title, b.title)));
        }
    }
    Ok(())
}

const STOPS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn colour(t: f64) -> String {
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let k = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - k as f64;
    let c: Vec<u8> = (0..3)
        .map(|d| (STOPS[k][d] + f * (STOPS[k + 1][d] - STOPS[k][d])).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Side-by-side heatmaps with one colour bar. Cells are drawn in grid index
/// order, `j` increasing upwards.
pub fn render_svg(grids: &[ContourGrid]) -> Result<String, CliError> {
    check_compatible(grids)?;
    let (lo, hi) = grids.iter().map(ContourGrid::range).fold((f64::INFINITY, f64::NEG_INFINITY), |a, b| {
        (a.0.min(b.0), a.1.max(b.1))
    });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (nx, ny) = (grids[0].nx, grids[0].ny);
    let cell = (480.0 / nx.max(ny) as f64).clamp(2.0, 24.0);
    let (pw, ph) = (nx as f64 * cell, ny as f64 * cell);
    let gap = 20.0;
    let top = 28.0;
    let bar = 70.0;
    let width = grids.len() as f64 * (pw + gap) + gap + bar;
    let height = ph + top + gap;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1}" height="{height:.1}" viewBox="0 0 {width:.1} {height:.1}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (p, g) in grids.iter().enumerate() {
        let x0 = gap + p as f64 * (pw + gap);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="18" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
            x0 + pw / 2.0,
            escape(&g.title)
        );
        let _ = writeln!(s, r#"<g shape-rendering="crispEdges">"#);
        for j in 0..ny {
            for i in 0..nx {
                let (fill, v) = match g.values[j * nx + i] {
                    Some(v) => (colour((v - lo) / span), v),
                    None => continue,
                };
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="{fill}"><title>{v}</title></rect>"#,
                    x0 + i as f64 * cell,
                    top + (ny - 1 - j) as f64 * cell,
                );
            }
        }
        let _ = writeln!(s, "</g>");
    }
    let bx = width - bar + 8.0;
    let steps = 32;
    for k in 0..steps {
        let h = ph / steps as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{bx:.1}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#,
            top + ph - (k + 1) as f64 * h,
            h + 0.5,
            colour((k as f64 + 0.5) / steps as f64)
        );
    }
    for (y, v) in [(top + 10.0, hi), (top + ph, lo)] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{y:.1}" font-family="sans-serif" font-size="10">{v:.3e}</text>"#,
            bx + 20.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
