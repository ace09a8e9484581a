//! Field snapshot CSV.
//!
//! ```text
//! # cloudop field snapshot v1
//! # nx=.. ny=.. dx=.. dy=.. origin_x=.. origin_y=.. frame_rotation=.. frame_offset_x=.. frame_offset_y=.. u_inf=.. alpha=.. radius=..
//! # config key=value ...            (optional echo lines, ignored on load)
//! x,y,ux,uy,s,eta,b,theta,tau,mask
//! ```
//!
//! One record per cell in row-major order (`j` outer, `i` inner). `x, y` and
//! `ux, uy` are in the current frame. `mask` is 1 for solid cells. Floats are
//! written in shortest round-trip form.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fieldgen::{FlowField, FlowMeta, StructuredGrid};

pub const HEADER: &str = "# cloudop field snapshot v1";
pub const COLUMNS: &str = "x,y,ux,uy,s,eta,b,theta,tau,mask";

pub fn to_csv(field: &FlowField, config_echo: &[(String, String)]) -> String {
    let g = &field.grid;
    let mut out = String::with_capacity(g.n_cells() * 96);
    out.push_str(HEADER);
    out.push('\n');
    let _ = writeln!(
        out,
        "# nx={} ny={} dx={} dy={} origin_x={} origin_y={} frame_rotation={} frame_offset_x={} frame_offset_y={} u_inf={} alpha={} radius={}",
        g.nx,
        g.ny,
        g.dx,
        g.dy,
        g.origin[0],
        g.origin[1],
        field.frame_rotation,
        field.frame_offset[0],
        field.frame_offset[1],
        field.meta.u_inf,
        field.meta.alpha,
        field.meta.radius
    );
    for (k, v) in config_echo {
        let _ = writeln!(out, "# config {k}={v}");
    }
    out.push_str(COLUMNS);
    out.push('\n');
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = g.idx(i, j);
            let p = field.position(i, j);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                p[0],
                p[1],
                field.u[k][0],
                field.u[k][1],
                field.s[k],
                field.eta[k],
                field.b[k],
                field.theta[k],
                field.tau[k],
                u8::from(g.obstacle_mask[k])
            );
        }
    }
    out
}

pub fn save(field: &FlowField, config_echo: &[(String, String)], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_csv(field, config_echo))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<FlowField> {
    from_csv(&std::fs::read_to_string(path)?)
}

pub fn from_csv(text: &str) -> Result<FlowField> {
    let mut offset = 0u64;
    let fail = |offset: u64, message: String| Error::Parse { offset, message };
    let mut lines = text.split_inclusive('\n');

    let mut next_line = |offset: &mut u64| -> Option<String> {
        let l = lines.next()?;
        *offset += l.len() as u64;
        Some(l.trim_end_matches(['\n', '\r']).to_string())
    };

    let first = next_line(&mut offset).ok_or_else(|| fail(0, "empty snapshot".into()))?;
    if first != HEADER {
        return Err(fail(0, format!("expected `{HEADER}`, found `{first}`")));
    }
    let dims_at = offset;
    let dims = next_line(&mut offset).ok_or_else(|| fail(dims_at, "missing grid header".into()))?;
    let mut kv = std::collections::HashMap::new();
    for tok in dims.trim_start_matches('#').split_whitespace() {
        if let Some((k, v)) = tok.split_once('=') {
            kv.insert(k.to_string(), v.to_string());
        }
    }
    let num = |key: &str| -> Result<f64> {
        kv.get(key)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| fail(dims_at, format!("grid header lacks numeric `{key}`")))
    };
    let nx = num("nx")? as usize;
    let ny = num("ny")? as usize;
    let mut grid = StructuredGrid::new(nx, ny, num("dx")?, num("dy")?, [num("origin_x")?, num("origin_y")?])?;

    let mut line_start;
    loop {
        line_start = offset;
        let l = next_line(&mut offset)
            .ok_or_else(|| fail(line_start, "missing column header".into()))?;
        if l.starts_with('#') {
            continue;
        }
        if l != COLUMNS {
            return Err(fail(line_start, format!("expected columns `{COLUMNS}`, found `{l}`")));
        }
        break;
    }

    let n = grid.n_cells();
    let mut u = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut eta = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut theta = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);
    for k in 0..n {
        line_start = offset;
        let l = next_line(&mut offset)
            .ok_or_else(|| fail(line_start, format!("expected {n} records, found {k}")))?;
        let vals: Vec<&str> = l.split(',').collect();
        if vals.len() != 10 {
            return Err(fail(line_start, format!("record has {} fields, expected 10", vals.len())));
        }
        let f = |c: usize| -> Result<f64> {
            vals[c]
                .parse::<f64>()
                .map_err(|_| fail(line_start, format!("bad number `{}`", vals[c])))
        };
        u.push([f(2)?, f(3)?]);
        s.push(f(4)?);
        eta.push(f(5)?);
        b.push(f(6)? as u8);
        theta.push(f(7)?);
        tau.push(f(8)?);
        grid.obstacle_mask[k] = f(9)? != 0.0;
    }
    Ok(FlowField {
        grid,
        u,
        s,
        eta,
        b,
        theta,
        tau,
        frame_rotation: num("frame_rotation")?,
        frame_offset: [num("frame_offset_x")?, num("frame_offset_y")?],
        meta: FlowMeta {
            u_inf: num("u_inf")?,
            alpha: num("alpha")?,
            radius: num("radius")?,
        },
    })
}
