//! Dataset files.
//!
//! Binary layout, little-endian:
//!
//! ```text
//! magic           5 bytes  "VCLD1"
//! n               u32      stencil size
//! count           u64      number of samples
//! tags            11 x string (u16 length + UTF-8), the feature columns
//! seed            u64
//! frame_rotation  f64      frame rotation of the first source field (0 if none)
//! samples         count x [center (2 x f64), tau (f64), Q (n x 11 f64, row-major)]
//! extension       4 bytes  "EXT1"
//!                 eps, nu, zeta (3 x f64)
//!                 u32 field count, then per field (flow angle, frame rotation) as f64
//!                 count x [source u32, cell i u32, cell j u32, l1, l2, axis_x, axis_y (f64)]
//! ```
//!
//! Everything up to and including the samples is the fixed interchange
//! layout; the extension carries provenance so that load reproduces the
//! in-memory dataset exactly.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::binio::{Reader, Writer};
use crate::cloudgen::{Dataset, DatasetMeta, RegionOfInfluence, VectorCloud, FEATURE_TAGS, N_FEATURES};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"VCLD1";
const EXT_MAGIC: &[u8; 4] = b"EXT1";

pub fn to_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    let n = ds.meta.stencil;
    if let Some(bad) = ds.samples.iter().position(|s| s.q.dim() != (n, N_FEATURES)) {
        return Err(Error::InvalidArgument(format!(
            "sample {bad} has shape {:?}, dataset stencil is {n}",
            ds.samples[bad].q.dim()
        )));
    }
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(n as u32);
    w.u64(ds.samples.len() as u64);
    for tag in FEATURE_TAGS {
        w.str(tag);
    }
    w.u64(ds.meta.seed);
    w.f64(ds.meta.fields.first().map_or(0.0, |f| f.1));
    for s in &ds.samples {
        w.f64(s.center[0]);
        w.f64(s.center[1]);
        w.f64(s.tau);
        w.f64s(s.q.iter().copied());
    }
    w.bytes(EXT_MAGIC);
    w.f64(ds.meta.eps);
    w.f64(ds.meta.nu);
    w.f64(ds.meta.zeta);
    w.u32(ds.meta.fields.len() as u32);
    for &(a, r) in &ds.meta.fields {
        w.f64(a);
        w.f64(r);
    }
    for s in &ds.samples {
        w.u32(s.source);
        w.u32(s.cell.0);
        w.u32(s.cell.1);
        w.f64(s.ellipse.l1);
        w.f64(s.ellipse.l2);
        w.f64(s.ellipse.axis[0]);
        w.f64(s.ellipse.axis[1]);
    }
    Ok(w.buf)
}

pub fn from_bytes(data: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(data);
    r.expect(MAGIC, "dataset magic")?;
    let n = r.u32("stencil size")? as usize;
    let count = r.u64("sample count")? as usize;
    for expected in FEATURE_TAGS {
        let at = r.offset();
        let tag = r.str("feature tag")?;
        if tag != expected {
            return Err(Error::Parse {
                offset: at,
                message: format!("feature column `{tag}` where `{expected}` was expected"),
            });
        }
    }
    let seed = r.u64("seed")?;
    let _frame_rotation = r.f64("frame rotation")?;
    let per_sample = 3 + n * N_FEATURES;
    if count.saturating_mul(per_sample).saturating_mul(8) > r.remaining() {
        return r.fail(format!("file too short for {count} samples of stencil {n}"));
    }
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let center = [r.f64("center")?, r.f64("center")?];
        let tau = r.f64("tau")?;
        let q = r.f64s(n * N_FEATURES, "feature matrix")?;
        samples.push(VectorCloud {
            q: Array2::from_shape_vec((n, N_FEATURES), q).expect("sized above"),
            tau,
            center,
            ellipse: RegionOfInfluence {
                l1: 0.0,
                l2: 0.0,
                axis: [1.0, 0.0],
                center,
            },
            source: 0,
            cell: (0, 0),
        });
    }
    r.expect(EXT_MAGIC, "extension magic")?;
    let eps = r.f64("eps")?;
    let nu = r.f64("nu")?;
    let zeta = r.f64("zeta")?;
    let nfields = r.u32("field count")? as usize;
    let mut fields = Vec::with_capacity(nfields.min(1 << 16));
    for _ in 0..nfields {
        fields.push((r.f64("flow angle")?, r.f64("frame rotation")?));
    }
    for s in &mut samples {
        s.source = r.u32("source index")?;
        s.cell = (r.u32("cell i")?, r.u32("cell j")?);
        s.ellipse.l1 = r.f64("l1")?;
        s.ellipse.l2 = r.f64("l2")?;
        s.ellipse.axis = [r.f64("axis")?, r.f64("axis")?];
    }
    if r.remaining() != 0 {
        return r.fail("trailing bytes after dataset");
    }
    Ok(Dataset {
        samples,
        meta: DatasetMeta {
            stencil: n,
            eps,
            nu,
            zeta,
            seed,
            fields,
        },
    })
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(ds)?)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    from_bytes(&std::fs::read(path)?)
}

/// Flat CSV mirror of the binary layout, one line per cloud row.
pub fn to_csv(ds: &Dataset) -> String {
    let mut out = String::from("sample,center_x,center_y,tau,row");
    for t in FEATURE_TAGS {
        out.push(',');
        out.push_str(t);
    }
    out.push('\n');
    for (k, s) in ds.samples.iter().enumerate() {
        for (row, q) in s.q.rows().into_iter().enumerate() {
            let _ = write!(out, "{k},{},{},{},{row}", s.center[0], s.center[1], s.tau);
            for v in q {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    out
}
