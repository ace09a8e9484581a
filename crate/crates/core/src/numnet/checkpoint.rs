//! Parameter checkpoint files.
//!
//! Layout (all integers and floats little-endian, strings are a `u16` byte
//! length followed by UTF-8):
//!
//! ```text
//! magic      8 bytes  "CLDNNCK1"
//! model      string   model tag, e.g. "gkn" or "vcnn"
//! config     u32 count, then count x (key string, value string)
//! sections   u32 count, then per section:
//!              name        string
//!              layers      u32 L
//!              sizes       (L + 1) x u32, input first
//!              activations L x u8 (0 = linear, 1 = relu)
//!              per layer:  weights (out x in, row-major f64), bias (out x f64)
//! extras     u32 count, then per extra: name string, u64 len, len x f64
//! ```
//!
//! Parameters are always stored as `f64`, so `f32` and `f64` models both
//! round-trip exactly.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::numnet::{Activation, DenseLayer, Mlp};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"CLDNNCK1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: String,
    pub config: Vec<(String, String)>,
    pub sections: Vec<(String, Mlp<f64>)>,
    pub extras: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            config: Vec::new(),
            sections: Vec::new(),
            extras: Vec::new(),
        }
    }

    /// Inserts or replaces a config entry.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.config.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.config.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint config lacks `{key}`")))
    }

    pub fn get_parsed<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::InvalidArgument(format!("checkpoint config `{key}` = `{raw}`")))
    }

    pub fn push_section<T: Scalar>(&mut self, name: &str, mlp: &Mlp<T>) {
        self.sections.push((name.to_string(), mlp.cast()));
    }

    pub fn section<T: Scalar>(&self, name: &str) -> Result<Mlp<T>> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m.cast())
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks section `{name}`")))
    }

    pub fn extra(&self, name: &str) -> Result<&[f64]> {
        self.extras
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks extra `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.str(&self.model);
        w.u32(self.config.len() as u32);
        for (k, v) in &self.config {
            w.str(k);
            w.str(v);
        }
        w.u32(self.sections.len() as u32);
        for (name, mlp) in &self.sections {
            w.str(name);
            w.u32(mlp.num_layers() as u32);
            for s in mlp.layer_sizes() {
                w.u32(s as u32);
            }
            for l in mlp.layers() {
                w.u8(l.activation().code());
            }
            for l in mlp.layers() {
                w.f64s(l.weights().iter().copied());
                w.f64s(l.bias().iter().copied());
            }
        }
        w.u32(self.extras.len() as u32);
        for (name, vals) in &self.extras {
            w.str(name);
            w.u64(vals.len() as u64);
            w.f64s(vals.iter().copied());
        }
        w.buf
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new(data);
        r.expect(MAGIC, "checkpoint magic")?;
        let model = r.str("model tag")?;
        let nconf = r.u32("config count")?;
        let mut config = Vec::new();
        for _ in 0..nconf {
            let k = r.str("config key")?;
            let v = r.str("config value")?;
            config.push((k, v));
        }
        let nsec = r.u32("section count")?;
        let mut sections = Vec::new();
        for _ in 0..nsec {
            let name = r.str("section name")?;
            let nl = r.u32("layer count")? as usize;
            if nl == 0 {
                return r.fail(format!("section `{name}` has no layers"));
            }
            let mut sizes = Vec::with_capacity(nl + 1);
            for _ in 0..=nl {
                sizes.push(r.u32("layer size")? as usize);
            }
            let mut acts = Vec::with_capacity(nl);
            for _ in 0..nl {
                let code = r.u8("activation")?;
                match Activation::from_code(code) {
                    Some(a) => acts.push(a),
                    None => return r.fail(format!("unknown activation code {code}")),
                }
            }
            let mut layers = Vec::with_capacity(nl);
            for k in 0..nl {
                let (i, o) = (sizes[k], sizes[k + 1]);
                let w = r.f64s(i * o, "weights")?;
                let b = r.f64s(o, "bias")?;
                let w = Array2::from_shape_vec((o, i), w).expect("sized above");
                layers.push(DenseLayer::new(w, Array1::from(b), acts[k])?);
            }
            sections.push((name, Mlp::from_layers(layers)?));
        }
        let nextra = r.u32("extras count")?;
        let mut extras = Vec::new();
        for _ in 0..nextra {
            let name = r.str("extra name")?;
            let len = r.u64("extra length")? as usize;
            extras.push((name, r.f64s(len, "extra values")?));
        }
        if r.remaining() != 0 {
            return r.fail("trailing bytes after checkpoint");
        }
        Ok(Self {
            model,
            config,
            sections,
            extras,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Mlp::<f64>::new(&[3, 4, 2], Activation::Linear, &mut rng).unwrap();
        let b = Mlp::<f32>::new(&[2, 1], Activation::Relu, &mut rng).unwrap();
        let mut ck = Checkpoint::new("test");
        ck.set("width", 4);
        ck.push_section("a", &a);
        ck.push_section("b", &b);
        ck.extras.push(("stats".into(), vec![1.0, f64::MIN_POSITIVE, -0.0]));
        ck
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(ck, back);
        assert_eq!(back.to_bytes(), ck.to_bytes());
        let b32: Mlp<f32> = back.section("b").unwrap();
        assert_eq!(b32.layer_sizes(), vec![2, 1]);
        assert_eq!(back.get_parsed::<usize>("width").unwrap(), 4);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = sample().to_bytes();
        for cut in [0, 5, 20, bytes.len() - 1] {
            match Checkpoint::from_bytes(&bytes[..cut]) {
                Err(Error::Parse { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Parse { offset: 0, .. })
        ));
    }
}
