//! Graph kernel network over a fully connected vector cloud.
//!
//! ```text
//! z0_i     = Z c_i
//! z{l+1}_i = relu( W z_i + (1/n) sum_j K(e_ij) z_j )      l = 0..depth
//! tau      = F mean_i z_i
//! ```
//!
//! `K(e)` is the kernel network output reshaped row-major to `m x m`. Its
//! last (linear) layer is never applied edge by edge: with `h_ij` the
//! penultimate kernel activation,
//!
//! ```text
//! (1/n) sum_j K(e_ij) z_j = W3r vec((1/n) z^T H_i) + B3 zbar
//! ```
//!
//! where `W3r` is the `(m^2, H)` weight matrix viewed as `(m, m H)` and `H_i`
//! stacks `h_ij` over `j`. This trades `n^2 m^2 H` flops per forward pass for
//! `2 n^2 m H`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis, Zip};
use rand::Rng;

use crate::cloudgen::Dataset;
use crate::error::{Error, Result};
use crate::numnet::{canonical_rows, Activation, Checkpoint, Mlp, MlpCache, MlpGrads, Parameters};
use crate::scalar::Scalar;

/// Columns of a cloud row: `x_rel (2), u (2), c (7)`.
pub const Q_DIM: usize = 11;
pub const C_DIM: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeMode {
    RotationInvariant,
    RawConcat,
}

impl EdgeMode {
    pub const fn dim(self) -> usize {
        match self {
            EdgeMode::RotationInvariant => 16,
            EdgeMode::RawConcat => 22,
        }
    }

    pub const fn tag(self) -> &'static str {
        match self {
            EdgeMode::RotationInvariant => "rotation_invariant",
            EdgeMode::RawConcat => "raw_concat",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "rotation_invariant" => Ok(EdgeMode::RotationInvariant),
            "raw_concat" => Ok(EdgeMode::RawConcat),
            other => Err(Error::InvalidArgument(format!("unknown edge mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GknConfig {
    /// Latent width.
    pub m: usize,
    /// Number of graph convolutions.
    pub depth: usize,
    pub edge_mode: EdgeMode,
    /// Kernel network neuron counts, input first. The input must equal the
    /// edge dimension and the output `m^2`.
    pub kernel_sizes: Vec<usize>,
}

impl Default for GknConfig {
    fn default() -> Self {
        Self::rotation_invariant()
    }
}

impl GknConfig {
    pub fn rotation_invariant() -> Self {
        Self {
            m: 16,
            depth: 2,
            edge_mode: EdgeMode::RotationInvariant,
            kernel_sizes: vec![16, 64, 96, 256],
        }
    }

    pub fn raw_concat() -> Self {
        Self {
            edge_mode: EdgeMode::RawConcat,
            kernel_sizes: vec![22, 64, 96, 256],
            ..Self::rotation_invariant()
        }
    }

    /// Same shape with different latent width and kernel hidden layers.
    pub fn with_widths(edge_mode: EdgeMode, m: usize, hidden: &[usize]) -> Self {
        let mut kernel_sizes = vec![edge_mode.dim()];
        kernel_sizes.extend_from_slice(hidden);
        kernel_sizes.push(m * m);
        Self {
            m,
            depth: 2,
            edge_mode,
            kernel_sizes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.depth == 0 {
            return Err(Error::InvalidArgument("GKN width and depth must be positive".into()));
        }
        if self.kernel_sizes.len() < 3 {
            return Err(Error::InvalidArgument(
                "the kernel network needs at least one hidden layer".into(),
            ));
        }
        if self.kernel_sizes[0] != self.edge_mode.dim() {
            return Err(Error::dim("kernel input", self.edge_mode.dim(), self.kernel_sizes[0]));
        }
        let out = *self.kernel_sizes.last().expect("checked length");
        if out != self.m * self.m {
            return Err(Error::dim("kernel output", self.m * self.m, out));
        }
        Ok(())
    }

    /// Parameter count of a network built from this config.
    pub fn param_count(&self) -> usize {
        crate::numnet::dense_param_count(&self.kernel_sizes)
            + crate::numnet::dense_param_count(&[C_DIM, self.m])
            + crate::numnet::dense_param_count(&[self.m, self.m])
            + crate::numnet::dense_param_count(&[self.m, 1])
    }
}

/// Learnable parameters. Each block is a single-layer linear [`Mlp`] except
/// the kernel network.
#[derive(Debug, Clone, PartialEq)]
pub struct GknParams<T> {
    /// `Z`, 7 -> m.
    pub lift: Mlp<T>,
    /// `W`, m -> m, shared by every graph convolution.
    pub mix: Mlp<T>,
    /// Edge feature -> flattened `m x m` kernel.
    pub kernel: Mlp<T>,
    /// `F`, m -> 1.
    pub readout: Mlp<T>,
}

impl<T: Scalar> GknParams<T> {
    pub fn new<R: Rng + ?Sized>(config: &GknConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let m = config.m;
        Ok(Self {
            lift: Mlp::new(&[C_DIM, m], Activation::Linear, rng)?,
            mix: Mlp::new(&[m, m], Activation::Linear, rng)?,
            kernel: Mlp::new(&config.kernel_sizes, Activation::Linear, rng)?,
            readout: Mlp::new(&[m, 1], Activation::Linear, rng)?,
        })
    }

    /// Checks that the blocks have the shapes `config` describes.
    pub fn check(&self, config: &GknConfig) -> Result<()> {
        config.validate()?;
        let m = config.m;
        let shape = |name: &'static str, mlp: &Mlp<T>, sizes: &[usize]| {
            if mlp.layer_sizes() != sizes {
                return Err(Error::InvalidArgument(format!(
                    "GKN block {name} has sizes {:?}, expected {sizes:?}",
                    mlp.layer_sizes()
                )));
            }
            Ok(())
        };
        shape("lift", &self.lift, &[C_DIM, m])?;
        shape("mix", &self.mix, &[m, m])?;
        shape("kernel", &self.kernel, &config.kernel_sizes)?;
        shape("readout", &self.readout, &[m, 1])?;
        let last = self.kernel.layer(self.kernel.num_layers() - 1).activation();
        let linear = [&self.lift, &self.mix, &self.readout]
            .iter()
            .all(|b| b.layer(0).activation() == Activation::Linear);
        if last != Activation::Linear || !linear {
            return Err(Error::InvalidArgument(
                "GKN affine blocks and the kernel output layer must be linear".into(),
            ));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.num_params()
    }

    pub fn zero_grads(&self) -> GknGrads<T> {
        GknGrads {
            lift: self.lift.zero_grads(),
            mix: self.mix.zero_grads(),
            kernel: self.kernel.zero_grads(),
            readout: self.readout.zero_grads(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> GknParams<U> {
        GknParams {
            lift: self.lift.cast(),
            mix: self.mix.cast(),
            kernel: self.kernel.cast(),
            readout: self.readout.cast(),
        }
    }

    /// Checkpoint with sections `Z`, `W`, `kernel`, `F`.
    pub fn to_checkpoint(&self, config: &GknConfig) -> Checkpoint {
        let mut ck = Checkpoint::new("gkn");
        ck.set("m", config.m);
        ck.set("depth", config.depth);
        ck.set("edge_mode", config.edge_mode.tag());
        ck.set("scalar", T::NAME);
        ck.push_section("Z", &self.lift);
        ck.push_section("W", &self.mix);
        ck.push_section("kernel", &self.kernel);
        ck.push_section("F", &self.readout);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, GknConfig)> {
        if ck.model != "gkn" {
            return Err(Error::InvalidArgument(format!("checkpoint holds `{}`, not gkn", ck.model)));
        }
        let kernel: Mlp<T> = ck.section("kernel")?;
        let config = GknConfig {
            m: ck.get_parsed("m")?,
            depth: ck.get_parsed("depth")?,
            edge_mode: EdgeMode::from_tag(ck.get("edge_mode")?)?,
            kernel_sizes: kernel.layer_sizes(),
        };
        let params = Self {
            lift: ck.section("Z")?,
            mix: ck.section("W")?,
            kernel,
            readout: ck.section("F")?,
        };
        params.check(&config)?;
        Ok((params, config))
    }
}

impl<T: Scalar> Parameters<T> for GknParams<T> {
    fn blocks(&self) -> Vec<&[T]> {
        let mut out = self.lift.blocks();
        out.extend(self.mix.blocks());
        out.extend(self.kernel.blocks());
        out.extend(self.readout.blocks());
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.lift.blocks_mut();
        out.extend(self.mix.blocks_mut());
        out.extend(self.kernel.blocks_mut());
        out.extend(self.readout.blocks_mut());
        out
    }
}

/// Gradients with the same block order as [`GknParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GknGrads<T> {
    pub lift: MlpGrads<T>,
    pub mix: MlpGrads<T>,
    pub kernel: MlpGrads<T>,
    pub readout: MlpGrads<T>,
}

impl<T: Scalar> GknGrads<T> {
    pub fn scale(&mut self, factor: T) {
        self.lift.scale(factor);
        self.mix.scale(factor);
        self.kernel.scale(factor);
        self.readout.scale(factor);
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.lift.add_assign(&other.lift);
        self.mix.add_assign(&other.mix);
        self.kernel.add_assign(&other.kernel);
        self.readout.add_assign(&other.readout);
    }

    pub fn is_zero(&self) -> bool {
        self.lift.is_zero() && self.mix.is_zero() && self.kernel.is_zero() && self.readout.is_zero()
    }
}

impl<T: Scalar> Parameters<T> for GknGrads<T> {
    fn blocks(&self) -> Vec<&[T]> {
        let mut out = self.lift.blocks();
        out.extend(self.mix.blocks());
        out.extend(self.kernel.blocks());
        out.extend(self.readout.blocks());
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.lift.blocks_mut();
        out.extend(self.mix.blocks_mut());
        out.extend(self.kernel.blocks_mut());
        out.extend(self.readout.blocks_mut());
        out
    }
}

/// `[x_i, x_j, u_i, u_j, c_i, c_j]`.
pub fn edge_features_raw<T: Scalar>(qi: &[T], qj: &[T]) -> [T; 22] {
    let mut e = [T::zero(); 22];
    e[0..2].copy_from_slice(&qi[0..2]);
    e[2..4].copy_from_slice(&qj[0..2]);
    e[4..6].copy_from_slice(&qi[2..4]);
    e[6..8].copy_from_slice(&qj[2..4]);
    e[8..15].copy_from_slice(&qi[4..11]);
    e[15..22].copy_from_slice(&qj[4..11]);
    e
}

/// `[x_i . x_j, u_i . u_j, c_i, c_j]`.
pub fn edge_features_ri<T: Scalar>(qi: &[T], qj: &[T]) -> [T; 16] {
    let mut e = [T::zero(); 16];
    e[0] = qi[0] * qj[0] + qi[1] * qj[1];
    e[1] = qi[2] * qj[2] + qi[3] * qj[3];
    e[2..9].copy_from_slice(&qi[4..11]);
    e[9..16].copy_from_slice(&qj[4..11]);
    e
}

/// All `n^2` edge features, row `i n + j` holding `e_ij`.
pub fn edge_block<T: Scalar>(q: ArrayView2<T>, mode: EdgeMode) -> Array2<T> {
    let n = q.nrows();
    let d = mode.dim();
    let rows: Vec<Vec<T>> = q.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut out = Array2::zeros((n * n, d));
    for (i, qi) in rows.iter().enumerate() {
        for (j, qj) in rows.iter().enumerate() {
            let mut row = out.row_mut(i * n + j);
            let dst = row.as_slice_mut().expect("standard layout");
            match mode {
                EdgeMode::RotationInvariant => dst.copy_from_slice(&edge_features_ri(qi, qj)),
                EdgeMode::RawConcat => dst.copy_from_slice(&edge_features_raw(qi, qj)),
            }
        }
    }
    out
}

struct LayerCache<T> {
    z_in: Array2<T>,
    mix: MlpCache<T>,
    /// Row `i` is `vec((1/n) z^T H_i)`.
    t: Array2<T>,
    zbar: Array1<T>,
    pre: Array2<T>,
}

/// Intermediates of one forward pass, for the canonically ordered cloud.
pub struct GknCache<T> {
    n: usize,
    lift: MlpCache<T>,
    kernel: MlpCache<T>,
    layers: Vec<LayerCache<T>>,
    readout: MlpCache<T>,
}

impl<T: Scalar> GknCache<T> {
    pub fn n(&self) -> usize {
        self.n
    }
}

fn check_cloud<T: Scalar>(q: ArrayView2<T>) -> Result<()> {
    if q.ncols() != Q_DIM {
        return Err(Error::dim("cloud columns", Q_DIM, q.ncols()));
    }
    if q.nrows() == 0 {
        return Err(Error::InvalidArgument("empty cloud".into()));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input cloud".into()));
    }
    Ok(())
}

fn check_finite<T: Scalar>(a: &Array2<T>, what: impl FnOnce() -> String) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what()))
    }
}

fn last_layer_views<T: Scalar>(kernel: &Mlp<T>, m: usize) -> (ArrayView2<'_, T>, ArrayView2<'_, T>) {
    let last = kernel.layer(kernel.num_layers() - 1);
    let hd = last.in_dim();
    let w3r = ArrayView2::from_shape((m, m * hd), last.weights().as_slice().expect("standard layout"))
        .expect("kernel output is m^2");
    let b3 = ArrayView2::from_shape((m, m), last.bias().as_slice().expect("standard layout"))
        .expect("kernel output is m^2");
    (w3r, b3)
}

/// Canonically ordered cloud with its edge block, ready for
/// [`gkn_forward_prepared`].
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCloud<T> {
    pub c: Array2<T>,
    pub edges: Array2<T>,
}

impl<T: Scalar> PreparedCloud<T> {
    pub fn new(q: ArrayView2<T>, mode: EdgeMode) -> Result<Self> {
        check_cloud(q)?;
        let q = canonical_rows(q);
        let edges = edge_block(q.view(), mode);
        Ok(Self {
            c: q.slice(s![.., 4..]).to_owned(),
            edges,
        })
    }

    pub fn n(&self) -> usize {
        self.c.nrows()
    }
}

pub fn gkn_forward<T: Scalar>(
    params: &GknParams<T>,
    config: &GknConfig,
    q: ArrayView2<T>,
) -> Result<(T, GknCache<T>)> {
    let prepared = PreparedCloud::new(q, config.edge_mode)?;
    gkn_forward_prepared(params, config, &prepared)
}

pub fn gkn_forward_prepared<T: Scalar>(
    params: &GknParams<T>,
    config: &GknConfig,
    cloud: &PreparedCloud<T>,
) -> Result<(T, GknCache<T>)> {
    let n = cloud.n();
    let m = config.m;
    if cloud.edges.dim() != (n * n, config.edge_mode.dim()) {
        return Err(Error::dim("edge block rows", n * n, cloud.edges.nrows()));
    }
    let inv_n = T::one() / T::of(n as f64);

    let lift = params.lift.forward_batch(cloud.c.view())?;
    let mut z = lift.output().clone();
    check_finite(&z, || "lift Z".into())?;

    let kl = params.kernel.num_layers();
    let kernel = params.kernel.forward_batch_prefix(cloud.edges.view(), kl - 1)?;
    check_finite(kernel.output(), || "kernel network hidden layers".into())?;
    let h = kernel.output();
    let hd = h.ncols();
    let (w3r, b3) = last_layer_views(&params.kernel, m);

    let mut layers = Vec::with_capacity(config.depth);
    for l in 0..config.depth {
        let mut t = Array2::zeros((n, m * hd));
        for i in 0..n {
            let hi = h.slice(s![i * n..(i + 1) * n, ..]);
            let mut row = t.row_mut(i);
            let mut ti: ArrayViewMut2<T> = row
                .view_mut()
                .into_shape_with_order((m, hd))
                .expect("contiguous row");
            general_mat_mul(inv_n, &z.t(), &hi, T::zero(), &mut ti);
        }
        let zbar = z.sum_axis(Axis(0)) * inv_n;
        let mix = params.mix.forward_batch(z.view())?;
        let mut pre = t.dot(&w3r.t());
        pre += &b3.dot(&zbar);
        pre += mix.output();
        check_finite(&pre, || format!("graph convolution {}", l + 1))?;
        let next = pre.mapv(|v| v.max(T::zero()));
        layers.push(LayerCache {
            z_in: z,
            mix,
            t,
            zbar,
            pre,
        });
        z = next;
    }

    let zbar = (z.sum_axis(Axis(0)) * inv_n).insert_axis(Axis(0));
    let readout = params.readout.forward_batch(zbar.view())?;
    let tau = readout.output()[[0, 0]];
    if !tau.is_finite() {
        return Err(Error::NonFinite("readout F".into()));
    }
    Ok((
        tau,
        GknCache {
            n,
            lift,
            kernel,
            layers,
            readout,
        },
    ))
}

pub fn gkn_backward<T: Scalar>(
    params: &GknParams<T>,
    config: &GknConfig,
    cache: &GknCache<T>,
    dtau: T,
) -> Result<GknGrads<T>> {
    let mut grads = params.zero_grads();
    gkn_backward_into(params, config, cache, dtau, &mut grads)?;
    Ok(grads)
}

/// Accumulates `dtau * d tau / d params` into `grads`.
pub fn gkn_backward_into<T: Scalar>(
    params: &GknParams<T>,
    config: &GknConfig,
    cache: &GknCache<T>,
    dtau: T,
    grads: &mut GknGrads<T>,
) -> Result<()> {
    if cache.layers.len() != config.depth {
        return Err(Error::StaleCache("cache depth differs from the config"));
    }
    let n = cache.n;
    let m = config.m;
    let inv_n = T::one() / T::of(n as f64);
    let h = cache.kernel.output();
    let hd = h.ncols();
    let (w3r, b3) = last_layer_views(&params.kernel, m);

    let dy = Array2::from_elem((1, 1), dtau);
    let dzbar = params
        .readout
        .backward_batch_into(&cache.readout, dy.view(), &mut grads.readout, true)?
        .expect("dx requested");
    let mut dz = Array2::zeros((n, m));
    dz += &(dzbar * inv_n);

    let kl = params.kernel.num_layers();
    let mut dh = Array2::<T>::zeros((n * n, hd));
    for lc in cache.layers.iter().rev() {
        let mut dpre = dz;
        Zip::from(&mut dpre).and(&lc.pre).for_each(|d, &p| {
            if p <= T::zero() {
                *d = T::zero();
            }
        });
        let mut dz_prev = params
            .mix
            .backward_batch_into(&lc.mix, dpre.view(), &mut grads.mix, true)?
            .expect("dx requested");

        let colsum = dpre.sum_axis(Axis(0));
        {
            let gw = grads.kernel.weights[kl - 1]
                .as_slice_mut()
                .expect("standard layout");
            let mut gw3r = ArrayViewMut2::from_shape((m, m * hd), gw).expect("kernel output is m^2");
            general_mat_mul(T::one(), &dpre.t(), &lc.t, T::one(), &mut gw3r);
            let gb = grads.kernel.biases[kl - 1]
                .as_slice_mut()
                .expect("standard layout");
            for a in 0..m {
                for b in 0..m {
                    gb[a * m + b] += colsum[a] * lc.zbar[b];
                }
            }
        }
        let dzbar = b3.t().dot(&colsum) * inv_n;
        dz_prev += &dzbar;

        let dt = dpre.dot(&w3r);
        for i in 0..n {
            let dti = dt
                .row(i)
                .into_shape_with_order((m, hd))
                .expect("contiguous row");
            let hi = h.slice(s![i * n..(i + 1) * n, ..]);
            general_mat_mul(inv_n, &hi, &dti.t(), T::one(), &mut dz_prev);
            let mut dhi = dh.slice_mut(s![i * n..(i + 1) * n, ..]);
            general_mat_mul(inv_n, &lc.z_in, &dti, T::one(), &mut dhi);
        }
        dz = dz_prev;
    }

    params
        .lift
        .backward_batch_into(&cache.lift, dz.view(), &mut grads.lift, false)?;
    params
        .kernel
        .backward_batch_into(&cache.kernel, dh.view(), &mut grads.kernel, false)?;
    Ok(())
}

/// Edge features of a whole dataset, materialised once.
#[derive(Debug, Clone)]
pub struct EdgeStore<T> {
    pub n: usize,
    pub d: usize,
    pub clouds: Vec<PreparedCloud<T>>,
}

impl<T> EdgeStore<T> {
    /// Bytes of edge features held, `samples n^2 d 8`.
    pub fn payload_bytes(&self) -> u64 {
        edge_payload_bytes(self.clouds.len(), self.n, self.d)
    }
}

pub fn edge_payload_bytes(samples: usize, n: usize, d: usize) -> u64 {
    samples as u64 * (n as u64 * n as u64) * d as u64 * 8
}

/// Materialises the edge block of every sample. Fails without allocating
/// when the payload would exceed `cap_bytes`.
pub fn gkn_preprocess<T: Scalar>(
    dataset: &Dataset,
    config: &GknConfig,
    cap_bytes: u64,
) -> Result<EdgeStore<T>> {
    use rayon::prelude::*;
    let n = dataset.meta.stencil;
    let d = config.edge_mode.dim();
    let needed = edge_payload_bytes(dataset.len(), n, d);
    if needed > cap_bytes {
        return Err(Error::MemoryBudget {
            needed,
            cap: cap_bytes,
        });
    }
    let clouds = dataset
        .samples
        .par_iter()
        .map(|s| PreparedCloud::new(s.q.mapv(T::of).view(), config.edge_mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(EdgeStore { n, d, clouds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((n, Q_DIM), |_| rng.random_range(-1.0..1.0))
    }

    fn rotate(q: &Array2<f64>, beta: f64) -> Array2<f64> {
        let (sn, cs) = beta.sin_cos();
        let mut out = q.clone();
        for mut row in out.rows_mut() {
            for k in [0, 2] {
                let (x, y) = (row[k], row[k + 1]);
                row[k] = cs * x - sn * y;
                row[k + 1] = sn * x + cs * y;
            }
        }
        out
    }

    fn small_config(mode: EdgeMode) -> GknConfig {
        GknConfig::with_widths(mode, 3, &[5, 4])
    }

    /// Perturbs every parameter so biases are nonzero and relus mixed.
    fn jitter(p: &mut GknParams<f64>, rng: &mut ChaCha8Rng) {
        for b in p.blocks_mut() {
            for v in b {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }

    #[test]
    fn default_parameter_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = GknConfig::default();
        let p = GknParams::<f64>::new(&cfg, &mut rng).unwrap();
        assert_eq!(p.param_count(), 32577);
        assert_eq!(cfg.param_count(), 32577);
        let raw = GknConfig::raw_concat();
        assert_eq!(raw.param_count(), 32577 + 6 * 64);
    }

    #[test]
    fn config_rejects_mismatched_kernel() {
        let mut cfg = GknConfig::default();
        cfg.kernel_sizes = vec![16, 64, 96, 484];
        assert!(cfg.validate().is_err());
        cfg.kernel_sizes = vec![22, 64, 96, 256];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn edge_features_examples() {
        let q: Vec<f64> = (1..=11).map(f64::from).collect();
        let raw = edge_features_raw(&q, &q);
        assert_eq!(&raw[..8], &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0]);
        let ri = edge_features_ri(&q, &q);
        assert_eq!(ri[0], 5.0);
        assert_eq!(ri[1], 25.0);
        assert_eq!(&ri[2..9], &q[4..]);
        assert_eq!(&ri[9..], &q[4..]);
        assert!(edge_features_raw(&[0.0; 11], &[0.0; 11]).iter().all(|&v| v == 0.0));

        let a = [1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let b = [0.0, 3.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let e = edge_features_ri(&a, &b);
        assert_eq!((e[0], e[1]), (0.0, 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pair = random_cloud(2, &mut rng);
        let rot = rotate(&pair, 0.8);
        let e0 = edge_features_raw(pair.row(0).as_slice().unwrap(), pair.row(1).as_slice().unwrap());
        let e1 = edge_features_raw(rot.row(0).as_slice().unwrap(), rot.row(1).as_slice().unwrap());
        assert!(e0[..8].iter().zip(&e1[..8]).any(|(a, b)| (a - b).abs() > 1e-3));
        assert_eq!(&e0[8..], &e1[8..]);
        let r0 = edge_features_ri(pair.row(0).as_slice().unwrap(), pair.row(1).as_slice().unwrap());
        let r1 = edge_features_ri(rot.row(0).as_slice().unwrap(), rot.row(1).as_slice().unwrap());
        for (a, b) in r0.iter().zip(&r1) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    /// Straight-line single-node recursion with every matrix product
    /// written as explicit loops.
    fn single_node_oracle(p: &GknParams<f64>, cfg: &GknConfig, q: &[f64]) -> f64 {
        fn affine(mlp: &Mlp<f64>, k: usize, x: &[f64]) -> Vec<f64> {
            let l = mlp.layer(k);
            let (w, b) = (l.weights(), l.bias());
            (0..l.out_dim())
                .map(|o| b[o] + (0..l.in_dim()).map(|i| w[[o, i]] * x[i]).sum::<f64>())
                .collect()
        }
        let m = cfg.m;
        let e: Vec<f64> = match cfg.edge_mode {
            EdgeMode::RotationInvariant => edge_features_ri(q, q).to_vec(),
            EdgeMode::RawConcat => edge_features_raw(q, q).to_vec(),
        };
        let mut a = e;
        for k in 0..p.kernel.num_layers() {
            a = affine(&p.kernel, k, &a);
            if k + 1 < p.kernel.num_layers() {
                a.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        let kmat = |r: usize, c: usize| a[r * m + c];
        let mut z = affine(&p.lift, 0, &q[4..]);
        for _ in 0..cfg.depth {
            let wz = affine(&p.mix, 0, &z);
            z = (0..m)
                .map(|r| (wz[r] + (0..m).map(|c| kmat(r, c) * z[c]).sum::<f64>()).max(0.0))
                .collect();
        }
        affine(&p.readout, 0, &z)[0]
    }

    #[test]
    fn single_node_matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for mode in [EdgeMode::RotationInvariant, EdgeMode::RawConcat] {
            let cfg = match mode {
                EdgeMode::RotationInvariant => GknConfig::rotation_invariant(),
                EdgeMode::RawConcat => GknConfig::raw_concat(),
            };
            for _ in 0..5 {
                let mut p = GknParams::<f64>::new(&cfg, &mut rng).unwrap();
                jitter(&mut p, &mut rng);
                let q = random_cloud(1, &mut rng);
                let (tau, _) = gkn_forward(&p, &cfg, q.view()).unwrap();
                let oracle = single_node_oracle(&p, &cfg, q.row(0).as_slice().unwrap());
                assert!((tau - oracle).abs() < 1e-12 * oracle.abs().max(1.0), "{tau} vs {oracle}");
            }
        }
    }

    /// Dense reference that materialises every `m x m` kernel.
    fn dense_forward(p: &GknParams<f64>, cfg: &GknConfig, q: &Array2<f64>) -> f64 {
        let n = q.nrows();
        let m = cfg.m;
        let e = edge_block(q.view(), cfg.edge_mode);
        let k = p.kernel.forward_batch(e.view()).unwrap().into_output();
        let mut z = p.lift.forward_batch(q.slice(s![.., 4..])).unwrap().into_output();
        for _ in 0..cfg.depth {
            let wz = p.mix.forward_batch(z.view()).unwrap().into_output();
            let mut next = Array2::zeros((n, m));
            for i in 0..n {
                for a in 0..m {
                    let mut acc = 0.0;
                    for j in 0..n {
                        for b in 0..m {
                            acc += k[[i * n + j, a * m + b]] * z[[j, b]];
                        }
                    }
                    next[[i, a]] = (wz[[i, a]] + acc / n as f64).max(0.0);
                }
            }
            z = next;
        }
        let zbar = z.mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
        p.readout.forward_batch(zbar.view()).unwrap().output()[[0, 0]]
    }

    #[test]
    fn factorised_kernel_matches_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cfg = GknConfig::default();
        let mut p = GknParams::<f64>::new(&cfg, &mut rng).unwrap();
        jitter(&mut p, &mut rng);
        let q = canonical_rows(random_cloud(7, &mut rng).view());
        let (tau, _) = gkn_forward(&p, &cfg, q.view()).unwrap();
        let reference = dense_forward(&p, &cfg, &q);
        assert!((tau - reference).abs() < 1e-12 * reference.abs().max(1.0));
    }

    fn fd_check(mode: EdgeMode, n: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = small_config(mode);
        let mut p = GknParams::<f64>::new(&cfg, &mut rng).unwrap();
        jitter(&mut p, &mut rng);
        let q = random_cloud(n, &mut rng);
        let (_, cache) = gkn_forward(&p, &cfg, q.view()).unwrap();
        let g = gkn_backward(&p, &cfg, &cache, 1.0).unwrap();
        let analytic: Vec<Vec<f64>> = g.blocks().iter().map(|b| b.to_vec()).collect();
        let h = 1e-6;
        for (bi, block) in analytic.iter().enumerate() {
            let mut fd = vec![0.0; block.len()];
            for k in 0..block.len() {
                let mut pp = p.clone();
                pp.blocks_mut()[bi][k] += h;
                let up = gkn_forward(&pp, &cfg, q.view()).unwrap().0;
                let mut pm = p.clone();
                pm.blocks_mut()[bi][k] -= h;
                let down = gkn_forward(&pm, &cfg, q.view()).unwrap().0;
                fd[k] = (up - down) / (2.0 * h);
            }
            let scale = block.iter().chain(&fd).fold(0.0f64, |a, v| a.max(v.abs()));
            let err = block.iter().zip(&fd).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            assert!(err <= 1e-6 * scale, "block {bi}: err {err}, scale {scale}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (n, seed) in [(1, 1), (2, 2), (3, 3), (5, 4)] {
            fd_check(EdgeMode::RotationInvariant, n, seed);
        }
        fd_check(EdgeMode::RawConcat, 4, 5);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = small_config(EdgeMode::RotationInvariant);
        let p = GknParams::<f64>::new(&cfg, &mut rng).unwrap();
        let q = random_cloud(4, &mut rng);
        let (_, cache) = gkn_forward(&p, &cfg, q.view()).unwrap();
        assert!(gkn_backward(&p, &cfg, &cache, 0.0).unwrap().is_zero());
    }

    #[test]
    fn permutation_is_exact_and_rotation_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = GknConfig::default();
        let p = GknParams::<f64>::new(&cfg, &mut rng).unwrap();
        let q = random_cloud(20, &mut rng);
        let (tau, _) = gkn_forward(&p, &cfg, q.view()).unwrap();
        let mut order: Vec<usize> = (0..20).collect();
        order.reverse();
        order.swap(3, 11);
        let perm = q.select(Axis(0), &order);
        assert_eq!(gkn_forward(&p, &cfg, perm.view()).unwrap().0.to_bits(), tau.to_bits());
        for beta in [0.3, 1.0, std::f64::consts::FRAC_PI_2, 3.0] {
            let rot = rotate(&q, beta);
            let t = gkn_forward(&p, &cfg, rot.view()).unwrap().0;
            assert!((t - tau).abs() < 1e-12, "beta {beta}: {}", (t - tau).abs());
        }
    }

    #[test]
    fn raw_mode_sees_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = GknConfig::raw_concat();
        let p = GknParams::<f64>::new(&cfg, &mut rng).unwrap();
        let q = random_cloud(10, &mut rng);
        let a = gkn_forward(&p, &cfg, q.view()).unwrap().0;
        let b = gkn_forward(&p, &cfg, rotate(&q, 1.2).view()).unwrap().0;
        assert!((a - b).abs() > 1e-8);
    }

    #[test]
    fn duplicated_rows_contribute_equally() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = small_config(EdgeMode::RotationInvariant);
        let p = GknParams::<f64>::new(&cfg, &mut rng).unwrap();
        let q = random_cloud(1, &mut rng);
        let twice = ndarray::concatenate![Axis(0), q, q];
        let (_, c1) = gkn_forward(&p, &cfg, q.view()).unwrap();
        let (_, c2) = gkn_forward(&p, &cfg, twice.view()).unwrap();
        let g1 = gkn_backward(&p, &cfg, &c1, 1.0).unwrap();
        let g2 = gkn_backward(&p, &cfg, &c2, 1.0).unwrap();
        for (a, b) in g1.blocks().iter().zip(g2.blocks()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn non_finite_input_and_stale_cache_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = small_config(EdgeMode::RotationInvariant);
        let mut p = GknParams::<f64>::new(&cfg, &mut rng).unwrap();
        let mut q = random_cloud(3, &mut rng);
        let (_, cache) = gkn_forward(&p, &cfg, q.view()).unwrap();
        p.blocks_mut();
        assert!(matches!(gkn_backward(&p, &cfg, &cache, 1.0), Err(Error::StaleCache(_))));
        q[[1, 5]] = f64::NAN;
        assert!(matches!(gkn_forward(&p, &cfg, q.view()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cfg = GknConfig::raw_concat();
        let p = GknParams::<f64>::new(&cfg, &mut rng).unwrap();
        let bytes = p.to_checkpoint(&cfg).to_bytes();
        let (back, bcfg) = GknParams::<f64>::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(bcfg, cfg);
        let ck = Checkpoint::from_bytes(&bytes).unwrap();
        let names: Vec<&str> = ck
            .sections
            .iter()
            .map(|(n, _)| n.as_str())
            .collect();
        assert_eq!(names, ["Z", "W", "kernel", "F"]);
    }

    #[test]
    fn preprocess_payload_and_cap() {
        use crate::cloudgen::{DatasetMeta, RegionOfInfluence, VectorCloud};
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let samples = (0..4)
            .map(|_| VectorCloud {
                q: random_cloud(6, &mut rng),
                tau: 1.0,
                center: [0.0, 0.0],
                ellipse: RegionOfInfluence {
                    l1: 1.0,
                    l2: 1.0,
                    axis: [1.0, 0.0],
                    center: [0.0, 0.0],
                },
                source: 0,
                cell: (0, 0),
            })
            .collect();
        let ds = Dataset {
            samples,
            meta: DatasetMeta {
                stencil: 6,
                eps: 0.01,
                nu: 0.02,
                zeta: 1.0,
                seed: 0,
                fields: vec![],
            },
        };
        let cfg = GknConfig::default();
        let store = gkn_preprocess::<f64>(&ds, &cfg, u64::MAX).unwrap();
        assert_eq!(store.payload_bytes(), 4 * 36 * 16 * 8);
        assert_eq!(edge_payload_bytes(100, 50, 16), 100 * 50 * 50 * 16 * 8);
        assert_eq!(edge_payload_bytes(100, 100, 16), 4 * edge_payload_bytes(100, 50, 16));
        assert!(matches!(
            gkn_preprocess::<f64>(&ds, &cfg, 1000),
            Err(Error::MemoryBudget { .. })
        ));
        let p = GknParams::<f64>::new(&cfg, &mut rng).unwrap();
        let direct = gkn_forward(&p, &cfg, ds.samples[2].q.view()).unwrap().0;
        let stored = gkn_forward_prepared(&p, &cfg, &store.clouds[2]).unwrap().0;
        assert_eq!(direct.to_bits(), stored.to_bits());
    }

    #[test]
    fn single_precision_tracks_double() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let cfg = GknConfig::default();
        let p = GknParams::<f64>::new(&cfg, &mut rng).unwrap();
        let q = random_cloud(8, &mut rng);
        let a = gkn_forward(&p, &cfg, q.view()).unwrap().0;
        let b = gkn_forward(&p.cast::<f32>(), &cfg, q.mapv(|v| v as f32).view()).unwrap().0;
        assert!((a - b as f64).abs() < 1e-4 * a.abs().max(1.0));
    }
}
