//! Vector cloud neural network.
//!
//! The scalar columns of each point go through an embedding network to give
//! `G` (n x m). Projections of the cloud onto that basis,
//!
//! ```text
//! P = (1/n) G^T Q          (m x 11)
//! D = P P*^T               (m x m*),   P* = first m* rows of P
//! ```
//!
//! equal `(1/n^2) G^T Q Q^T G*` without forming the `n x n` Gram matrix, and
//! only depend on the cloud through `Q Q^T`. The split variant keeps the
//! position, velocity and scalar blocks apart:
//!
//! ```text
//! D1 = Px Px*^T,   D2 = Pu Pu*^T,   D3 = (1/n) G^T C
//! ```
//!
//! The fitting network maps the row-major flattening of `D` (or of
//! `D1 | D2 | D3`) to the scalar output.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gkn::{C_DIM, Q_DIM};
use crate::numnet::{
    canonical_rows, dense_param_count, Activation, Checkpoint, Mlp, MlpCache, MlpGrads, Parameters,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VcnnVariant {
    SingleD,
    SplitD,
}

impl VcnnVariant {
    pub const fn tag(self) -> &'static str {
        match self {
            VcnnVariant::SingleD => "single_d",
            VcnnVariant::SplitD => "split_d",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "single_d" => Ok(VcnnVariant::SingleD),
            "split_d" => Ok(VcnnVariant::SplitD),
            other => Err(Error::InvalidArgument(format!("unknown VCNN variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct VcnnConfig {
    pub m: usize,
    pub m_star: usize,
    pub variant: VcnnVariant,
    /// Input first; the input must be 7 and the output `m`.
    pub embedding_sizes: Vec<usize>,
    /// Input first; the input must match [`VcnnConfig::feature_len`] and the
    /// output must be 1.
    pub fitting_sizes: Vec<usize>,
}

impl Default for VcnnConfig {
    fn default() -> Self {
        Self::single_d()
    }
}

impl VcnnConfig {
    pub fn single_d() -> Self {
        Self {
            m: 64,
            m_star: 4,
            variant: VcnnVariant::SingleD,
            embedding_sizes: vec![7, 32, 64, 64],
            fitting_sizes: vec![256, 128, 1],
        }
    }

    pub fn split_d() -> Self {
        Self {
            variant: VcnnVariant::SplitD,
            fitting_sizes: vec![960, 128, 1],
            ..Self::single_d()
        }
    }

    /// Config with the given embedding hidden widths, basis width and
    /// fitting hidden widths.
    pub fn with_widths(variant: VcnnVariant, embed_hidden: &[usize], m: usize, m_star: usize, fit_hidden: &[usize]) -> Self {
        let mut embedding_sizes = vec![C_DIM];
        embedding_sizes.extend_from_slice(embed_hidden);
        embedding_sizes.push(m);
        let mut cfg = Self {
            m,
            m_star,
            variant,
            embedding_sizes,
            fitting_sizes: vec![],
        };
        cfg.fitting_sizes.push(cfg.feature_len());
        cfg.fitting_sizes.extend_from_slice(fit_hidden);
        cfg.fitting_sizes.push(1);
        cfg
    }

    /// Length of the flattened invariant features.
    pub fn feature_len(&self) -> usize {
        match self.variant {
            VcnnVariant::SingleD => self.m * self.m_star,
            VcnnVariant::SplitD => 2 * self.m * self.m_star + self.m * C_DIM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m_star == 0 || self.m_star > self.m {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= m_star <= m, got m = {}, m_star = {}",
                self.m, self.m_star
            )));
        }
        let (e, f) = (&self.embedding_sizes, &self.fitting_sizes);
        if e.len() < 2 || e[0] != C_DIM || e[e.len() - 1] != self.m {
            return Err(Error::InvalidArgument(format!(
                "embedding sizes {e:?} must run from {C_DIM} to m = {}",
                self.m
            )));
        }
        if f.len() < 2 || f[0] != self.feature_len() || f[f.len() - 1] != 1 {
            return Err(Error::InvalidArgument(format!(
                "fitting sizes {f:?} must run from {} to 1",
                self.feature_len()
            )));
        }
        Ok(())
    }

    pub fn embedding_param_count(&self) -> usize {
        dense_param_count(&self.embedding_sizes)
    }

    pub fn fitting_param_count(&self) -> usize {
        dense_param_count(&self.fitting_sizes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VcnnParams<T> {
    /// Scalars -> basis row, relu on every layer.
    pub embedding: Mlp<T>,
    /// Invariant features -> output, linear last layer.
    pub fitting: Mlp<T>,
}

impl<T: Scalar> VcnnParams<T> {
    pub fn new<R: Rng + ?Sized>(config: &VcnnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let params = Self {
            embedding: Mlp::with_activations(&config.embedding_sizes, Activation::Relu, Activation::Relu, rng)?,
            fitting: Mlp::new(&config.fitting_sizes, Activation::Linear, rng)?,
        };
        params.check(config)?;
        Ok(params)
    }

    pub fn check(&self, config: &VcnnConfig) -> Result<()> {
        config.validate()?;
        if self.embedding.layer_sizes() != config.embedding_sizes {
            return Err(Error::InvalidArgument(format!(
                "embedding sizes {:?} differ from config {:?}",
                self.embedding.layer_sizes(),
                config.embedding_sizes
            )));
        }
        if self.fitting.layer_sizes() != config.fitting_sizes {
            return Err(Error::InvalidArgument(format!(
                "fitting sizes {:?} differ from config {:?} ({} variant)",
                self.fitting.layer_sizes(),
                config.fitting_sizes,
                config.variant.tag()
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.num_params()
    }

    pub fn zero_grads(&self) -> VcnnGrads<T> {
        VcnnGrads {
            embedding: self.embedding.zero_grads(),
            fitting: self.fitting.zero_grads(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> VcnnParams<U> {
        VcnnParams {
            embedding: self.embedding.cast(),
            fitting: self.fitting.cast(),
        }
    }

    /// Checkpoint with sections `embedding`, `fitting`.
    pub fn to_checkpoint(&self, config: &VcnnConfig) -> Checkpoint {
        let mut ck = Checkpoint::new("vcnn");
        ck.set("m", config.m);
        ck.set("m_star", config.m_star);
        ck.set("variant", config.variant.tag());
        ck.set("scalar", T::NAME);
        ck.push_section("embedding", &self.embedding);
        ck.push_section("fitting", &self.fitting);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, VcnnConfig)> {
        if ck.model != "vcnn" {
            return Err(Error::InvalidArgument(format!("checkpoint holds `{}`, not vcnn", ck.model)));
        }
        let params = Self {
            embedding: ck.section("embedding")?,
            fitting: ck.section("fitting")?,
        };
        let config = VcnnConfig {
            m: ck.get_parsed("m")?,
            m_star: ck.get_parsed("m_star")?,
            variant: VcnnVariant::from_tag(ck.get("variant")?)?,
            embedding_sizes: params.embedding.layer_sizes(),
            fitting_sizes: params.fitting.layer_sizes(),
        };
        params.check(&config)?;
        Ok((params, config))
    }
}

impl<T: Scalar> Parameters<T> for VcnnParams<T> {
    fn blocks(&self) -> Vec<&[T]> {
        let mut out = self.embedding.blocks();
        out.extend(self.fitting.blocks());
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.embedding.blocks_mut();
        out.extend(self.fitting.blocks_mut());
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VcnnGrads<T> {
    pub embedding: MlpGrads<T>,
    pub fitting: MlpGrads<T>,
}

impl<T: Scalar> VcnnGrads<T> {
    pub fn scale(&mut self, factor: T) {
        self.embedding.scale(factor);
        self.fitting.scale(factor);
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.embedding.add_assign(&other.embedding);
        self.fitting.add_assign(&other.fitting);
    }

    pub fn is_zero(&self) -> bool {
        self.embedding.is_zero() && self.fitting.is_zero()
    }
}

impl<T: Scalar> Parameters<T> for VcnnGrads<T> {
    fn blocks(&self) -> Vec<&[T]> {
        let mut out = self.embedding.blocks();
        out.extend(self.fitting.blocks());
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.embedding.blocks_mut();
        out.extend(self.fitting.blocks_mut());
        out
    }
}

/// Row-wise embedding of the scalar block.
pub fn embed<T: Scalar>(params: &VcnnParams<T>, c: ArrayView2<T>) -> Result<Array2<T>> {
    Ok(params.embedding.forward_batch(c)?.into_output())
}

fn inv_n<T: Scalar>(n: usize) -> T {
    T::one() / T::of(n as f64)
}

/// `(1/n) G^T Q` with its top `m*` rows multiplied back: `P P*^T`.
fn project<T: Scalar>(g: ArrayView2<T>, block: ArrayView2<T>, m_star: usize) -> (Array2<T>, Array2<T>) {
    let p = g.t().dot(&block) * inv_n::<T>(g.nrows());
    let d = p.dot(&p.slice(s![..m_star, ..]).t());
    (p, d)
}

/// `D = (1/n^2) G^T Q Q^T G*` through the `m x 11` projection.
pub fn invariant_features<T: Scalar>(g: ArrayView2<T>, q: ArrayView2<T>, m_star: usize) -> Result<Array2<T>> {
    if g.nrows() != q.nrows() {
        return Err(Error::dim("basis rows", q.nrows(), g.nrows()));
    }
    if m_star > g.ncols() {
        return Err(Error::dim("m_star", g.ncols(), m_star));
    }
    Ok(project(g, q, m_star).1)
}

/// `(D1, D2, D3)` for position, velocity and scalar blocks.
pub fn invariant_features_split<T: Scalar>(
    g: ArrayView2<T>,
    x: ArrayView2<T>,
    u: ArrayView2<T>,
    c: ArrayView2<T>,
    m_star: usize,
) -> Result<(Array2<T>, Array2<T>, Array2<T>)> {
    let n = g.nrows();
    for (what, b) in [("positions", &x), ("velocities", &u), ("scalars", &c)] {
        if b.nrows() != n {
            return Err(Error::dim(what, n, b.nrows()));
        }
    }
    if m_star > g.ncols() {
        return Err(Error::dim("m_star", g.ncols(), m_star));
    }
    let d1 = project(g, x, m_star).1;
    let d2 = project(g, u, m_star).1;
    let d3 = g.t().dot(&c) * inv_n::<T>(n);
    Ok((d1, d2, d3))
}

/// Intermediates of one forward pass, for the canonically ordered cloud.
pub struct VcnnCache<T> {
    q: Array2<T>,
    embedding: MlpCache<T>,
    /// Projections: `[P]` or `[Px, Pu]`.
    projections: Vec<Array2<T>>,
    fitting: MlpCache<T>,
}

impl<T: Scalar> VcnnCache<T> {
    /// Flattened invariant features fed to the fitting network.
    pub fn features(&self) -> ArrayView2<'_, T> {
        self.fitting.layer_input(0).view()
    }
}

pub fn vcnn_forward<T: Scalar>(
    params: &VcnnParams<T>,
    config: &VcnnConfig,
    q: ArrayView2<T>,
) -> Result<(T, VcnnCache<T>)> {
    if q.ncols() != Q_DIM {
        return Err(Error::dim("cloud columns", Q_DIM, q.ncols()));
    }
    if q.nrows() == 0 {
        return Err(Error::InvalidArgument("empty cloud".into()));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input cloud".into()));
    }
    let q = canonical_rows(q);
    let n = q.nrows();
    let ms = config.m_star;
    let embedding = params.embedding.forward_batch(q.slice(s![.., 4..]))?;
    let g = embedding.output().view();
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embedding network".into()));
    }
    let (projections, flat): (Vec<Array2<T>>, Vec<T>) = match config.variant {
        VcnnVariant::SingleD => {
            let (p, d) = project(g, q.view(), ms);
            (vec![p], d.iter().copied().collect())
        }
        VcnnVariant::SplitD => {
            let (px, d1) = project(g, q.slice(s![.., 0..2]), ms);
            let (pu, d2) = project(g, q.slice(s![.., 2..4]), ms);
            let d3 = g.t().dot(&q.slice(s![.., 4..])) * inv_n::<T>(n);
            let flat = d1.iter().chain(d2.iter()).chain(d3.iter()).copied().collect();
            (vec![px, pu], flat)
        }
    };
    if flat.len() != config.feature_len() {
        return Err(Error::dim("invariant features", config.feature_len(), flat.len()));
    }
    let input = Array2::from_shape_vec((1, flat.len()), flat).expect("sized above");
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("invariant features".into()));
    }
    let fitting = params.fitting.forward_batch(input.view())?;
    let tau = fitting.output()[[0, 0]];
    if !tau.is_finite() {
        return Err(Error::NonFinite("fitting network".into()));
    }
    Ok((
        tau,
        VcnnCache {
            q,
            embedding,
            projections,
            fitting,
        },
    ))
}

pub fn vcnn_backward<T: Scalar>(
    params: &VcnnParams<T>,
    config: &VcnnConfig,
    cache: &VcnnCache<T>,
    dtau: T,
) -> Result<VcnnGrads<T>> {
    let mut grads = params.zero_grads();
    vcnn_backward_into(params, config, cache, dtau, &mut grads)?;
    Ok(grads)
}

/// Gradient of `D = P P*^T` pulled back to `P`.
fn project_grad<T: Scalar>(dd: ArrayView2<T>, p: &Array2<T>, m_star: usize) -> Array2<T> {
    let mut dp = dd.dot(&p.slice(s![..m_star, ..]));
    let top = dd.t().dot(p);
    let mut head = dp.slice_mut(s![..m_star, ..]);
    head += &top;
    dp
}

pub fn vcnn_backward_into<T: Scalar>(
    params: &VcnnParams<T>,
    config: &VcnnConfig,
    cache: &VcnnCache<T>,
    dtau: T,
    grads: &mut VcnnGrads<T>,
) -> Result<()> {
    let (m, ms) = (config.m, config.m_star);
    let n = cache.q.nrows();
    let dy = Array2::from_elem((1, 1), dtau);
    let dflat = params
        .fitting
        .backward_batch_into(&cache.fitting, dy.view(), &mut grads.fitting, true)?
        .expect("dx requested");
    let dflat = dflat.row(0);
    let scale = inv_n::<T>(n);
    let dg = match config.variant {
        VcnnVariant::SingleD => {
            let dd = dflat.into_shape_with_order((m, ms)).expect("feature length checked");
            let dp = project_grad(dd, &cache.projections[0], ms);
            cache.q.dot(&dp.t()) * scale
        }
        VcnnVariant::SplitD => {
            let k = m * ms;
            let dd1 = dflat.slice(s![..k]).into_shape_with_order((m, ms)).expect("sized");
            let dd2 = dflat.slice(s![k..2 * k]).into_shape_with_order((m, ms)).expect("sized");
            let dd3 = dflat.slice(s![2 * k..]).into_shape_with_order((m, C_DIM)).expect("sized");
            let dpx = project_grad(dd1, &cache.projections[0], ms);
            let dpu = project_grad(dd2, &cache.projections[1], ms);
            let dp = concatenate![Axis(1), dpx, dpu, dd3];
            cache.q.dot(&dp.t()) * scale
        }
    };
    params
        .embedding
        .backward_batch_into(&cache.embedding, dg.view(), &mut grads.embedding, false)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
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

    fn jitter(p: &mut VcnnParams<f64>, rng: &mut ChaCha8Rng) {
        for b in p.blocks_mut() {
            for v in b {
                *v += rng.random_range(-0.2..0.2);
            }
        }
    }

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b).fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
    }

    #[test]
    fn reference_parameter_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let single = VcnnParams::<f64>::new(&VcnnConfig::single_d(), &mut rng).unwrap();
        assert_eq!(single.fitting.param_count(), 33025);
        assert_eq!(single.embedding.param_count(), 6528);
        let split = VcnnParams::<f64>::new(&VcnnConfig::split_d(), &mut rng).unwrap();
        assert_eq!(VcnnConfig::split_d().feature_len(), 960);
        assert_eq!(split.fitting.param_count(), 123137);
    }

    #[test]
    fn factored_projection_matches_explicit_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..=10 {
            let g = Array2::from_shape_fn((n, 6), |_| rng.random_range(-1.0..1.0));
            let q = random_cloud(n, &mut rng);
            let d = invariant_features(g.view(), q.view(), 3).unwrap();
            let gram = q.dot(&q.t());
            let explicit = g.t().dot(&gram).dot(&g.slice(s![.., ..3])) / (n * n) as f64;
            assert!(max_abs_diff(&d, &explicit) < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn split_blocks_sum_to_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 9;
        let g = Array2::from_shape_fn((n, 8), |_| rng.random_range(-1.0..1.0));
        let q = random_cloud(n, &mut rng);
        let (x, u, c) = (q.slice(s![.., 0..2]), q.slice(s![.., 2..4]), q.slice(s![.., 4..]));
        let (d1, d2, _) = invariant_features_split(g.view(), x, u, c, 4).unwrap();
        let cc = c.dot(&c.t());
        let dc = g.t().dot(&cc).dot(&g.slice(s![.., ..4])) / (n * n) as f64;
        let single = invariant_features(g.view(), q.view(), 4).unwrap();
        assert!(max_abs_diff(&(d1 + d2 + dc), &single) < 1e-12);
    }

    #[test]
    fn zero_velocity_gives_zero_d2() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Array2::from_shape_fn((5, 8), |_| rng.random_range(-1.0..1.0));
        let mut q = random_cloud(5, &mut rng);
        q.slice_mut(s![.., 2..4]).fill(0.0);
        let (_, d2, d3) =
            invariant_features_split(g.view(), q.slice(s![.., 0..2]), q.slice(s![.., 2..4]), q.slice(s![.., 4..]), 4)
                .unwrap();
        assert!(d2.iter().all(|&v| v == 0.0));
        assert_eq!(d3.dim(), (8, 7));
    }

    #[test]
    fn embedding_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = VcnnConfig::with_widths(VcnnVariant::SingleD, &[5], 4, 2, &[3]);
        let mut p = VcnnParams::<f64>::new(&cfg, &mut rng).unwrap();
        let c = Array2::from_shape_fn((3, 7), |_| rng.random_range(-1.0..1.0));
        let dup = ndarray::concatenate![Axis(0), c, c.slice(s![0..1, ..])];
        let g = embed(&p, dup.view()).unwrap();
        assert_eq!(g.row(0), g.row(3));
        let perm = c.select(Axis(0), &[2, 0, 1]);
        assert_eq!(embed(&p, perm.view()).unwrap(), embed(&p, c.view()).unwrap().select(Axis(0), &[2, 0, 1]));

        // Zero weights: every row is the relu chain of the biases.
        for k in 0..p.embedding.num_layers() {
            let (w, b) = p.embedding.layer_params_mut(k);
            w.fill(0.0);
            b.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 - 1.5);
        }
        let g = embed(&p, c.view()).unwrap();
        let expected = [0.0, 0.0, 0.5, 1.5];
        for row in g.rows() {
            assert_eq!(row.to_vec(), expected);
        }
    }

    #[test]
    fn invariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for cfg in [VcnnConfig::single_d(), VcnnConfig::split_d()] {
            let p = VcnnParams::<f64>::new(&cfg, &mut rng).unwrap();
            let q = random_cloud(30, &mut rng);
            let tau = vcnn_forward(&p, &cfg, q.view()).unwrap().0;

            let mut order: Vec<usize> = (0..30).rev().collect();
            order.swap(0, 17);
            let t = vcnn_forward(&p, &cfg, q.select(Axis(0), &order).view()).unwrap().0;
            assert_eq!(t.to_bits(), tau.to_bits());

            for beta in [0.4, std::f64::consts::FRAC_PI_2, 2.9] {
                let t = vcnn_forward(&p, &cfg, rotate(&q, beta).view()).unwrap().0;
                assert!((t - tau).abs() < 1e-12);
            }

            let doubled = ndarray::concatenate![Axis(0), q, q];
            let tripled = ndarray::concatenate![Axis(0), q, q, q];
            for cloud in [doubled, tripled] {
                let t = vcnn_forward(&p, &cfg, cloud.view()).unwrap().0;
                assert!((t - tau).abs() < 1e-12);
            }
        }
    }

    fn fd_check(cfg: &VcnnConfig, n: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = VcnnParams::<f64>::new(cfg, &mut rng).unwrap();
        jitter(&mut p, &mut rng);
        let q = random_cloud(n, &mut rng);
        let (_, cache) = vcnn_forward(&p, cfg, q.view()).unwrap();
        let g = vcnn_backward(&p, cfg, &cache, 1.0).unwrap();
        assert!(!g.embedding.is_zero());
        let h = 1e-6;
        for (bi, block) in g.blocks().iter().enumerate() {
            let mut fd = vec![0.0; block.len()];
            for k in 0..block.len() {
                let mut pp = p.clone();
                pp.blocks_mut()[bi][k] += h;
                let up = vcnn_forward(&pp, cfg, q.view()).unwrap().0;
                let mut pm = p.clone();
                pm.blocks_mut()[bi][k] -= h;
                let down = vcnn_forward(&pm, cfg, q.view()).unwrap().0;
                fd[k] = (up - down) / (2.0 * h);
            }
            let scale = block.iter().chain(&fd).fold(0.0f64, |a, v| a.max(v.abs()));
            let err = block.iter().zip(&fd).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            assert!(err <= 1e-6 * scale, "block {bi}: err {err}, scale {scale}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let single = VcnnConfig::with_widths(VcnnVariant::SingleD, &[6], 5, 3, &[4]);
        let split = VcnnConfig::with_widths(VcnnVariant::SplitD, &[6], 5, 3, &[4]);
        for (n, seed) in [(1, 1), (3, 2), (8, 3)] {
            fd_check(&single, n, seed);
            fd_check(&split, n, seed + 10);
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = VcnnConfig::default();
        let p = VcnnParams::<f64>::new(&cfg, &mut rng).unwrap();
        let q = random_cloud(12, &mut rng);
        let (_, cache) = vcnn_forward(&p, &cfg, q.view()).unwrap();
        assert!(vcnn_backward(&p, &cfg, &cache, 0.0).unwrap().is_zero());
    }

    #[test]
    fn checkpoint_round_trip_and_variant_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = VcnnConfig::split_d();
        let p = VcnnParams::<f64>::new(&cfg, &mut rng).unwrap();
        let mut ck = Checkpoint::from_bytes(&p.to_checkpoint(&cfg).to_bytes()).unwrap();
        let (back, bcfg) = VcnnParams::<f64>::from_checkpoint(&ck).unwrap();
        assert_eq!(back, p);
        assert_eq!(bcfg, cfg);
        ck.set("variant", "single_d");
        assert!(VcnnParams::<f64>::from_checkpoint(&ck).is_err());
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = VcnnConfig::default();
        let p = VcnnParams::<f64>::new(&cfg, &mut rng).unwrap();
        let mut q = random_cloud(4, &mut rng);
        q[[2, 0]] = f64::INFINITY;
        assert!(matches!(vcnn_forward(&p, &cfg, q.view()), Err(Error::NonFinite(_))));
    }
}
