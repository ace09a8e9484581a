use crate::error::{Error, Result};
use crate::numnet::Parameters;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with per-block moment accumulators.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<P: Parameters<T> + ?Sized>(params: &P, config: AdamConfig) -> Self {
        let shapes: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
        Self {
            config,
            first_moment: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update. Gradients are checked for finiteness before any
    /// parameter or moment is touched, so a refused step leaves everything
    /// unchanged.
    pub fn step<P, G>(&mut self, params: &mut P, grads: &G) -> Result<()>
    where
        P: Parameters<T> + ?Sized,
        G: Parameters<T> + ?Sized,
    {
        let gblocks = grads.blocks();
        if gblocks.len() != self.first_moment.len() {
            return Err(Error::dim(
                "adam gradient blocks",
                self.first_moment.len(),
                gblocks.len(),
            ));
        }
        for (b, (g, m)) in gblocks.iter().zip(&self.first_moment).enumerate() {
            if g.len() != m.len() {
                return Err(Error::dim("adam gradient block length", m.len(), g.len()));
            }
            if let Some(index) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient { block: b, index });
            }
        }
        let mut pblocks = params.blocks_mut();
        if pblocks.len() != gblocks.len() {
            return Err(Error::dim("adam parameter blocks", gblocks.len(), pblocks.len()));
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let one = T::one();
        let corr1 = one - T::of(c.beta1.powi(t));
        let corr2 = one - T::of(c.beta2.powi(t));
        let lr = T::of(c.lr);
        let eps = T::of(c.eps);

        for (((p, g), m), v) in pblocks
            .iter_mut()
            .zip(&gblocks)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
