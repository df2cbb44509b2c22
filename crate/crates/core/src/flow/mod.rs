//! Invertible density model: ActNorm followed by alternating affine
//! coupling layers, with a Gaussian prior `N(mu0 * 1, I)` and exact
//! log-likelihood and gradients.

mod conv;
mod layers;
pub mod model;
mod store;

pub use conv::CausalConv;
pub use layers::{split_ranges, ActNorm, Coupling, CouplingCache, Subnet, EPS_STD};
pub use model::{FlowModel, Gradients, ModelConfig, Variant, POSE_DIM};
pub use store::{ParamStore, TensorId, TensorSpec};

use crate::error::{Error, Result};

/// A stack of invertible layers over `t_len x width` sequences.
#[derive(Debug, Clone)]
pub struct Flow {
    pub actnorm: ActNorm,
    pub couplings: Vec<Coupling>,
    pub width: usize,
}

pub struct FlowCache {
    z0: Vec<f64>,
    layers: Vec<CouplingCache>,
    pub z: Vec<f64>,
    pub logdet: f64,
}

fn check_finite(data: &[f64], what: impl Fn() -> String) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what()))
    }
}

impl Flow {
    /// `cond_dim`, when set, makes every coupling subnet accept an external
    /// conditioning vector of that length.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        k: usize,
        hidden: usize,
        s_max: f64,
        cond_dim: Option<usize>,
    ) -> Self {
        let actnorm = ActNorm::new(store, prefix, width);
        let couplings = (0..k)
            .map(|i| {
                Coupling::new(
                    store,
                    &format!("{prefix}coupling.{i}"),
                    width,
                    i,
                    hidden,
                    s_max,
                    cond_dim,
                )
            })
            .collect();
        Flow {
            actnorm,
            couplings,
            width,
        }
    }

    pub fn forward_cached(
        &self,
        store: &ParamStore,
        x: &[f64],
        t_len: usize,
        cond: Option<&[f64]>,
    ) -> Result<FlowCache> {
        debug_assert_eq!(x.len(), t_len * self.width);
        let (z0, mut logdet) = self.actnorm.forward(store, x, t_len);
        check_finite(&z0, || "actnorm output".to_string())?;
        let mut layers = Vec::with_capacity(self.couplings.len());
        let mut cur = z0.clone();
        for (i, c) in self.couplings.iter().enumerate() {
            let (next, sum_s, cache) = c.forward(store, &cur, t_len, cond);
            check_finite(&next, || format!("coupling layer {i} output"))?;
            logdet += sum_s;
            layers.push(cache);
            cur = next;
        }
        Ok(FlowCache {
            z0,
            layers,
            z: cur,
            logdet,
        })
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        x: &[f64],
        t_len: usize,
        cond: Option<&[f64]>,
    ) -> Result<(Vec<f64>, f64)> {
        let cache = self.forward_cached(store, x, t_len, cond)?;
        Ok((cache.z, cache.logdet))
    }

    pub fn inverse(
        &self,
        store: &ParamStore,
        z: &[f64],
        t_len: usize,
        cond: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let mut cur = z.to_vec();
        for (i, c) in self.couplings.iter().enumerate().rev() {
            cur = c.inverse(store, &cur, t_len, cond);
            check_finite(&cur, || format!("inverse of coupling layer {i}"))?;
        }
        Ok(self.actnorm.inverse(store, &cur, t_len))
    }

    /// Exact log-likelihood under the `N(mu0 * 1, I)` prior.
    pub fn log_likelihood(
        &self,
        store: &ParamStore,
        x: &[f64],
        t_len: usize,
        cond: Option<&[f64]>,
        mu0: f64,
    ) -> Result<(f64, Vec<f64>)> {
        let cache = self.forward_cached(store, x, t_len, cond)?;
        let ll = gaussian_logp(&cache.z, mu0) + cache.logdet;
        Ok((ll, cache.z))
    }

    /// Gradient of `scale * log_likelihood` w.r.t. every parameter of this
    /// flow (accumulated into `grads`) and w.r.t. the input (returned).
    /// Also returns the log-likelihood itself.
    pub fn backward_ll(
        &self,
        store: &ParamStore,
        x: &[f64],
        t_len: usize,
        cond: Option<&[f64]>,
        mu0: f64,
        scale: f64,
        grads: &mut [f64],
    ) -> Result<(f64, Vec<f64>)> {
        let cache = self.forward_cached(store, x, t_len, cond)?;
        let ll = gaussian_logp(&cache.z, mu0) + cache.logdet;
        // d(scale * ll)/dz through the prior; logdet terms carry `scale`.
        let mut g: Vec<f64> = cache.z.iter().map(|&z| -scale * (z - mu0)).collect();
        for (c, lc) in self.couplings.iter().zip(cache.layers.iter()).rev() {
            g = c.backward(store, lc, cond, &g, scale, t_len, grads);
        }
        let grad_x = self
            .actnorm
            .backward(store, &cache.z0, &g, scale, t_len, grads);
        check_finite(&grad_x, || "flow input gradient".to_string())?;
        Ok((ll, grad_x))
    }
}

/// `log N(z; mu0 * 1, I)` summed over all entries.
pub fn gaussian_logp(z: &[f64], mu0: f64) -> f64 {
    let quad: f64 = z.iter().map(|&v| (v - mu0) * (v - mu0)).sum();
    -0.5 * quad - 0.5 * z.len() as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Mean over time of a `t_len x width` sequence; used to pool the
/// trajectory latent into a conditioning vector.
pub fn mean_pool(z: &[f64], t_len: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    for t in 0..t_len {
        for j in 0..width {
            out[j] += z[t * width + j];
        }
    }
    for v in out.iter_mut() {
        *v /= t_len as f64;
    }
    out
}
