//! ActNorm and affine coupling layers with causal temporal-convolution
//! subnets, including exact reverse-mode gradients.

use super::conv::CausalConv;
use super::store::{ParamStore, TensorId};

pub const EPS_STD: f64 = 1e-6;
const DILATION_CYCLE: [usize; 3] = [1, 2, 4];

// ---------------------------------------------------------------------------
// ActNorm
// ---------------------------------------------------------------------------

/// Per-channel affine layer `z = (x + bias) * exp(logscale)`, initialized
/// from the first training batch so its first output is standardized.
#[derive(Debug, Clone)]
pub struct ActNorm {
    pub bias: TensorId,
    pub logscale: TensorId,
    pub channels: usize,
    pub initialized: bool,
}

impl ActNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Self {
        let bias = store.alloc(format!("{prefix}actnorm.bias"), &[channels]);
        let logscale = store.alloc(format!("{prefix}actnorm.logscale"), &[channels]);
        ActNorm {
            bias,
            logscale,
            channels,
            initialized: false,
        }
    }

    /// Data-dependent initialization from `rows x channels` samples.
    /// Subsequent calls are no-ops. Returns the number of zero-variance
    /// channels that fell back to unit scale.
    pub fn init_from_data(&mut self, store: &mut ParamStore, data: &[f64], rows: usize) -> usize {
        if self.initialized {
            return 0;
        }
        assert!(rows >= 2, "actnorm init needs at least two samples");
        let c = self.channels;
        let mut mean = vec![0.0; c];
        for r in 0..rows {
            for (j, m) in mean.iter_mut().enumerate() {
                *m += data[r * c + j];
            }
        }
        for m in mean.iter_mut() {
            *m /= rows as f64;
        }
        let mut var = vec![0.0; c];
        for r in 0..rows {
            for (j, v) in var.iter_mut().enumerate() {
                let d = data[r * c + j] - mean[j];
                *v += d * d;
            }
        }
        let mut constant = 0;
        {
            let ls = store.get_mut(self.logscale);
            for (j, v) in var.iter().enumerate() {
                let std = (v / rows as f64).sqrt();
                if std < EPS_STD {
                    ls[j] = 0.0;
                    constant += 1;
                } else {
                    ls[j] = -(std + EPS_STD).ln();
                }
            }
        }
        let b = store.get_mut(self.bias);
        for (j, m) in mean.iter().enumerate() {
            b[j] = -m;
        }
        self.initialized = true;
        constant
    }

    /// Returns the transformed sequence and the log-det contribution
    /// `t_len * sum(logscale)`.
    pub fn forward(&self, store: &ParamStore, x: &[f64], t_len: usize) -> (Vec<f64>, f64) {
        let b = store.get(self.bias);
        let ls = store.get(self.logscale);
        let sigma: Vec<f64> = ls.iter().map(|v| v.exp()).collect();
        let mut z = vec![0.0; x.len()];
        for t in 0..t_len {
            for j in 0..self.channels {
                z[t * self.channels + j] = (x[t * self.channels + j] + b[j]) * sigma[j];
            }
        }
        let logdet = t_len as f64 * ls.iter().sum::<f64>();
        (z, logdet)
    }

    pub fn inverse(&self, store: &ParamStore, z: &[f64], t_len: usize) -> Vec<f64> {
        let b = store.get(self.bias);
        let ls = store.get(self.logscale);
        let mut x = vec![0.0; z.len()];
        for t in 0..t_len {
            for j in 0..self.channels {
                x[t * self.channels + j] = z[t * self.channels + j] * (-ls[j]).exp() - b[j];
            }
        }
        x
    }

    /// `grad_z` is the gradient w.r.t. the output, `grad_logdet` the
    /// scalar gradient w.r.t. this layer's log-det contribution.
    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(
        &self,
        store: &ParamStore,
        z: &[f64],
        grad_z: &[f64],
        grad_logdet: f64,
        t_len: usize,
        grads: &mut [f64],
    ) -> Vec<f64> {
        let ls = store.get(self.logscale);
        let boff = store.spec(self.bias).offset;
        let loff = store.spec(self.logscale).offset;
        let sigma: Vec<f64> = ls.iter().map(|v| v.exp()).collect();
        let mut grad_x = vec![0.0; grad_z.len()];
        for t in 0..t_len {
            for j in 0..self.channels {
                let g = grad_z[t * self.channels + j];
                grad_x[t * self.channels + j] = g * sigma[j];
                grads[boff + j] += g * sigma[j];
                grads[loff + j] += g * z[t * self.channels + j];
            }
        }
        for j in 0..self.channels {
            grads[loff + j] += t_len as f64 * grad_logdet;
        }
        grad_x
    }
}

// ---------------------------------------------------------------------------
// Subnet: conv -> tanh -> conv -> tanh -> conv, optionally conditioned
// ---------------------------------------------------------------------------

/// Scale/translation subnet of a coupling layer: three causal convolutions
/// with a dilation cycle and tanh nonlinearities. When `cond_dim` is set,
/// a learned linear projection of the conditioning vector is added to each
/// hidden layer's pre-activation at every time step.
#[derive(Debug, Clone)]
pub struct Subnet {
    convs: [CausalConv; 3],
    cond_proj: Option<[TensorId; 2]>, // (hidden x cond_dim) per hidden layer
    cond_dim: usize,
    hidden: usize,
}

pub struct SubnetCache {
    input: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
}

impl Subnet {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        hidden: usize,
        depth: usize,
        cond_dim: Option<usize>,
    ) -> Self {
        let d = |i: usize| DILATION_CYCLE[(depth + i) % 3];
        let convs = [
            CausalConv::new(store, &format!("{name}.0"), in_ch, hidden, 3, d(0)),
            CausalConv::new(store, &format!("{name}.1"), hidden, hidden, 3, d(1)),
            CausalConv::new(store, &format!("{name}.2"), hidden, out_ch, 3, d(2)),
        ];
        let cond_proj = cond_dim.map(|cd| {
            [
                store.alloc(format!("{name}.cond.0.weight"), &[hidden, cd]),
                store.alloc(format!("{name}.cond.1.weight"), &[hidden, cd]),
            ]
        });
        Subnet {
            convs,
            cond_proj,
            cond_dim: cond_dim.unwrap_or(0),
            hidden,
        }
    }

    pub fn out_conv(&self) -> &CausalConv {
        &self.convs[2]
    }

    pub fn inner_convs(&self) -> [&CausalConv; 2] {
        [&self.convs[0], &self.convs[1]]
    }

    fn add_cond(&self, store: &ParamStore, h: &mut [f64], t_len: usize, proj: TensorId, cond: &[f64]) {
        let p = store.get(proj);
        debug_assert_eq!(cond.len(), self.cond_dim);
        for t in 0..t_len {
            let row = &mut h[t * self.hidden..(t + 1) * self.hidden];
            for (k, rv) in row.iter_mut().enumerate() {
                let prow = &p[k * self.cond_dim..(k + 1) * self.cond_dim];
                let mut acc = 0.0;
                for (j, &cv) in cond.iter().enumerate() {
                    acc += prow[j] * cv;
                }
                *rv += acc;
            }
        }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        input: &[f64],
        t_len: usize,
        cond: Option<&[f64]>,
    ) -> (Vec<f64>, SubnetCache) {
        let mut h1 = self.convs[0].forward(store, input, t_len);
        if let (Some(proj), Some(c)) = (&self.cond_proj, cond) {
            self.add_cond(store, &mut h1, t_len, proj[0], c);
        }
        for v in h1.iter_mut() {
            *v = v.tanh();
        }
        let a1 = h1;
        let mut h2 = self.convs[1].forward(store, &a1, t_len);
        if let (Some(proj), Some(c)) = (&self.cond_proj, cond) {
            self.add_cond(store, &mut h2, t_len, proj[1], c);
        }
        for v in h2.iter_mut() {
            *v = v.tanh();
        }
        let a2 = h2;
        let out = self.convs[2].forward(store, &a2, t_len);
        (
            out,
            SubnetCache {
                input: input.to_vec(),
                a1,
                a2,
            },
        )
    }

    /// Gradients never flow into the conditioning vector (stop-gradient
    /// boundary); only the projection weights receive updates.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &SubnetCache,
        cond: Option<&[f64]>,
        grad_out: &[f64],
        t_len: usize,
        grads: &mut [f64],
    ) -> Vec<f64> {
        let g_a2 = self.convs[2].backward(store, &cache.a2, grad_out, t_len, grads);
        let mut g_h2 = g_a2;
        for (g, a) in g_h2.iter_mut().zip(cache.a2.iter()) {
            *g *= 1.0 - a * a;
        }
        if let (Some(proj), Some(c)) = (&self.cond_proj, cond) {
            self.accumulate_cond_grad(store, &g_h2, t_len, proj[1], c, grads);
        }
        let g_a1 = self.convs[1].backward(store, &cache.a1, &g_h2, t_len, grads);
        let mut g_h1 = g_a1;
        for (g, a) in g_h1.iter_mut().zip(cache.a1.iter()) {
            *g *= 1.0 - a * a;
        }
        if let (Some(proj), Some(c)) = (&self.cond_proj, cond) {
            self.accumulate_cond_grad(store, &g_h1, t_len, proj[0], c, grads);
        }
        self.convs[0].backward(store, &cache.input, &g_h1, t_len, grads)
    }

    fn accumulate_cond_grad(
        &self,
        store: &ParamStore,
        grad_h: &[f64],
        t_len: usize,
        proj: TensorId,
        cond: &[f64],
        grads: &mut [f64],
    ) {
        let off = store.spec(proj).offset;
        for t in 0..t_len {
            let row = &grad_h[t * self.hidden..(t + 1) * self.hidden];
            for (k, &g) in row.iter().enumerate() {
                for (j, &cv) in cond.iter().enumerate() {
                    grads[off + k * self.cond_dim + j] += g * cv;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Affine coupling
// ---------------------------------------------------------------------------

/// One affine coupling layer. The conditioner half `u` passes through
/// unchanged; the other half is transformed as `v' = v * exp(s(u)) + t(u)`
/// with the scale clamped to `|s| < s_max` via `s_max * tanh(raw / s_max)`.
#[derive(Debug, Clone)]
pub struct Coupling {
    pub s_net: Subnet,
    pub t_net: Subnet,
    /// false: first ceil(W/2) channels condition; true: roles swapped.
    pub parity: bool,
    pub width: usize,
    pub s_max: f64,
}

pub struct CouplingCache {
    v: Vec<f64>,
    s: Vec<f64>, // clamped scale values
    s_cache: SubnetCache,
    t_cache: SubnetCache,
}

/// Channel ranges `(conditioner, transformed)`. The conditioner half gets
/// the extra channel when the width is odd.
pub fn split_ranges(width: usize, parity: bool) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let cu = width - width / 2; // ceil(width / 2)
    if !parity {
        (0..cu, cu..width)
    } else {
        (width / 2..width, 0..width / 2)
    }
}

fn gather(x: &[f64], t_len: usize, width: usize, range: &std::ops::Range<usize>) -> Vec<f64> {
    let w = range.len();
    let mut out = vec![0.0; t_len * w];
    for t in 0..t_len {
        out[t * w..(t + 1) * w].copy_from_slice(&x[t * width + range.start..t * width + range.end]);
    }
    out
}

fn scatter(dst: &mut [f64], src: &[f64], t_len: usize, width: usize, range: &std::ops::Range<usize>) {
    let w = range.len();
    for t in 0..t_len {
        dst[t * width + range.start..t * width + range.end].copy_from_slice(&src[t * w..(t + 1) * w]);
    }
}

impl Coupling {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        depth: usize,
        hidden: usize,
        s_max: f64,
        cond_dim: Option<usize>,
    ) -> Self {
        let parity = depth % 2 == 1;
        let (ur, vr) = split_ranges(width, parity);
        let s_net = Subnet::new(store, &format!("{name}.s"), ur.len(), vr.len(), hidden, depth, cond_dim);
        let t_net = Subnet::new(store, &format!("{name}.t"), ur.len(), vr.len(), hidden, depth, cond_dim);
        Coupling {
            s_net,
            t_net,
            parity,
            width,
            s_max,
        }
    }

    fn clamp_scale(&self, raw: &mut [f64]) {
        for v in raw.iter_mut() {
            *v = self.s_max * (*v / self.s_max).tanh();
        }
    }

    /// Returns the transformed sequence, the log-det contribution
    /// (sum of clamped scales over transformed entries) and the cache.
    pub fn forward(
        &self,
        store: &ParamStore,
        x: &[f64],
        t_len: usize,
        cond: Option<&[f64]>,
    ) -> (Vec<f64>, f64, CouplingCache) {
        let (ur, vr) = split_ranges(self.width, self.parity);
        let u = gather(x, t_len, self.width, &ur);
        let v = gather(x, t_len, self.width, &vr);
        let (mut s, s_cache) = self.s_net.forward(store, &u, t_len, cond);
        self.clamp_scale(&mut s);
        let (tt, t_cache) = self.t_net.forward(store, &u, t_len, cond);
        let mut vp = vec![0.0; v.len()];
        let mut sum_s = 0.0;
        for i in 0..v.len() {
            vp[i] = v[i] * s[i].exp() + tt[i];
            sum_s += s[i];
        }
        let mut y = x.to_vec();
        scatter(&mut y, &vp, t_len, self.width, &vr);
        (
            y,
            sum_s,
            CouplingCache {
                v,
                s,
                s_cache,
                t_cache,
            },
        )
    }

    pub fn inverse(&self, store: &ParamStore, y: &[f64], t_len: usize, cond: Option<&[f64]>) -> Vec<f64> {
        let (ur, vr) = split_ranges(self.width, self.parity);
        let u = gather(y, t_len, self.width, &ur);
        let vp = gather(y, t_len, self.width, &vr);
        let (mut s, _) = self.s_net.forward(store, &u, t_len, cond);
        self.clamp_scale(&mut s);
        let (tt, _) = self.t_net.forward(store, &u, t_len, cond);
        let mut v = vec![0.0; vp.len()];
        for i in 0..vp.len() {
            v[i] = (vp[i] - tt[i]) * (-s[i]).exp();
        }
        let mut x = y.to_vec();
        scatter(&mut x, &v, t_len, self.width, &vr);
        x
    }

    /// `grad_y` is the gradient w.r.t. this layer's output; `grad_logdet`
    /// the scalar gradient of the loss w.r.t. this layer's `sum_s`.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &CouplingCache,
        cond: Option<&[f64]>,
        grad_y: &[f64],
        grad_logdet: f64,
        t_len: usize,
        grads: &mut [f64],
    ) -> Vec<f64> {
        let (ur, vr) = split_ranges(self.width, self.parity);
        let g_up = gather(grad_y, t_len, self.width, &ur);
        let g_vp = gather(grad_y, t_len, self.width, &vr);

        let n = cache.v.len();
        let mut g_v = vec![0.0; n];
        let mut g_s = vec![0.0; n];
        for i in 0..n {
            let es = cache.s[i].exp();
            g_v[i] = g_vp[i] * es;
            g_s[i] = g_vp[i] * cache.v[i] * es + grad_logdet;
        }
        // through the tanh clamp
        let mut g_raw = g_s;
        for (g, s) in g_raw.iter_mut().zip(cache.s.iter()) {
            let th = s / self.s_max;
            *g *= 1.0 - th * th;
        }
        let g_u_s = self
            .s_net
            .backward(store, &cache.s_cache, cond, &g_raw, t_len, grads);
        let g_u_t = self
            .t_net
            .backward(store, &cache.t_cache, cond, &g_vp, t_len, grads);

        let mut g_u = g_up;
        for i in 0..g_u.len() {
            g_u[i] += g_u_s[i] + g_u_t[i];
        }
        let mut grad_x = vec![0.0; grad_y.len()];
        scatter(&mut grad_x, &g_u, t_len, self.width, &ur);
        scatter(&mut grad_x, &g_v, t_len, self.width, &vr);
        grad_x
    }
}
