//! Causal dilated 1-D convolution over the time axis.
//!
//! Inputs and outputs are row-major `t_len x channels` slices. The
//! receptive field looks strictly backwards in time; positions before
//! frame 0 are replicate-padded with the first frame's values.

use super::store::{ParamStore, TensorId};

#[derive(Debug, Clone)]
pub struct CausalConv {
    pub weight: TensorId, // (out, in, kernel)
    pub bias: TensorId,   // (out)
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl CausalConv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
    ) -> Self {
        let weight = store.alloc(format!("{name}.weight"), &[out_ch, in_ch, kernel]);
        let bias = store.alloc(format!("{name}.bias"), &[out_ch]);
        CausalConv {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            dilation,
        }
    }

    /// Source frame for output frame `t` and kernel tap `kk`, after
    /// replicate padding. Always <= t, so the layer is causal.
    #[inline]
    fn src_frame(&self, t: usize, kk: usize) -> usize {
        let back = (self.kernel - 1 - kk) * self.dilation;
        t.saturating_sub(back)
    }

    pub fn forward(&self, store: &ParamStore, input: &[f64], t_len: usize) -> Vec<f64> {
        debug_assert_eq!(input.len(), t_len * self.in_ch);
        let w = store.get(self.weight);
        let b = store.get(self.bias);
        let mut out = vec![0.0; t_len * self.out_ch];
        for t in 0..t_len {
            let orow = &mut out[t * self.out_ch..(t + 1) * self.out_ch];
            orow.copy_from_slice(b);
            for kk in 0..self.kernel {
                let src = self.src_frame(t, kk);
                let irow = &input[src * self.in_ch..(src + 1) * self.in_ch];
                for (o, ov) in orow.iter_mut().enumerate() {
                    let wrow = &w[(o * self.in_ch + 0) * self.kernel..];
                    let mut acc = 0.0;
                    for (i, &x) in irow.iter().enumerate() {
                        acc += wrow[i * self.kernel + kk] * x;
                    }
                    *ov += acc;
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grads` (flat store layout)
    /// and returns the gradient with respect to the input.
    pub fn backward(
        &self,
        store: &ParamStore,
        input: &[f64],
        grad_out: &[f64],
        t_len: usize,
        grads: &mut [f64],
    ) -> Vec<f64> {
        let w = store.get(self.weight);
        let wspec = store.spec(self.weight);
        let bspec = store.spec(self.bias);
        let mut grad_in = vec![0.0; t_len * self.in_ch];
        for t in 0..t_len {
            let grow = &grad_out[t * self.out_ch..(t + 1) * self.out_ch];
            for (o, &g) in grow.iter().enumerate() {
                grads[bspec.offset + o] += g;
            }
            for kk in 0..self.kernel {
                let src = self.src_frame(t, kk);
                let irow = &input[src * self.in_ch..(src + 1) * self.in_ch];
                let girow = &mut grad_in[src * self.in_ch..(src + 1) * self.in_ch];
                for (o, &g) in grow.iter().enumerate() {
                    let wbase = wspec.offset + o * self.in_ch * self.kernel;
                    for i in 0..self.in_ch {
                        grads[wbase + i * self.kernel + kk] += g * irow[i];
                        girow[i] += g * w[o * self.in_ch * self.kernel + i * self.kernel + kk];
                    }
                }
            }
        }
        grad_in
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn causal_output_ignores_future_frames() {
        let mut store = ParamStore::new();
        let conv = CausalConv::new(&mut store, "c", 2, 3, 3, 2);
        for v in store.data_mut().iter_mut() {
            *v = 0.3;
        }
        let t_len = 6;
        let x: Vec<f64> = (0..t_len * 2).map(|i| i as f64 * 0.1).collect();
        let base = conv.forward(&store, &x, t_len);
        // perturb the last frame; outputs at earlier frames must not move
        let mut x2 = x.clone();
        x2[(t_len - 1) * 2] += 5.0;
        let out = conv.forward(&store, &x2, t_len);
        for t in 0..t_len - 1 {
            for c in 0..3 {
                assert_eq!(base[t * 3 + c], out[t * 3 + c]);
            }
        }
        assert_ne!(base[(t_len - 1) * 3], out[(t_len - 1) * 3]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let conv = CausalConv::new(&mut store, "c", 2, 2, 3, 2);
        let n = store.len();
        for (i, v) in store.data_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.7).sin() * 0.5;
        }
        let t_len = 5;
        let x: Vec<f64> = (0..t_len * 2).map(|i| (i as f64 * 0.3).cos()).collect();
        // loss = sum of squares of outputs
        let loss = |store: &ParamStore, x: &[f64]| -> f64 {
            conv.forward(store, x, t_len).iter().map(|v| v * v).sum()
        };
        let out = conv.forward(&store, &x, t_len);
        let grad_out: Vec<f64> = out.iter().map(|v| 2.0 * v).collect();
        let mut grads = store.zeros_like();
        let grad_in = conv.backward(&store, &x, &grad_out, t_len, &mut grads);

        let h = 1e-6;
        for p in 0..n {
            let orig = store.data()[p];
            store.data_mut()[p] = orig + h;
            let up = loss(&store, &x);
            store.data_mut()[p] = orig - h;
            let dn = loss(&store, &x);
            store.data_mut()[p] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (fd - grads[p]).abs() < 1e-6 * (1.0 + fd.abs()),
                "param {p}: fd {fd} vs analytic {}",
                grads[p]
            );
        }
        let mut x2 = x.clone();
        for p in 0..x.len() {
            let orig = x2[p];
            x2[p] = orig + h;
            let up = loss(&store, &x2);
            x2[p] = orig - h;
            let dn = loss(&store, &x2);
            x2[p] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - grad_in[p]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }
}
