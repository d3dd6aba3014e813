//! Batched LSTM stack + dense head over a flat parameter vector, with
//! backpropagation through time.
//!
//! Internal sequence buffers are time-major: row `t * batch + b` holds
//! example `b` at step `t`. Gate blocks are ordered input, forget, cell,
//! output (PyTorch convention), so `w_ih` is `4H x in`.

use super::scalar::{gemm, Scalar};
use super::RegressorConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct LstmSlot {
    pub n_in: usize,
    pub w_ih: usize,
    pub w_hh: usize,
    pub bias: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct DenseSlot {
    pub n_in: usize,
    pub n_out: usize,
    pub w: usize,
    pub b: usize,
}

/// Offsets of every array inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub hidden: usize,
    pub input_dim: usize,
    pub lstm: Vec<LstmSlot>,
    /// Hidden dense layers (ReLU) followed by the linear output layer.
    pub dense: Vec<DenseSlot>,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &RegressorConfig) -> Layout {
        let h = cfg.hidden;
        let mut off = 0;
        let mut lstm = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let n_in = if l == 0 { cfg.input_dim } else { h };
            let w_ih = off;
            off += 4 * h * n_in;
            let w_hh = off;
            off += 4 * h * h;
            let bias = off;
            off += 4 * h;
            lstm.push(LstmSlot {
                n_in,
                w_ih,
                w_hh,
                bias,
            });
        }
        let mut dense = Vec::new();
        let mut n_in = cfg.n_layers * h;
        for &n_out in cfg.dense_sizes.iter().chain(std::iter::once(&cfg.output_dim)) {
            let w = off;
            off += n_out * n_in;
            let b = off;
            off += n_out;
            dense.push(DenseSlot { n_in, n_out, w, b });
            n_in = n_out;
        }
        Layout {
            hidden: h,
            input_dim: cfg.input_dim,
            lstm,
            dense,
            total: off,
        }
    }
}

struct LayerCache<T> {
    /// Activated gates, `T*B x 4H`.
    gates: Vec<T>,
    /// Cell states, `T*B x H`.
    c: Vec<T>,
    /// `tanh(c)`, `T*B x H`.
    tc: Vec<T>,
    /// Hidden states, `T*B x H`.
    h: Vec<T>,
}

pub(crate) struct Forward<T> {
    steps: usize,
    batch: usize,
    /// Time-major copy of the input, `T*B x D`.
    input: Vec<T>,
    layers: Vec<LayerCache<T>>,
    /// Head activations: concatenated final hidden states, then each dense output.
    acts: Vec<Vec<T>>,
}

impl<T: Scalar> Forward<T> {
    /// `B x P` outputs.
    pub fn output(&self) -> &[T] {
        self.acts.last().unwrap()
    }
}

#[cfg(target_arch = "x86_64")]
fn has_avx2() -> bool {
    std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma")
}

/// Runs the network on `inputs.len()` examples, each `steps x input_dim`
/// row-major.
pub(crate) fn forward<T: Scalar>(
    layout: &Layout,
    params: &[T],
    inputs: &[&[f64]],
    steps: usize,
) -> Forward<T> {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the required CPU features were detected at runtime.
        return unsafe { forward_avx2(layout, params, inputs, steps) };
    }
    forward_impl(layout, params, inputs, steps)
}

/// Accumulates into `grad` the gradient of `sum_b sum_p d_out[b,p] * out[b,p]`.
pub(crate) fn backward<T: Scalar>(
    layout: &Layout,
    params: &[T],
    fwd: &Forward<T>,
    d_out: &[T],
    grad: &mut [T],
) {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: the required CPU features were detected at runtime.
        return unsafe { backward_avx2(layout, params, fwd, d_out, grad) };
    }
    backward_impl(layout, params, fwd, d_out, grad)
}

// The AVX2 entry points only widen the vector units available to the
// inlined generic code; nothing is contracted into FMA, so both paths give
// identical bits.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn forward_avx2<T: Scalar>(
    layout: &Layout,
    params: &[T],
    inputs: &[&[f64]],
    steps: usize,
) -> Forward<T> {
    forward_impl(layout, params, inputs, steps)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn backward_avx2<T: Scalar>(
    layout: &Layout,
    params: &[T],
    fwd: &Forward<T>,
    d_out: &[T],
    grad: &mut [T],
) {
    backward_impl(layout, params, fwd, d_out, grad)
}

#[inline(always)]
fn cell_step<T: Scalar>(g: &mut [T], c_prev: Option<&[T]>, c: &mut [T], tc: &mut [T], hs: &mut [T]) {
    let h = c.len();
    for v in &mut g[..2 * h] {
        *v = v.sigmoid();
    }
    for v in &mut g[2 * h..3 * h] {
        *v = v.tanh();
    }
    for v in &mut g[3 * h..4 * h] {
        *v = v.sigmoid();
    }
    let (i_g, rest) = g.split_at(h);
    let (f_g, rest) = rest.split_at(h);
    let (c_g, o_g) = rest.split_at(h);
    let (tc, hs, o_g) = (&mut tc[..h], &mut hs[..h], &o_g[..h]);
    match c_prev {
        Some(prev) => {
            let prev = &prev[..h];
            for u in 0..h {
                c[u] = f_g[u] * prev[u] + i_g[u] * c_g[u];
            }
        }
        None => {
            for u in 0..h {
                c[u] = i_g[u] * c_g[u];
            }
        }
    }
    for u in 0..h {
        tc[u] = c[u].tanh();
        hs[u] = o_g[u] * tc[u];
    }
}

#[inline(always)]
fn forward_impl<T: Scalar>(
    layout: &Layout,
    params: &[T],
    inputs: &[&[f64]],
    steps: usize,
) -> Forward<T> {
    let batch = inputs.len();
    let d = layout.input_dim;
    let h = layout.hidden;
    let g4 = 4 * h;
    let rows = steps * batch;
    let bh = batch * h;

    let mut input = vec![T::ZERO; rows * d];
    for (b, x) in inputs.iter().enumerate() {
        for t in 0..steps {
            let dst = (t * batch + b) * d;
            for k in 0..d {
                input[dst + k] = T::of(x[t * d + k]);
            }
        }
    }

    let mut layers: Vec<LayerCache<T>> = Vec::with_capacity(layout.lstm.len());
    for (l, slot) in layout.lstm.iter().enumerate() {
        let x: &[T] = if l == 0 { &input } else { &layers[l - 1].h };
        let w_ih = &params[slot.w_ih..slot.w_ih + g4 * slot.n_in];
        let w_hh = &params[slot.w_hh..slot.w_hh + g4 * h];
        let bias = &params[slot.bias..slot.bias + g4];

        let mut gates = vec![T::ZERO; rows * g4];
        for row in gates.chunks_exact_mut(g4) {
            row.copy_from_slice(bias);
        }
        gemm(rows, slot.n_in, g4, x, false, w_ih, true, T::ONE, &mut gates);

        let mut c = vec![T::ZERO; rows * h];
        let mut tc = vec![T::ZERO; rows * h];
        let mut hs = vec![T::ZERO; rows * h];
        for t in 0..steps {
            let g_lo = t * batch * g4;
            let s_lo = t * bh;
            if t > 0 {
                let (done, _) = hs.split_at(s_lo);
                gemm(
                    batch,
                    h,
                    g4,
                    &done[s_lo - bh..],
                    false,
                    w_hh,
                    true,
                    T::ONE,
                    &mut gates[g_lo..g_lo + batch * g4],
                );
            }
            let (c_done, c_cur) = c.split_at_mut(s_lo);
            let c_prev_block = if t > 0 { Some(&c_done[s_lo - bh..]) } else { None };
            for b in 0..batch {
                cell_step(
                    &mut gates[g_lo + b * g4..g_lo + (b + 1) * g4],
                    c_prev_block.map(|p| &p[b * h..(b + 1) * h]),
                    &mut c_cur[b * h..(b + 1) * h],
                    &mut tc[s_lo + b * h..s_lo + (b + 1) * h],
                    &mut hs[s_lo + b * h..s_lo + (b + 1) * h],
                );
            }
        }
        layers.push(LayerCache {
            gates,
            c,
            tc,
            h: hs,
        });
    }

    let n_layers = layout.lstm.len();
    let width = n_layers * h;
    let mut z0 = vec![T::ZERO; batch * width];
    if steps > 0 {
        let last = (steps - 1) * bh;
        for b in 0..batch {
            for (l, cache) in layers.iter().enumerate() {
                let src = last + b * h;
                z0[b * width + l * h..b * width + (l + 1) * h]
                    .copy_from_slice(&cache.h[src..src + h]);
            }
        }
    }

    let mut acts = vec![z0];
    let n_dense = layout.dense.len();
    for (j, slot) in layout.dense.iter().enumerate() {
        let mut out = vec![T::ZERO; batch * slot.n_out];
        for row in out.chunks_exact_mut(slot.n_out) {
            row.copy_from_slice(&params[slot.b..slot.b + slot.n_out]);
        }
        gemm(
            batch,
            slot.n_in,
            slot.n_out,
            acts.last().unwrap(),
            false,
            &params[slot.w..slot.w + slot.n_in * slot.n_out],
            true,
            T::ONE,
            &mut out,
        );
        if j + 1 < n_dense {
            for v in out.iter_mut() {
                *v = v.max0();
            }
        }
        acts.push(out);
    }

    Forward {
        steps,
        batch,
        input,
        layers,
        acts,
    }
}

/// Gate pre-activation gradients for one example at one step. On entry
/// `dc` holds the cell gradient flowing back from step `t + 1`; on exit it
/// holds the one flowing to step `t - 1`.
#[inline(always)]
fn cell_grad<T: Scalar>(
    gates: &[T],
    c_prev: Option<&[T]>,
    tc: &[T],
    dh: &[T],
    dc: &mut [T],
    da: &mut [T],
) {
    let h = dc.len();
    let (i_g, rest) = gates.split_at(h);
    let (f_g, rest) = rest.split_at(h);
    let (c_g, o_g) = rest.split_at(h);
    let (da_i, rest) = da.split_at_mut(h);
    let (da_f, rest) = rest.split_at_mut(h);
    let (da_c, da_o) = rest.split_at_mut(h);
    let (o_g, tc, dh, da_o) = (&o_g[..h], &tc[..h], &dh[..h], &mut da_o[..h]);
    for u in 0..h {
        let d_o = dh[u] * tc[u];
        let dcu = dc[u] + dh[u] * o_g[u] * (T::ONE - tc[u] * tc[u]);
        da_i[u] = dcu * c_g[u] * i_g[u] * (T::ONE - i_g[u]);
        da_c[u] = dcu * i_g[u] * (T::ONE - c_g[u] * c_g[u]);
        da_o[u] = d_o * o_g[u] * (T::ONE - o_g[u]);
        dc[u] = dcu;
    }
    match c_prev {
        Some(prev) => {
            let prev = &prev[..h];
            for u in 0..h {
                da_f[u] = dc[u] * prev[u] * f_g[u] * (T::ONE - f_g[u]);
                dc[u] = dc[u] * f_g[u];
            }
        }
        None => {
            for u in 0..h {
                da_f[u] = T::ZERO;
                dc[u] = dc[u] * f_g[u];
            }
        }
    }
}

#[inline(always)]
fn backward_impl<T: Scalar>(
    layout: &Layout,
    params: &[T],
    fwd: &Forward<T>,
    d_out: &[T],
    grad: &mut [T],
) {
    let batch = fwd.batch;
    let steps = fwd.steps;
    let h = layout.hidden;
    let g4 = 4 * h;
    let rows = steps * batch;
    let bh = batch * h;

    // Dense head, top down.
    let mut delta = d_out.to_vec();
    for (j, slot) in layout.dense.iter().enumerate().rev() {
        let a_in = &fwd.acts[j];
        let out = &fwd.acts[j + 1];
        if j + 1 < layout.dense.len() {
            for (d, &a) in delta.iter_mut().zip(out.iter()) {
                if a <= T::ZERO {
                    *d = T::ZERO;
                }
            }
        }
        gemm(
            slot.n_out,
            batch,
            slot.n_in,
            &delta,
            true,
            a_in,
            false,
            T::ONE,
            &mut grad[slot.w..slot.w + slot.n_out * slot.n_in],
        );
        let gb = &mut grad[slot.b..slot.b + slot.n_out];
        for row in delta.chunks_exact(slot.n_out) {
            for (g, &d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut d_in = vec![T::ZERO; batch * slot.n_in];
        gemm(
            batch,
            slot.n_out,
            slot.n_in,
            &delta,
            false,
            &params[slot.w..slot.w + slot.n_out * slot.n_in],
            false,
            T::ZERO,
            &mut d_in,
        );
        delta = d_in;
    }
    if steps == 0 {
        return;
    }

    // Gradient w.r.t. each layer's hidden sequence; the head feeds the last
    // step, and the recurrent term is added in place as steps are unwound.
    let n_layers = layout.lstm.len();
    let width = n_layers * h;
    let mut d_h: Vec<T> = vec![T::ZERO; rows * h];
    for l in (0..n_layers).rev() {
        let slot = layout.lstm[l];
        let cache = &fwd.layers[l];
        let last = (steps - 1) * bh;
        for b in 0..batch {
            let src = &delta[b * width + l * h..b * width + (l + 1) * h];
            for (dst, &s) in d_h[last + b * h..last + (b + 1) * h].iter_mut().zip(src) {
                *dst += s;
            }
        }

        let w_hh = &params[slot.w_hh..slot.w_hh + g4 * h];
        let mut d_a = vec![T::ZERO; rows * g4];
        let mut dc = vec![T::ZERO; bh];
        for t in (0..steps).rev() {
            let g_lo = t * batch * g4;
            let s_lo = t * bh;
            for b in 0..batch {
                let o = s_lo + b * h;
                cell_grad(
                    &cache.gates[g_lo + b * g4..g_lo + (b + 1) * g4],
                    if t > 0 { Some(&cache.c[o - bh..o - bh + h]) } else { None },
                    &cache.tc[o..o + h],
                    &d_h[o..o + h],
                    &mut dc[b * h..(b + 1) * h],
                    &mut d_a[g_lo + b * g4..g_lo + (b + 1) * g4],
                );
            }
            if t > 0 {
                gemm(
                    batch,
                    g4,
                    h,
                    &d_a[g_lo..g_lo + batch * g4],
                    false,
                    w_hh,
                    false,
                    T::ONE,
                    &mut d_h[s_lo - bh..s_lo],
                );
            }
        }

        if steps > 1 {
            gemm(
                g4,
                (steps - 1) * batch,
                h,
                &d_a[batch * g4..],
                true,
                &cache.h[..(steps - 1) * bh],
                false,
                T::ONE,
                &mut grad[slot.w_hh..slot.w_hh + g4 * h],
            );
        }
        let x: &[T] = if l == 0 {
            &fwd.input
        } else {
            &fwd.layers[l - 1].h
        };
        gemm(
            g4,
            rows,
            slot.n_in,
            &d_a,
            true,
            x,
            false,
            T::ONE,
            &mut grad[slot.w_ih..slot.w_ih + g4 * slot.n_in],
        );
        let gb = &mut grad[slot.bias..slot.bias + g4];
        for row in d_a.chunks_exact(g4) {
            for (g, &d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        if l > 0 {
            gemm(
                rows,
                g4,
                h,
                &d_a,
                false,
                &params[slot.w_ih..slot.w_ih + g4 * h],
                false,
                T::ZERO,
                &mut d_h,
            );
        }
    }
}
