//! Batched jet propagation and its reverse sweep.
//!
//! A block of points sharing one [`DerivRequest`] is pushed through the
//! network together so the per-layer work becomes small matrix-matrix
//! products over contiguous buffers. Buffers are channel-major then
//! neuron-major with the point index fastest: `buf[(ch * width + i) * b + p]`.
//!
//! The value channel accumulates the same fused sums in the same order as
//! the per-point [`super::net::forward`], so batch values are bit-identical
//! to single-point evaluation.

use super::jet::{apply_tanh_jet, tanh_d1, tanh_d2, tanh_d3, DerivRequest};
use super::net::ParamVector;

/// Per-layer forward state kept for the reverse sweep: hidden tanh outputs
/// and hidden pre-activation jets.
pub(crate) struct BatchTrace {
    /// tanh(z.val) per hidden layer, width × b.
    pub t: Vec<Vec<f64>>,
    /// Pre-activation jets per hidden layer, channels × width × b.
    pub z: Vec<Vec<f64>>,
}

impl BatchTrace {
    pub fn byte_size(spec_hidden: &[usize], channels: usize, b: usize) -> usize {
        spec_hidden
            .iter()
            .map(|&w| w * b * (channels + 1) * std::mem::size_of::<f64>())
            .sum()
    }
}

/// Input jets for a block: value channel carries the coordinates, each
/// first-order channel is the matching one-hot seed, second-order channels
/// start at zero.
fn seed_input(req: &DerivRequest, xs: &[f64], b: usize, input_dim: usize) -> Vec<f64> {
    let n_ch = req.channels();
    let mut a0 = vec![0.0; n_ch * input_dim * b];
    for p in 0..b {
        for k in 0..input_dim {
            a0[k * b + p] = xs[p * input_dim + k];
        }
    }
    for (ci, &i) in req.first_order().iter().enumerate() {
        let ch = 1 + ci;
        for p in 0..b {
            a0[(ch * input_dim + i) * b + p] = 1.0;
        }
    }
    a0
}

/// z[ch] += W · a[ch] for every channel; bias afterwards into the value
/// channel only, mirroring the per-point accumulation order.
fn affine_forward(
    params: &ParamVector,
    layer: usize,
    n_ch: usize,
    b: usize,
    a: &[f64],
    z: &mut [f64],
) {
    let dims = params.spec.layer_dims();
    let offsets = params.spec.layer_offsets();
    let (fan_in, fan_out) = dims[layer];
    let (w_off, b_off) = offsets[layer];
    let w = &params.values[w_off..w_off + fan_in * fan_out];
    debug_assert_eq!(a.len(), n_ch * fan_in * b);
    debug_assert_eq!(z.len(), n_ch * fan_out * b);
    for ch in 0..n_ch {
        for i in 0..fan_out {
            let zi = &mut z[(ch * fan_out + i) * b..(ch * fan_out + i + 1) * b];
            for k in 0..fan_in {
                let wik = w[i * fan_in + k];
                let ak = &a[(ch * fan_in + k) * b..(ch * fan_in + k + 1) * b];
                for p in 0..b {
                    zi[p] += wik * ak[p];
                }
            }
        }
    }
    for i in 0..fan_out {
        let bias = params.values[b_off + i];
        for p in 0..b {
            z[i * b + p] += bias;
        }
    }
}

/// Batched tanh applied to jets; same formulas as the per-point path.
fn tanh_forward(req: &DerivRequest, z: &[f64], out: &mut [f64], width: usize, b: usize) {
    if b == 1 {
        apply_tanh_jet(req, z, out, width);
        return;
    }
    for n in 0..width * b {
        out[n] = z[n].tanh();
    }
    let n_first = req.first_order().len();
    for ci in 0..n_first {
        let ch = 1 + ci;
        for n in 0..width {
            let base = (ch * width + n) * b;
            for p in 0..b {
                let t = out[n * b + p];
                out[base + p] = tanh_d1(t) * z[base + p];
            }
        }
    }
    for (ci, &(i, _)) in req.second_order().iter().enumerate() {
        let ch = 1 + n_first + ci;
        let ch_d1 = req.d1_channel(i).unwrap();
        for n in 0..width {
            let base = (ch * width + n) * b;
            let base_d1 = (ch_d1 * width + n) * b;
            for p in 0..b {
                let t = out[n * b + p];
                let zd1 = z[base_d1 + p];
                out[base + p] = tanh_d1(t) * z[base + p] + tanh_d2(t) * zd1 * zd1;
            }
        }
    }
}

/// Forward a block of `b` points (`xs` point-major, b × input_dim).
/// Returns the output channels (n_ch × b) and, when `keep` is set, the
/// forward state needed for a storage-backed reverse sweep.
pub(crate) fn batch_forward(
    params: &ParamVector,
    req: &DerivRequest,
    xs: &[f64],
    b: usize,
    keep: bool,
) -> (Vec<f64>, Option<BatchTrace>) {
    let spec = &params.spec;
    let n_ch = req.channels();
    let dims = spec.layer_dims();
    let n_layers = dims.len();
    let n_hidden = n_layers - 1;

    let mut trace = keep.then(|| BatchTrace {
        t: Vec::with_capacity(n_hidden),
        z: Vec::with_capacity(n_hidden),
    });

    let mut a = seed_input(req, xs, b, spec.input_dim);
    for l in 0..n_layers {
        let (_, fan_out) = dims[l];
        let mut z = vec![0.0; n_ch * fan_out * b];
        affine_forward(params, l, n_ch, b, &a, &mut z);
        if l + 1 < n_layers {
            let mut out = vec![0.0; n_ch * fan_out * b];
            tanh_forward(req, &z, &mut out, fan_out, b);
            if let Some(tr) = trace.as_mut() {
                tr.t.push(out[..fan_out * b].to_vec());
                tr.z.push(z);
            }
            a = out;
        } else {
            a = z;
        }
    }
    // Output width is 1, so `a` is already the n_ch × b channel matrix.
    (a, trace)
}

/// Reverse sweep for one block. `adj` holds ∂loss/∂(output channel) as an
/// n_ch × b matrix; parameter adjoints are accumulated into `grad`.
/// Recomputes the forward state when no trace was kept.
pub(crate) fn batch_backward(
    params: &ParamVector,
    req: &DerivRequest,
    xs: &[f64],
    b: usize,
    trace: Option<&BatchTrace>,
    adj: &[f64],
    grad: &mut [f64],
) {
    let spec = &params.spec;
    let n_ch = req.channels();
    let dims = spec.layer_dims();
    let offsets = spec.layer_offsets();
    let n_layers = dims.len();
    let n_hidden = n_layers - 1;
    debug_assert_eq!(adj.len(), n_ch * b);

    let recomputed;
    let state: &BatchTrace = match trace {
        Some(t) => t,
        None => {
            let (_, tr) = batch_forward(params, req, xs, b, true);
            recomputed = tr.unwrap();
            &recomputed
        }
    };

    // Post-activation jets of hidden layer h, rebuilt from the stored state.
    let hidden_a = |h: usize| -> Vec<f64> {
        let width = dims[h].1;
        let mut out = vec![0.0; n_ch * width * b];
        tanh_forward_from_t(req, &state.z[h], &state.t[h], &mut out, width, b);
        out
    };

    let mut z_adj: Vec<f64> = adj.to_vec();
    for l in (0..n_layers).rev() {
        let (fan_in, fan_out) = dims[l];
        let (w_off, b_off) = offsets[l];

        // Input jets of this layer.
        let a_prev = if l == 0 {
            seed_input(req, xs, b, spec.input_dim)
        } else {
            hidden_a(l - 1)
        };

        // Weight and bias adjoints.
        for ch in 0..n_ch {
            for i in 0..fan_out {
                let zi = &z_adj[(ch * fan_out + i) * b..(ch * fan_out + i + 1) * b];
                for k in 0..fan_in {
                    let ak = &a_prev[(ch * fan_in + k) * b..(ch * fan_in + k + 1) * b];
                    let mut acc = 0.0;
                    for p in 0..b {
                        acc += zi[p] * ak[p];
                    }
                    grad[w_off + i * fan_in + k] += acc;
                }
            }
        }
        for i in 0..fan_out {
            let mut acc = 0.0;
            for p in 0..b {
                acc += z_adj[i * b + p];
            }
            grad[b_off + i] += acc;
        }

        if l == 0 {
            break;
        }

        // a_adj = Wᵀ z_adj per channel.
        let w = &params.values[w_off..w_off + fan_in * fan_out];
        let mut a_adj = vec![0.0; n_ch * fan_in * b];
        for ch in 0..n_ch {
            for i in 0..fan_out {
                let zi = &z_adj[(ch * fan_out + i) * b..(ch * fan_out + i + 1) * b];
                for k in 0..fan_in {
                    let wik = w[i * fan_in + k];
                    let ak = &mut a_adj[(ch * fan_in + k) * b..(ch * fan_in + k + 1) * b];
                    for p in 0..b {
                        ak[p] += wik * zi[p];
                    }
                }
            }
        }

        // Tanh reverse through hidden layer l-1.
        let h = l - 1;
        let width = dims[h].1;
        z_adj = tanh_backward(req, &state.z[h], &state.t[h], &a_adj, width, b);
    }
    let _ = n_hidden;
}

/// Same as `tanh_forward` but reuses the already computed tanh values.
fn tanh_forward_from_t(
    req: &DerivRequest,
    z: &[f64],
    t: &[f64],
    out: &mut [f64],
    width: usize,
    b: usize,
) {
    out[..width * b].copy_from_slice(t);
    let n_first = req.first_order().len();
    for ci in 0..n_first {
        let ch = 1 + ci;
        for n in 0..width {
            let base = (ch * width + n) * b;
            for p in 0..b {
                out[base + p] = tanh_d1(t[n * b + p]) * z[base + p];
            }
        }
    }
    for (ci, &(i, _)) in req.second_order().iter().enumerate() {
        let ch = 1 + n_first + ci;
        let ch_d1 = req.d1_channel(i).unwrap();
        for n in 0..width {
            let base = (ch * width + n) * b;
            let base_d1 = (ch_d1 * width + n) * b;
            for p in 0..b {
                let tv = t[n * b + p];
                let zd1 = z[base_d1 + p];
                out[base + p] = tanh_d1(tv) * z[base + p] + tanh_d2(tv) * zd1 * zd1;
            }
        }
    }
}

/// Adjoint of the jet-propagating tanh. With s = tanh′, s′ = tanh″,
/// s″ = tanh‴ evaluated at the pre-activation:
///   z̄.val   = ā.val·s + Σ_i ā.d1_i·s′·z.d1_i
///           + Σ_ii ā.d2_ii·(s′·z.d2_ii + s″·z.d1_i²)
///   z̄.d1_i  = ā.d1_i·s + ā.d2_ii·2·s′·z.d1_i
///   z̄.d2_ii = ā.d2_ii·s
fn tanh_backward(
    req: &DerivRequest,
    z: &[f64],
    t: &[f64],
    a_adj: &[f64],
    width: usize,
    b: usize,
) -> Vec<f64> {
    let n_ch = req.channels();
    let n_first = req.first_order().len();
    let mut z_adj = vec![0.0; n_ch * width * b];

    // Value channel from the value adjoint.
    for n in 0..width * b {
        z_adj[n] = a_adj[n] * tanh_d1(t[n]);
    }
    // First-order channels.
    for ci in 0..n_first {
        let ch = 1 + ci;
        for n in 0..width {
            let base = (ch * width + n) * b;
            for p in 0..b {
                let tv = t[n * b + p];
                let ad = a_adj[base + p];
                z_adj[base + p] += ad * tanh_d1(tv);
                z_adj[n * b + p] += ad * tanh_d2(tv) * z[base + p];
            }
        }
    }
    // Second-order channels.
    for (ci, &(i, _)) in req.second_order().iter().enumerate() {
        let ch = 1 + n_first + ci;
        let ch_d1 = req.d1_channel(i).unwrap();
        for n in 0..width {
            let base = (ch * width + n) * b;
            let base_d1 = (ch_d1 * width + n) * b;
            for p in 0..b {
                let tv = t[n * b + p];
                let ad = a_adj[base + p];
                let zd1 = z[base_d1 + p];
                let zd2 = z[base + p];
                z_adj[base + p] += ad * tanh_d1(tv);
                z_adj[base_d1 + p] += ad * 2.0 * tanh_d2(tv) * zd1;
                z_adj[n * b + p] += ad * (tanh_d2(tv) * zd2 + tanh_d3(tv) * zd1 * zd1);
            }
        }
    }
    z_adj
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::jet::forward_jet;
    use crate::diffnet::net::{forward, init_params, NetSpec};

    fn fp_request() -> DerivRequest {
        DerivRequest::new(&[0, 1, 2], &[(2, 2)]).unwrap()
    }

    #[test]
    fn batch_forward_matches_per_point_bitwise() {
        let spec = NetSpec::new(3, vec![9, 7]).unwrap();
        let p = init_params(&spec, 17).unwrap();
        let req = fp_request();
        let pts: Vec<[f64; 3]> = (0..11)
            .map(|i| {
                let s = i as f64;
                [0.1 * s, 1.0 - 0.07 * s, -2.0 + 0.4 * s]
            })
            .collect();
        let xs: Vec<f64> = pts.iter().flatten().copied().collect();
        let b = pts.len();
        let (out, _) = batch_forward(&p, &req, &xs, b, false);
        for (pi, pt) in pts.iter().enumerate() {
            let jet = forward_jet(&p, pt, &req).unwrap();
            assert_eq!(out[pi], jet.value);
            assert_eq!(out[pi], forward(&p, pt).unwrap());
            for (ci, &i) in req.first_order().iter().enumerate() {
                assert_eq!(out[(1 + ci) * b + pi], jet.d1[&i]);
            }
            assert_eq!(out[4 * b + pi], jet.d2[&(2, 2)]);
        }
    }

    /// Independent gradient check: perturb one parameter at a time and
    /// finite-difference a scalar functional of the jet outputs.
    #[test]
    fn batch_backward_matches_finite_differences() {
        let spec = NetSpec::new(3, vec![6, 5]).unwrap();
        let p = init_params(&spec, 23).unwrap();
        let req = fp_request();
        let b = 4;
        let xs: Vec<f64> = vec![
            0.2, 0.5, -0.3, 0.8, 0.1, 1.2, 0.4, 0.9, -1.5, 0.6, 0.3, 0.7,
        ];
        // adjoint seeds: arbitrary fixed weights per channel/point
        let n_ch = req.channels();
        let adj: Vec<f64> = (0..n_ch * b)
            .map(|k| 0.3 + 0.1 * (k as f64) * if k % 2 == 0 { 1.0 } else { -1.0 })
            .collect();

        let functional = |params: &ParamVector| -> f64 {
            let (out, _) = batch_forward(params, &req, &xs, b, false);
            out.iter().zip(&adj).map(|(o, a)| o * a).sum()
        };

        let mut grad = vec![0.0; p.values.len()];
        batch_backward(&p, &req, &xs, b, None, &adj, &mut grad);

        let h = 1e-6;
        for k in 0..p.values.len() {
            let mut pp = p.clone();
            pp.values[k] += h;
            let mut pm = p.clone();
            pm.values[k] -= h;
            let fd = (functional(&pp) - functional(&pm)) / (2.0 * h);
            let scale = grad[k].abs().max(fd.abs()).max(1e-4);
            assert!(
                (grad[k] - fd).abs() / scale < 1e-6,
                "param {k}: ad {} vs fd {fd}",
                grad[k]
            );
        }
    }

    #[test]
    fn stored_trace_and_recompute_agree_exactly() {
        let spec = NetSpec::new(3, vec![8, 8]).unwrap();
        let p = init_params(&spec, 31).unwrap();
        let req = fp_request();
        let b = 5;
        let xs: Vec<f64> = (0..b * 3).map(|i| 0.05 * i as f64 - 0.3).collect();
        let (_, trace) = batch_forward(&p, &req, &xs, b, true);
        let adj: Vec<f64> = (0..req.channels() * b).map(|k| (k as f64) * 0.01 - 0.2).collect();

        let mut g_stored = vec![0.0; p.values.len()];
        batch_backward(&p, &req, &xs, b, trace.as_ref(), &adj, &mut g_stored);
        let mut g_recomputed = vec![0.0; p.values.len()];
        batch_backward(&p, &req, &xs, b, None, &adj, &mut g_recomputed);
        assert_eq!(g_stored, g_recomputed);
    }
}
