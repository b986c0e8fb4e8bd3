//! Input jets: network values bundled with exact input derivatives.
//!
//! A jet carries the value together with the requested first derivatives and
//! diagonal second derivatives at one point. Jets propagate through each
//! layer by the chain rule: an affine map acts channel-wise, and tanh mixes
//! channels through tanh′ = 1 − tanh² and tanh″ = −2·tanh·(1 − tanh²).

use super::net::{forward, ParamVector};
use super::DiffError;
use std::collections::BTreeMap;

/// Which input derivatives an evaluation should produce.
///
/// `first_order` holds input indices, `second_order` holds index pairs; v1
/// supports diagonal pairs only (the kinetic residuals need ∂_vv alone) and
/// every second-order pair must draw its indices from `first_order`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DerivRequest {
    first: Vec<usize>,
    second: Vec<(usize, usize)>,
}

impl DerivRequest {
    pub fn new(first: &[usize], second: &[(usize, usize)]) -> Result<Self, DiffError> {
        let mut f: Vec<usize> = first.to_vec();
        f.sort_unstable();
        f.dedup();
        let mut s: Vec<(usize, usize)> = second.to_vec();
        s.sort_unstable();
        s.dedup();
        for &(i, j) in &s {
            if !f.contains(&i) || !f.contains(&j) {
                return Err(DiffError::InvalidInput(format!(
                    "second-order pair ({i},{j}) not contained in first_order set"
                )));
            }
        }
        Ok(DerivRequest {
            first: f,
            second: s,
        })
    }

    /// Value only; equivalent to plain forward evaluation.
    pub fn value_only() -> Self {
        DerivRequest {
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn first_order(&self) -> &[usize] {
        &self.first
    }

    pub fn second_order(&self) -> &[(usize, usize)] {
        &self.second
    }

    /// Number of propagated channels: value + first + second.
    pub fn channels(&self) -> usize {
        1 + self.first.len() + self.second.len()
    }

    /// Check evaluability against an input dimension; rejects out-of-range
    /// indices and (unsupported) off-diagonal second-order pairs.
    pub fn check(&self, input_dim: usize) -> Result<(), DiffError> {
        if let Some(&i) = self.first.iter().find(|&&i| i >= input_dim) {
            return Err(DiffError::InvalidInput(format!(
                "derivative index {i} out of range for input_dim {input_dim}"
            )));
        }
        if let Some(&(i, j)) = self.second.iter().find(|&&(i, j)| i != j) {
            return Err(DiffError::UnsupportedRequest(format!(
                "off-diagonal second derivative ({i},{j}) is not supported"
            )));
        }
        Ok(())
    }

    /// Position of d1[i] in the channel layout.
    pub(crate) fn d1_channel(&self, i: usize) -> Option<usize> {
        self.first.iter().position(|&k| k == i).map(|p| 1 + p)
    }
}

/// Network output at one point with its requested input derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub d1: BTreeMap<usize, f64>,
    pub d2: BTreeMap<(usize, usize), f64>,
}

impl Jet {
    /// Jet of the constant-zero function.
    pub fn zero(req: &DerivRequest) -> Self {
        Jet {
            value: 0.0,
            d1: req.first_order().iter().map(|&i| (i, 0.0)).collect(),
            d2: req.second_order().iter().map(|&p| (p, 0.0)).collect(),
        }
    }

    pub fn from_channels(req: &DerivRequest, channels: &[f64]) -> Self {
        debug_assert_eq!(channels.len(), req.channels());
        let mut d1 = BTreeMap::new();
        for (p, &i) in req.first_order().iter().enumerate() {
            d1.insert(i, channels[1 + p]);
        }
        let mut d2 = BTreeMap::new();
        let base = 1 + req.first_order().len();
        for (p, &pair) in req.second_order().iter().enumerate() {
            d2.insert(pair, channels[base + p]);
        }
        Jet {
            value: channels[0],
            d1,
            d2,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.d1.values().all(|v| v.is_finite())
            && self.d2.values().all(|v| v.is_finite())
    }
}

/// Anything that can be evaluated with input jets at a point: trained
/// networks and closed-form reference solutions alike.
pub trait JetField {
    fn jet(&self, x: &[f64], req: &DerivRequest) -> Result<Jet, DiffError>;

    fn value(&self, x: &[f64]) -> Result<f64, DiffError> {
        Ok(self.jet(x, &DerivRequest::value_only())?.value)
    }
}

impl JetField for ParamVector {
    fn jet(&self, x: &[f64], req: &DerivRequest) -> Result<Jet, DiffError> {
        forward_jet(self, x, req)
    }

    fn value(&self, x: &[f64]) -> Result<f64, DiffError> {
        forward(self, x)
    }
}

/// First derivative of tanh at pre-activation with tanh value `t`.
#[inline]
pub(crate) fn tanh_d1(t: f64) -> f64 {
    1.0 - t * t
}

/// Second derivative of tanh: −2·t·(1 − t²).
#[inline]
pub(crate) fn tanh_d2(t: f64) -> f64 {
    -2.0 * t * (1.0 - t * t)
}

/// Third derivative of tanh: −2·(1 − t²)·(1 − 3t²); needed by the reverse
/// sweep through second-order channels.
#[inline]
pub(crate) fn tanh_d3(t: f64) -> f64 {
    let s = 1.0 - t * t;
    -2.0 * s * (1.0 - 3.0 * t * t)
}

/// Exact forward propagation of truncated Taylor data through the network.
///
/// The value channel equals [`forward`] bit-for-bit: both paths accumulate
/// the same affine sums in the same order.
pub fn forward_jet(params: &ParamVector, x: &[f64], req: &DerivRequest) -> Result<Jet, DiffError> {
    let spec = &params.spec;
    if x.len() != spec.input_dim {
        return Err(DiffError::InvalidInput(format!(
            "input dimension {} does not match network input_dim {}",
            x.len(),
            spec.input_dim
        )));
    }
    req.check(spec.input_dim)?;

    let n_ch = req.channels();
    let dims = spec.layer_dims();
    let offsets = spec.layer_offsets();
    let n_layers = dims.len();

    // Channel-major activations: a[ch * width + neuron].
    let mut a = vec![0.0; n_ch * spec.input_dim];
    a[..spec.input_dim].copy_from_slice(x);
    for (p, &i) in req.first_order().iter().enumerate() {
        a[(1 + p) * spec.input_dim + i] = 1.0;
    }
    // Second-order input channels start at zero.

    let mut z = Vec::new();
    for l in 0..n_layers {
        let (fan_in, fan_out) = dims[l];
        let (w_off, b_off) = offsets[l];
        z.clear();
        z.resize(n_ch * fan_out, 0.0);
        for ch in 0..n_ch {
            let a_ch = &a[ch * fan_in..(ch + 1) * fan_in];
            let z_ch = &mut z[ch * fan_out..(ch + 1) * fan_out];
            for i in 0..fan_out {
                let row = &params.values[w_off + i * fan_in..w_off + (i + 1) * fan_in];
                let mut acc = 0.0;
                for (wk, ak) in row.iter().zip(a_ch.iter()) {
                    acc += wk * ak;
                }
                z_ch[i] = acc;
            }
        }
        for i in 0..fan_out {
            z[i] += params.values[b_off + i];
        }

        if l + 1 < n_layers {
            a.clear();
            a.resize(n_ch * fan_out, 0.0);
            apply_tanh_jet(req, &z, &mut a, fan_out);
        } else {
            a.clone_from(&z);
        }
    }

    let channels: Vec<f64> = (0..n_ch).map(|ch| a[ch]).collect();
    Ok(Jet::from_channels(req, &channels))
}

/// Tanh applied to a jet, channel-major layout, shared by the per-point and
/// batched paths:
///   out.val  = tanh(z.val)
///   out.d1_i = s · z.d1_i                         with s  = 1 − tanh²
///   out.d2_ii = s · z.d2_ii + s′_t · z.d1_i²      with s′_t = tanh″
pub(crate) fn apply_tanh_jet(req: &DerivRequest, z: &[f64], out: &mut [f64], width: usize) {
    for n in 0..width {
        let t = z[n].tanh();
        out[n] = t;
    }
    let n_first = req.first_order().len();
    for p in 0..n_first {
        let ch = 1 + p;
        for n in 0..width {
            let t = out[n];
            out[ch * width + n] = tanh_d1(t) * z[ch * width + n];
        }
    }
    for (p, &(i, _)) in req.second_order().iter().enumerate() {
        let ch = 1 + n_first + p;
        let ch_d1 = req.d1_channel(i).unwrap();
        for n in 0..width {
            let t = out[n];
            let zd1 = z[ch_d1 * width + n];
            out[ch * width + n] = tanh_d1(t) * z[ch * width + n] + tanh_d2(t) * zd1 * zd1;
        }
    }
}
