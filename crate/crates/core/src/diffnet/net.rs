//! Network architecture, parameter storage, initialization, plain forward
//! evaluation, and the checkpoint format.

use super::DiffError;
use crate::collocation::seeded_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Hidden activation. Only tanh in v1: the Fokker--Planck residual contains
/// a second derivative, so the activation must be at least C².
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

/// Architecture of a fully connected network with an affine output layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl NetSpec {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>) -> Result<Self, DiffError> {
        let spec = NetSpec {
            input_dim,
            hidden_widths,
            output_dim: 1,
            activation: Activation::Tanh,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DiffError> {
        if self.input_dim == 0 {
            return Err(DiffError::InvalidInput("input_dim must be >= 1".into()));
        }
        if self.output_dim != 1 {
            return Err(DiffError::InvalidInput("output_dim must be 1".into()));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(DiffError::InvalidInput(
                "hidden_widths must be non-empty with all widths >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Per-layer (fan_in, fan_out) pairs, output layer included.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut prev = self.input_dim;
        for &w in &self.hidden_widths {
            dims.push((prev, w));
            prev = w;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    /// Total number of parameters: Σ_l (n_{l-1}·n_l + n_l).
    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|&(i, o)| i * o + o)
            .sum()
    }

    /// Offset of layer l's weight block in the flat parameter vector;
    /// biases follow the weights of the same layer.
    pub fn layer_offsets(&self) -> Vec<(usize, usize)> {
        let mut offsets = Vec::new();
        let mut pos = 0;
        for (fan_in, fan_out) in self.layer_dims() {
            let w_off = pos;
            pos += fan_in * fan_out;
            let b_off = pos;
            pos += fan_out;
            offsets.push((w_off, b_off));
        }
        offsets
    }
}

/// Flattened weights and biases of an MLP: the optimization variable θ.
///
/// Layout: for each layer in order, the weight matrix row-major with shape
/// (fan_out, fan_in), then the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub spec: NetSpec,
    pub values: Vec<f64>,
    /// Seed the parameters were initialized from; kept for checkpoints.
    pub seed: u64,
}

impl ParamVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Initialize parameters: weights uniform on [−1/√fan_in, +1/√fan_in] per
/// layer, biases zero. Deterministic given the seed.
pub fn init_params(spec: &NetSpec, seed: u64) -> Result<ParamVector, DiffError> {
    spec.validate()?;
    let mut values = vec![0.0; spec.param_count()];
    let mut rng = seeded_rng(seed, 0);
    let offsets = spec.layer_offsets();
    for ((fan_in, fan_out), (w_off, _)) in spec.layer_dims().into_iter().zip(offsets) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for w in &mut values[w_off..w_off + fan_in * fan_out] {
            *w = rng.gen_range(-bound..bound);
        }
        // biases stay zero
    }
    Ok(ParamVector {
        spec: spec.clone(),
        values,
        seed,
    })
}

/// Plain forward evaluation: alternating affine maps and tanh, affine output.
pub fn forward(params: &ParamVector, x: &[f64]) -> Result<f64, DiffError> {
    if x.len() != params.spec.input_dim {
        return Err(DiffError::InvalidInput(format!(
            "input dimension {} does not match network input_dim {}",
            x.len(),
            params.spec.input_dim
        )));
    }
    let dims = params.spec.layer_dims();
    let offsets = params.spec.layer_offsets();
    let n_layers = dims.len();
    let mut a: Vec<f64> = x.to_vec();
    let mut z: Vec<f64> = Vec::new();
    for l in 0..n_layers {
        let (fan_in, fan_out) = dims[l];
        let (w_off, b_off) = offsets[l];
        z.clear();
        z.resize(fan_out, 0.0);
        for i in 0..fan_out {
            let row = &params.values[w_off + i * fan_in..w_off + (i + 1) * fan_in];
            let mut acc = 0.0;
            for (wk, ak) in row.iter().zip(a.iter()) {
                acc += wk * ak;
            }
            z[i] = acc + params.values[b_off + i];
        }
        if l + 1 < n_layers {
            a.clear();
            a.extend(z.iter().map(|v| v.tanh()));
        } else {
            a.clone_from(&z);
        }
    }
    Ok(a[0])
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    spec: NetSpec,
    seed: u64,
    format_version: u32,
}

/// Checkpoint container: a little-endian u32 header length, a JSON header
/// `{spec, seed, format_version}`, then the flat little-endian f64 array.
pub fn write_checkpoint(params: &ParamVector, path: &Path) -> Result<(), DiffError> {
    let header = CheckpointHeader {
        spec: params.spec.clone(),
        seed: params.seed,
        format_version: CHECKPOINT_FORMAT_VERSION,
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| DiffError::Checkpoint(format!("header encode: {e}")))?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    file.write_all(&header_bytes)?;
    let mut buf = Vec::with_capacity(params.values.len() * 8);
    for v in &params.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<ParamVector, DiffError> {
    let mut file = std::fs::File::open(path)?;
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)
        .map_err(|_| DiffError::Checkpoint("truncated header length".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    if header_len == 0 || header_len > 1 << 20 {
        return Err(DiffError::Checkpoint(format!(
            "implausible header length {header_len}"
        )));
    }
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)
        .map_err(|_| DiffError::Checkpoint("truncated header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| DiffError::Checkpoint(format!("header decode: {e}")))?;
    if header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(DiffError::Checkpoint(format!(
            "unsupported format_version {}",
            header.format_version
        )));
    }
    header.spec.validate().map_err(|e| {
        DiffError::Checkpoint(format!("invalid network spec in header: {e}"))
    })?;
    let expected = header.spec.param_count();
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    if payload.len() != expected * 8 {
        return Err(DiffError::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            expected * 8,
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ParamVector {
        spec: header.spec,
        values,
        seed: header.seed,
    })
}
