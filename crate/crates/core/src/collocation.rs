//! Collocation sampling and fixed quadrature grids.
//!
//! The residual losses are Monte-Carlo sums over tensor products of per-axis
//! uniform samples (resampled every epoch), while the conservation
//! constraints are evaluated on a fixed [`TimeGrid`] combined with a fixed
//! Gauss--Legendre [`QuadGrid`] so that dual ascent sees low-variance
//! constraint values.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CollocationError {
    #[error("invalid sample request: {0}")]
    InvalidInput(String),
}

/// Which coordinate an axis of samples refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    T,
    X,
    V,
    Vx,
    Vy,
}

/// Sorted i.i.d. uniform samples along one axis.
#[derive(Debug, Clone)]
pub struct AxisSamples {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl AxisSamples {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Role of a batch of collocation points in the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchRole {
    Interior,
    Initial,
    Boundary,
}

/// Per-axis samples combined tensor-product style.
///
/// Interior and initial batches enumerate the full tensor product of their
/// axes. A boundary batch holds a `t` axis and a signed `v` axis; the spatial
/// coordinate of each point is derived from the sign of `v` so that every
/// point lies on an inflow face (x = 0 with v > 0, or x = 1 with v < 0).
#[derive(Debug, Clone)]
pub struct TensorBatch {
    pub axes: Vec<AxisSamples>,
    pub role: BatchRole,
}

impl TensorBatch {
    /// Number of points in the tensor product.
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Deterministic RNG for a (seed, stream) pair. Streams keep per-epoch and
/// per-role sample draws independent without consuming a shared sequence.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    // SplitMix64 mix so that nearby (seed, stream) pairs decorrelate.
    let mut z = seed
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(stream)
        .wrapping_add(0x2545f4914f6cdd1d);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^= z >> 31;
    ChaCha8Rng::seed_from_u64(z)
}

/// Draw `n` i.i.d. uniform samples on `[lo, hi]`, sorted ascending.
/// Deterministic per `(seed, n, lo, hi)`.
pub fn sample_uniform(
    seed: u64,
    n: usize,
    lo: f64,
    hi: f64,
    axis: Axis,
) -> Result<AxisSamples, CollocationError> {
    if n == 0 {
        return Err(CollocationError::InvalidInput(
            "sample count must be >= 1".into(),
        ));
    }
    if !(lo < hi) {
        return Err(CollocationError::InvalidInput(format!(
            "empty interval [{lo}, {hi}]"
        )));
    }
    let mut rng = seeded_rng(seed, axis_stream(axis));
    let mut values: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(AxisSamples {
        axis,
        values,
        lo,
        hi,
    })
}

fn axis_stream(axis: Axis) -> u64 {
    match axis {
        Axis::T => 1,
        Axis::X => 2,
        Axis::V => 3,
        Axis::Vx => 4,
        Axis::Vy => 5,
    }
}

/// Sample the inflow boundary Γ⁻ = {x=0, 0<v<V} ∪ {x=1, −V<v<0}.
///
/// Returns a boundary-role batch whose `v` axis carries `n` signed values
/// with magnitudes uniform in (0, V); the first ⌈n/2⌉ draws are assigned to
/// the x = 0 face (v > 0) and the rest to x = 1 (v < 0), so the per-face
/// counts differ by at most one.
pub fn sample_gamma_minus(
    seed: u64,
    n: usize,
    v_max: f64,
) -> Result<TensorBatch, CollocationError> {
    if n == 0 {
        return Err(CollocationError::InvalidInput(
            "boundary sample count must be >= 1".into(),
        ));
    }
    let mut rng = seeded_rng(seed, 6);
    let n_pos = n.div_ceil(2);
    let mut values: Vec<f64> = Vec::with_capacity(n);
    for i in 0..n {
        let mag: f64 = loop {
            let m = rng.gen_range(0.0..v_max);
            if m > 0.0 {
                break m;
            }
        };
        values.push(if i < n_pos { mag } else { -mag });
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(TensorBatch {
        axes: vec![AxisSamples {
            axis: Axis::V,
            values,
            lo: -v_max,
            hi: v_max,
        }],
        role: BatchRole::Boundary,
    })
}

/// Spatial face for a signed boundary velocity: x = 0 for inflow with v > 0,
/// x = 1 for inflow with v < 0.
pub fn boundary_face(v: f64) -> f64 {
    if v > 0.0 {
        0.0
    } else {
        1.0
    }
}

/// Fixed uniform time grid carrying the discretized Lagrange multipliers.
///
/// The nodes are midpoints t_i = (i + 1/2)·T/M so that the weight T/M turns
/// sums over the grid into a midpoint quadrature of ∫₀ᵀ · dt.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub values: Vec<f64>,
    pub t_final: f64,
}

impl TimeGrid {
    pub fn new(m: usize, t_final: f64) -> Result<Self, CollocationError> {
        if m == 0 {
            return Err(CollocationError::InvalidInput(
                "time grid needs at least one node".into(),
            ));
        }
        if !(t_final > 0.0) {
            return Err(CollocationError::InvalidInput(
                "final time must be positive".into(),
            ));
        }
        let dt = t_final / m as f64;
        let values = (0..m).map(|i| (i as f64 + 0.5) * dt).collect();
        Ok(TimeGrid { values, t_final })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Quadrature weight of one node for ∫₀ᵀ · dt.
    pub fn weight(&self) -> f64 {
        self.t_final / self.values.len() as f64
    }
}

/// Gauss--Legendre rule on `[lo, hi]`.
///
/// Nodes are the roots of the degree-n Legendre polynomial found by Newton
/// iteration from the Chebyshev-like initial guesses; the rule is exact for
/// polynomials of degree 2n−1.
pub fn gauss_legendre(n: usize, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be >= 1");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    // Roots come in ± pairs; solve for the non-negative half.
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n and P_n' by the three-term recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            dp = if n == 1 {
                1.0
            } else {
                n as f64 * (x * p1 - p0) / (x * x - 1.0)
            };
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = mid + half * x;
        nodes[i] = mid - half * x;
        weights[n - 1 - i] = half * w;
        weights[i] = half * w;
    }
    if n % 2 == 1 {
        // Center the midpoint node exactly.
        nodes[n / 2] = mid;
        if n == 1 {
            weights[0] = hi - lo;
        }
    }
    (nodes, weights)
}

/// Tensor-product Gauss--Legendre grid used for constraint quadratures,
/// error norms, and conservation traces.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadGrid {
    pub axes: Vec<Axis>,
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
}

impl QuadGrid {
    pub fn new(axes: &[(Axis, usize, f64, f64)]) -> Self {
        let mut ax = Vec::with_capacity(axes.len());
        let mut nodes = Vec::with_capacity(axes.len());
        let mut weights = Vec::with_capacity(axes.len());
        for &(axis, n, lo, hi) in axes {
            let (nd, wt) = gauss_legendre(n, lo, hi);
            ax.push(axis);
            nodes.push(nd);
            weights.push(wt);
        }
        QuadGrid {
            axes: ax,
            nodes,
            weights,
        }
    }

    pub fn dimension(&self) -> usize {
        self.axes.len()
    }

    /// Number of tensor-product nodes.
    pub fn len(&self) -> usize {
        self.nodes.iter().map(|n| n.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Visit every tensor node in lexicographic order with its weight.
    pub fn for_each(&self, mut f: impl FnMut(&[f64], f64)) {
        let dim = self.dimension();
        let mut idx = vec![0usize; dim];
        let mut point = vec![0.0; dim];
        loop {
            let mut w = 1.0;
            for d in 0..dim {
                point[d] = self.nodes[d][idx[d]];
                w *= self.weights[d][idx[d]];
            }
            f(&point, w);
            // Lexicographic increment, last axis fastest.
            let mut d = dim;
            loop {
                if d == 0 {
                    return;
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < self.nodes[d].len() {
                    break;
                }
                idx[d] = 0;
                if d == 0 {
                    return;
                }
            }
        }
    }

    /// Integrate a function over the grid.
    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let mut acc = 0.0;
        self.for_each(|p, w| acc += w * f(p));
        acc
    }
}
