//! Scalar tape over jet-augmented network evaluations.
//!
//! A loss is built by evaluating the network at collocation points (each
//! evaluation yields tape variables for the value and requested input
//! derivatives) and combining those variables with scalar arithmetic. The
//! tape records the whole computation; [`Tape::gradient`] replays it in
//! reverse, first through the scalar operations, then through every recorded
//! network evaluation, producing the exact parameter gradient.
//!
//! Values are computed eagerly, so any variable can be inspected while the
//! loss is being assembled. Everything runs on one thread with a fixed
//! summation order; identical inputs give bit-identical losses and
//! gradients.

use super::batch::{batch_backward, batch_forward, BatchTrace};
use super::jet::DerivRequest;
use super::net::ParamVector;
use super::DiffError;

/// Handle to one scalar value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

/// Tape variables for one network evaluation, in request order.
#[derive(Debug, Clone)]
pub struct JetVars {
    pub value: Var,
    pub d1: Vec<(usize, Var)>,
    pub d2: Vec<((usize, usize), Var)>,
}

#[derive(Debug, Clone, Copy)]
enum Node {
    Leaf,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Neg(u32),
    Scale(u32, f64),
    AddConst(u32),
    Square(u32),
    /// Plain sum of `len` children starting at `start` in the argument arena.
    Sum {
        start: u32,
        len: u32,
    },
    /// Σ wᵢ·xᵢ over `(arg, weight)` pairs in the weighted-argument arena.
    WeightedSum {
        start: u32,
        len: u32,
    },
    /// Output channel of a recorded network evaluation.
    EvalOut {
        block: u32,
        offset: u32,
    },
}

struct EvalBlock {
    req: DerivRequest,
    xs: Vec<f64>,
    n_points: usize,
    trace: Option<BatchTrace>,
}

/// Points per forward block; large enough for the inner loops to amortize,
/// small enough to stay cache resident.
const BLOCK_POINTS: usize = 64;

/// Byte budget for stored forward states. Blocks past the budget are
/// recomputed during the reverse sweep instead.
const TRACE_BUDGET_BYTES: usize = 256 << 20;

pub struct Tape<'p> {
    params: &'p ParamVector,
    nodes: Vec<Node>,
    vals: Vec<f64>,
    sum_args: Vec<u32>,
    wsum_args: Vec<(u32, f64)>,
    blocks: Vec<EvalBlock>,
    trace_bytes: usize,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamVector) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            vals: Vec::new(),
            sum_args: Vec::new(),
            wsum_args: Vec::new(),
            blocks: Vec::new(),
            trace_bytes: 0,
        }
    }

    pub fn params(&self) -> &ParamVector {
        self.params
    }

    /// Current value of a variable.
    pub fn value(&self, v: Var) -> f64 {
        self.vals[v.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, node: Node, value: f64) -> Var {
        let id = self.nodes.len() as u32;
        self.nodes.push(node);
        self.vals.push(value);
        Var(id)
    }

    pub fn constant(&mut self, c: f64) -> Var {
        self.push(Node::Leaf, c)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Node::Add(a.0, b.0), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(Node::Sub(a.0, b.0), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(Node::Mul(a.0, b.0), v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = -self.value(a);
        self.push(Node::Neg(a.0), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = c * self.value(a);
        self.push(Node::Scale(a.0, c), v)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(Node::AddConst(a.0), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.push(Node::Square(a.0), x * x)
    }

    /// Sequential sum of the given variables (left to right).
    pub fn sum(&mut self, vars: &[Var]) -> Var {
        let start = self.sum_args.len() as u32;
        self.sum_args.extend(vars.iter().map(|v| v.0));
        let mut acc = 0.0;
        for v in vars {
            acc += self.value(*v);
        }
        self.push(
            Node::Sum {
                start,
                len: vars.len() as u32,
            },
            acc,
        )
    }

    /// Σ wᵢ·xᵢ accumulated left to right.
    pub fn weighted_sum(&mut self, vars: &[Var], weights: &[f64]) -> Var {
        assert_eq!(vars.len(), weights.len());
        let start = self.wsum_args.len() as u32;
        let mut acc = 0.0;
        for (v, &w) in vars.iter().zip(weights) {
            self.wsum_args.push((v.0, w));
            acc += w * self.value(*v);
        }
        self.push(
            Node::WeightedSum {
                start,
                len: vars.len() as u32,
            },
            acc,
        )
    }

    /// Evaluate the network at `n_points` points (`xs` point-major) under one
    /// derivative request. Points are processed in fixed-size blocks.
    pub fn eval_points(
        &mut self,
        xs: &[f64],
        n_points: usize,
        req: &DerivRequest,
    ) -> Result<Vec<JetVars>, DiffError> {
        let input_dim = self.params.spec.input_dim;
        if xs.len() != n_points * input_dim {
            return Err(DiffError::InvalidInput(format!(
                "expected {} coordinates for {} points, got {}",
                n_points * input_dim,
                n_points,
                xs.len()
            )));
        }
        req.check(input_dim)?;
        let n_ch = req.channels();
        let hidden = &self.params.spec.hidden_widths;

        let mut out = Vec::with_capacity(n_points);
        let mut offset = 0;
        while offset < n_points {
            let b = BLOCK_POINTS.min(n_points - offset);
            let block_xs = xs[offset * input_dim..(offset + b) * input_dim].to_vec();
            let trace_sz = BatchTrace::byte_size(hidden, n_ch, b);
            let keep = self.trace_bytes + trace_sz <= TRACE_BUDGET_BYTES;
            let (values, trace) = batch_forward(self.params, req, &block_xs, b, keep);
            if keep {
                self.trace_bytes += trace_sz;
            }

            let block_id = self.blocks.len() as u32;
            let first_node = self.nodes.len() as u32;
            // Channel-major values: node order is (point, channel) so each
            // point's JetVars are contiguous in creation order.
            for p in 0..b {
                for ch in 0..n_ch {
                    self.push(
                        Node::EvalOut {
                            block: block_id,
                            offset: (p * n_ch + ch) as u32,
                        },
                        values[ch * b + p],
                    );
                }
            }
            self.blocks.push(EvalBlock {
                req: req.clone(),
                xs: block_xs,
                n_points: b,
                trace,
            });

            for p in 0..b {
                let base = first_node + (p * n_ch) as u32;
                let mut d1 = Vec::with_capacity(req.first_order().len());
                for (ci, &i) in req.first_order().iter().enumerate() {
                    d1.push((i, Var(base + 1 + ci as u32)));
                }
                let mut d2 = Vec::with_capacity(req.second_order().len());
                let d2_base = 1 + req.first_order().len();
                for (ci, &pair) in req.second_order().iter().enumerate() {
                    d2.push((pair, Var(base + (d2_base + ci) as u32)));
                }
                out.push(JetVars {
                    value: Var(base),
                    d1,
                    d2,
                });
            }
            offset += b;
        }
        Ok(out)
    }

    /// Single-point convenience wrapper around [`Tape::eval_points`].
    pub fn eval(&mut self, x: &[f64], req: &DerivRequest) -> Result<JetVars, DiffError> {
        Ok(self.eval_points(x, 1, req)?.pop().unwrap())
    }

    /// Exact gradient of `loss` with respect to every network parameter.
    pub fn gradient(&self, loss: Var) -> Result<Vec<f64>, DiffError> {
        let loss_val = self.value(loss);
        if !loss_val.is_finite() {
            return Err(DiffError::NonFinite(format!(
                "loss evaluated to {loss_val}"
            )));
        }

        let n = self.nodes.len();
        let mut adj = vec![0.0; n];
        adj[loss.0 as usize] = 1.0;

        // Per-block output adjoints, filled by the scalar sweep.
        let mut block_adj: Vec<Option<Vec<f64>>> = (0..self.blocks.len()).map(|_| None).collect();

        for idx in (0..n).rev() {
            let a = adj[idx];
            if a == 0.0 {
                continue;
            }
            match self.nodes[idx] {
                Node::Leaf => {}
                Node::Add(x, y) => {
                    adj[x as usize] += a;
                    adj[y as usize] += a;
                }
                Node::Sub(x, y) => {
                    adj[x as usize] += a;
                    adj[y as usize] -= a;
                }
                Node::Mul(x, y) => {
                    let vx = self.vals[x as usize];
                    let vy = self.vals[y as usize];
                    adj[x as usize] += a * vy;
                    adj[y as usize] += a * vx;
                }
                Node::Neg(x) => adj[x as usize] -= a,
                Node::Scale(x, c) => adj[x as usize] += a * c,
                Node::AddConst(x) => adj[x as usize] += a,
                Node::Square(x) => {
                    adj[x as usize] += a * 2.0 * self.vals[x as usize];
                }
                Node::Sum { start, len } => {
                    for k in start..start + len {
                        adj[self.sum_args[k as usize] as usize] += a;
                    }
                }
                Node::WeightedSum { start, len } => {
                    for k in start..start + len {
                        let (v, w) = self.wsum_args[k as usize];
                        adj[v as usize] += a * w;
                    }
                }
                Node::EvalOut { block, offset } => {
                    let blk = &self.blocks[block as usize];
                    let n_ch = blk.req.channels();
                    let buf = block_adj[block as usize]
                        .get_or_insert_with(|| vec![0.0; n_ch * blk.n_points]);
                    // Scalar sweep sees (point, channel) order; the batch
                    // kernel wants channel-major.
                    let p = offset as usize / n_ch;
                    let ch = offset as usize % n_ch;
                    buf[ch * blk.n_points + p] += a;
                }
            }
        }

        // Network sweep, block by block in creation order.
        let mut grad = vec![0.0; self.params.values.len()];
        for (blk, badj) in self.blocks.iter().zip(block_adj.iter()) {
            if let Some(badj) = badj {
                batch_backward(
                    self.params,
                    &blk.req,
                    &blk.xs,
                    blk.n_points,
                    blk.trace.as_ref(),
                    badj,
                    &mut grad,
                );
            }
        }
        Ok(grad)
    }
}

/// Exact gradient of a scalar loss built from network evaluations.
/// Returns the loss value together with ∂loss/∂θ.
pub fn loss_gradient<F>(params: &ParamVector, build: F) -> Result<(f64, Vec<f64>), DiffError>
where
    F: FnOnce(&mut Tape) -> Result<Var, DiffError>,
{
    let mut tape = Tape::new(params);
    let loss = build(&mut tape)?;
    let grad = tape.gradient(loss)?;
    Ok((tape.value(loss), grad))
}

/// Value of a loss without differentiating it; used by finite-difference
/// oracles and diagnostics.
pub fn loss_value<F>(params: &ParamVector, build: F) -> Result<f64, DiffError>
where
    F: FnOnce(&mut Tape) -> Result<Var, DiffError>,
{
    let mut tape = Tape::new(params);
    let loss = build(&mut tape)?;
    Ok(tape.value(loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::jet::DerivRequest;
    use crate::diffnet::net::{forward, init_params, NetSpec};

    fn small_net(seed: u64) -> ParamVector {
        let spec = NetSpec::new(3, vec![6, 5]).unwrap();
        init_params(&spec, seed).unwrap()
    }

    fn fd_gradient<F>(params: &ParamVector, f: F, h: f64) -> Vec<f64>
    where
        F: Fn(&ParamVector) -> f64,
    {
        (0..params.values.len())
            .map(|k| {
                let mut pp = params.clone();
                pp.values[k] += h;
                let mut pm = params.clone();
                pm.values[k] -= h;
                (f(&pp) - f(&pm)) / (2.0 * h)
            })
            .collect()
    }

    fn assert_grad_close(ad: &[f64], fd: &[f64], tol: f64) {
        let norm = ad
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(fd.iter().map(|v| v * v).sum::<f64>().sqrt())
            .max(1e-10);
        let diff = ad
            .iter()
            .zip(fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(diff / norm <= tol, "relative gradient error {}", diff / norm);
    }

    #[test]
    fn gradient_of_squared_output_vanishes_where_output_is_zero() {
        // Zero parameters: output is identically zero, loss = f(x)² has zero
        // gradient by the chain rule.
        let spec = NetSpec::new(2, vec![4]).unwrap();
        let p = ParamVector {
            values: vec![0.0; spec.param_count()],
            spec,
            seed: 0,
        };
        let (loss, grad) = loss_gradient(&p, |t| {
            let jv = t.eval(&[0.3, -0.4], &DerivRequest::value_only())?;
            Ok(t.square(jv.value))
        })
        .unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_scales_linearly_in_loss_scale() {
        let p = small_net(3);
        let build = |c: f64| {
            move |t: &mut Tape| -> Result<Var, DiffError> {
                let jv = t.eval(&[0.2, 0.4, -0.1], &DerivRequest::value_only())?;
                Ok(t.scale(jv.value, c))
            }
        };
        let (_, g1) = loss_gradient(&p, build(1.0)).unwrap();
        let (_, g3) = loss_gradient(&p, build(3.0)).unwrap();
        for (a, b) in g1.iter().zip(&g3) {
            assert!((3.0 * a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn gradient_of_mean_squared_velocity_derivative_matches_fd() {
        // loss = mean over 10 points of (∂_v f)², the spec's named example.
        let p = small_net(7);
        let req = DerivRequest::new(&[2], &[]).unwrap();
        let pts: Vec<[f64; 3]> = (0..10)
            .map(|i| {
                let s = i as f64 * 0.37;
                [s.sin().abs(), (1.3 * s).cos() * 0.5 + 0.5, 2.0 * (0.7 * s).sin()]
            })
            .collect();
        let build = |t: &mut Tape| -> Result<Var, DiffError> {
            let xs: Vec<f64> = pts.iter().flatten().copied().collect();
            let jets = t.eval_points(&xs, pts.len(), &req)?;
            let squares: Vec<Var> = jets
                .iter()
                .map(|j| t.square(j.d1[0].1))
                .collect();
            let s = t.sum(&squares);
            Ok(t.scale(s, 1.0 / pts.len() as f64))
        };
        let (_, ad) = loss_gradient(&p, build).unwrap();
        let fd = fd_gradient(
            &p,
            |q| loss_value(q, build).unwrap(),
            1e-6,
        );
        assert_grad_close(&ad, &fd, 1e-5);
    }

    #[test]
    fn gradient_through_second_derivatives_matches_fd() {
        let p = small_net(11);
        let req = DerivRequest::new(&[0, 1, 2], &[(2, 2)]).unwrap();
        let build = |t: &mut Tape| -> Result<Var, DiffError> {
            let xs = [0.4, 0.2, -0.6, 0.9, 0.8, 1.4];
            let jets = t.eval_points(&xs, 2, &req)?;
            let mut terms = Vec::new();
            for j in &jets {
                // r = d_t + 0.7·d_x − 1.3·d_vv − 0.5·f − 0.2·d_v
                let r = t.weighted_sum(
                    &[j.d1[0].1, j.d1[1].1, j.d2[0].1, j.value, j.d1[2].1],
                    &[1.0, 0.7, -1.3, -0.5, -0.2],
                );
                terms.push(t.square(r));
            }
            Ok(t.sum(&terms))
        };
        let (_, ad) = loss_gradient(&p, build).unwrap();
        let fd = fd_gradient(&p, |q| loss_value(q, build).unwrap(), 1e-6);
        assert_grad_close(&ad, &fd, 1e-5);
    }

    #[test]
    fn gradient_through_products_of_evaluations_matches_fd() {
        // Collision-style term: products of network values at distinct points.
        let p = small_net(13);
        let req = DerivRequest::value_only();
        let build = |t: &mut Tape| -> Result<Var, DiffError> {
            let xs = [0.1, 0.2, 0.3, -0.4, 0.5, -0.6, 0.7, 0.8, 0.9, 1.0, -1.1, 1.2];
            let jets = t.eval_points(&xs, 4, &req)?;
            let p01 = t.mul(jets[0].value, jets[1].value);
            let p23 = t.mul(jets[2].value, jets[3].value);
            let d = t.sub(p01, p23);
            Ok(t.square(d))
        };
        let (_, ad) = loss_gradient(&p, build).unwrap();
        let fd = fd_gradient(&p, |q| loss_value(q, build).unwrap(), 1e-6);
        assert_grad_close(&ad, &fd, 1e-5);
    }

    #[test]
    fn eval_value_matches_plain_forward_bitwise() {
        let p = small_net(5);
        let mut tape = Tape::new(&p);
        let x = [0.25, 0.5, 0.75];
        let jv = tape
            .eval(&x, &DerivRequest::new(&[0], &[]).unwrap())
            .unwrap();
        assert_eq!(tape.value(jv.value), forward(&p, &x).unwrap());
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let p = small_net(1);
        let err = loss_gradient(&p, |t| {
            let c = t.constant(f64::INFINITY);
            Ok(c)
        })
        .unwrap_err();
        assert!(matches!(err, DiffError::NonFinite(_)));
    }

    #[test]
    fn identical_builds_give_bit_identical_gradients() {
        let p = small_net(29);
        let req = DerivRequest::new(&[0, 1, 2], &[(2, 2)]).unwrap();
        let build = |t: &mut Tape| -> Result<Var, DiffError> {
            let xs: Vec<f64> = (0..3 * 150).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
            let jets = t.eval_points(&xs, 150, &req)?;
            let sq: Vec<Var> = jets.iter().map(|j| t.square(j.d2[0].1)).collect();
            Ok(t.sum(&sq))
        };
        let (l1, g1) = loss_gradient(&p, build).unwrap();
        let (l2, g2) = loss_gradient(&p, build).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }
}
