//! Discretized losses and conservation constraints, in two synchronized
//! forms: plain evaluations against any [`JetField`] (used for diagnostics
//! and for exact-solution fixtures) and tape-recorded assemblies over a
//! network (used by training, where the gradient flows through every
//! evaluation including each collision-quadrature node).
//!
//! Fokker--Planck discretization:
//!   GE: (2TV/N_C³) Σ (∂_t f + v ∂_x f − q ∂_vv f − p f − p v ∂_v f)²
//!   IC: (2V/N_I²) Σ (f(0,x,v) − f₀(x,v))²
//!   BC: (|Γ⁻|/(2N_B²)) Σ (f(t,x,v) − f(t,1−x,v))²  with |Γ⁻| = 2TV
//! Boltzmann discretization:
//!   GE: (4TV²/N_C³) Σ (∂_t f − Q(f,f)/ε)², IC: (4V²/N_I²) Σ (f − f₀)²
//! Constraints are Gauss--Legendre quadratures of ∂_t f against the
//! collision invariants on the fixed time grid.

use super::{Mode, TrainError};
use crate::collocation::{
    boundary_face, sample_gamma_minus, sample_uniform, Axis, AxisSamples, BatchRole, QuadGrid,
    TensorBatch, TimeGrid,
};
use crate::diffnet::{DerivRequest, JetField, JetVars, Tape, Var};
use crate::kinetic::{boltzmann_f0, BoltzmannConfig, CollisionQuad, FpConfig, MAXWELL_KERNEL_2D};

/// Residual request for the Fokker--Planck interior: ∂_t, ∂_x, ∂_v, ∂_vv.
pub fn req_fp_interior() -> DerivRequest {
    DerivRequest::new(&[0, 1, 2], &[(2, 2)]).unwrap()
}

/// Value and time derivative; constraints and the Boltzmann residual.
pub fn req_dt() -> DerivRequest {
    DerivRequest::new(&[0], &[]).unwrap()
}

fn mix_seed(seed: u64, epoch: u64, role: u64) -> u64 {
    let mut z = seed ^ epoch.wrapping_mul(0xa076_1d64_78bd_642f) ^ role.wrapping_mul(0xe703_7ed1_a0b4_28db);
    z = (z ^ (z >> 32)).wrapping_mul(0xd6e8_feb8_6659_fd93);
    z ^ (z >> 32)
}

/// Per-epoch collocation batches for the Fokker--Planck problem.
pub struct FpBatches {
    pub interior: TensorBatch,
    pub initial: TensorBatch,
    pub boundary_t: AxisSamples,
    pub boundary_v: TensorBatch,
}

pub fn sample_fp_batches(
    cfg: &FpConfig,
    n_c: usize,
    n_i: usize,
    n_b: usize,
    seed: u64,
    epoch: u64,
) -> Result<FpBatches, TrainError> {
    let v = cfg.v_max;
    let interior = TensorBatch {
        axes: vec![
            sample_uniform(mix_seed(seed, epoch, 1), n_c, 0.0, cfg.t_final, Axis::T)?,
            sample_uniform(mix_seed(seed, epoch, 1), n_c, 0.0, 1.0, Axis::X)?,
            sample_uniform(mix_seed(seed, epoch, 1), n_c, -v, v, Axis::V)?,
        ],
        role: BatchRole::Interior,
    };
    let initial = TensorBatch {
        axes: vec![
            sample_uniform(mix_seed(seed, epoch, 2), n_i, 0.0, 1.0, Axis::X)?,
            sample_uniform(mix_seed(seed, epoch, 2), n_i, -v, v, Axis::V)?,
        ],
        role: BatchRole::Initial,
    };
    let boundary_t = sample_uniform(mix_seed(seed, epoch, 3), n_b, 0.0, cfg.t_final, Axis::T)?;
    let boundary_v = sample_gamma_minus(mix_seed(seed, epoch, 4), n_b, v)?;
    Ok(FpBatches {
        interior,
        initial,
        boundary_t,
        boundary_v,
    })
}

/// Per-epoch collocation batches for the homogeneous Boltzmann problem.
pub struct BoltzmannBatches {
    pub interior: TensorBatch,
    pub initial: TensorBatch,
}

pub fn sample_boltzmann_batches(
    cfg: &BoltzmannConfig,
    n_c: usize,
    n_i: usize,
    seed: u64,
    epoch: u64,
) -> Result<BoltzmannBatches, TrainError> {
    let v = cfg.v_max;
    let interior = TensorBatch {
        axes: vec![
            sample_uniform(mix_seed(seed, epoch, 1), n_c, 0.0, cfg.t_final, Axis::T)?,
            sample_uniform(mix_seed(seed, epoch, 1), n_c, -v, v, Axis::Vx)?,
            sample_uniform(mix_seed(seed, epoch, 1), n_c, -v, v, Axis::Vy)?,
        ],
        role: BatchRole::Interior,
    };
    let initial = TensorBatch {
        axes: vec![
            sample_uniform(mix_seed(seed, epoch, 2), n_i, -v, v, Axis::Vx)?,
            sample_uniform(mix_seed(seed, epoch, 2), n_i, -v, v, Axis::Vy)?,
        ],
        role: BatchRole::Initial,
    };
    Ok(BoltzmannBatches { interior, initial })
}

/// Loss components; `total` is their plain sum (the unconstrained loss).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub ge: f64,
    pub ic: f64,
    pub bc: f64,
}

/// Fokker--Planck loss of an arbitrary field (no gradients): the evaluation
/// mirror of the tape assembly, summed in the same order.
pub fn loss_fp_hat(
    field: &dyn JetField,
    batches: &FpBatches,
    cfg: &FpConfig,
) -> Result<LossParts, TrainError> {
    let req = req_fp_interior();
    let (ts, xs, vs) = (
        &batches.interior.axes[0].values,
        &batches.interior.axes[1].values,
        &batches.interior.axes[2].values,
    );
    let mut ge_sum = 0.0;
    for &t in ts {
        for &x in xs {
            for &v in vs {
                let jet = field.jet(&[t, x, v], &req)?;
                let r = crate::kinetic::fp_residual(&jet, v, cfg)?;
                if !r.is_finite() {
                    return Err(TrainError::NonFinite(format!(
                        "residual at (t={t}, x={x}, v={v})"
                    )));
                }
                ge_sum += r * r;
            }
        }
    }
    let n_c3 = (ts.len() * xs.len() * vs.len()) as f64;
    let ge = 2.0 * cfg.t_final * cfg.v_max / n_c3 * ge_sum;

    let (ixs, ivs) = (&batches.initial.axes[0].values, &batches.initial.axes[1].values);
    let z = cfg.initial_normalizer();
    let mut ic_sum = 0.0;
    for &x in ixs {
        for &v in ivs {
            let fv = field.value(&[0.0, x, v])?;
            let f0 = initial_value(cfg, z, x, v);
            let d = fv - f0;
            ic_sum += d * d;
        }
    }
    let ic = 2.0 * cfg.v_max / (ixs.len() * ivs.len()) as f64 * ic_sum;

    let bts = &batches.boundary_t.values;
    let bvs = &batches.boundary_v.axes[0].values;
    let mut bc_sum = 0.0;
    for &t in bts {
        for &v in bvs {
            let x = boundary_face(v);
            let d = field.value(&[t, x, v])? - field.value(&[t, 1.0 - x, v])?;
            bc_sum += d * d;
        }
    }
    let bc =
        cfg.t_final * cfg.v_max / (bts.len() * bvs.len()) as f64 * bc_sum;

    Ok(LossParts {
        total: ge + ic + bc,
        ge,
        ic,
        bc,
    })
}

/// The initial-condition value with a precomputed normalizer (the loss sums
/// call this thousands of times per epoch).
fn initial_value(cfg: &FpConfig, z: f64, x: f64, v: f64) -> f64 {
    let g = (-v * v).exp();
    match cfg.initial {
        crate::kinetic::FpInitial::Test1 => g / z,
        crate::kinetic::FpInitial::Test2 => {
            (1.0 + (2.0 * std::f64::consts::PI * x).cos()) * g / z
        }
    }
}

/// Mass-conservation constraint of the Fokker--Planck problem: quadrature of
/// ∂_t f(t_i, ·, ·) over [0,1] × [−V,V], the time derivative of total mass.
pub fn constraint_fp(field: &dyn JetField, t_i: f64, quad: &QuadGrid) -> Result<f64, TrainError> {
    let req = req_dt();
    let mut acc = 0.0;
    let mut err: Option<TrainError> = None;
    quad.for_each(|p, w| {
        if err.is_some() {
            return;
        }
        match field.jet(&[t_i, p[0], p[1]], &req) {
            Ok(jet) => acc += w * jet.d1[&0],
            Err(e) => err = Some(e.into()),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(acc),
    }
}

/// The four Boltzmann constraints at one time: quadratures of ∂_t f against
/// the collision invariants 1, v_x, v_y, |v|².
pub fn constraints_boltzmann(
    field: &dyn JetField,
    t_i: f64,
    quad: &QuadGrid,
) -> Result<[f64; 4], TrainError> {
    let req = req_dt();
    let mut c = [0.0; 4];
    let mut err: Option<TrainError> = None;
    quad.for_each(|p, w| {
        if err.is_some() {
            return;
        }
        match field.jet(&[t_i, p[0], p[1]], &req) {
            Ok(jet) => {
                let dt = jet.d1[&0];
                c[0] += w * dt;
                c[1] += w * dt * p[0];
                c[2] += w * dt * p[1];
                c[3] += w * dt * (p[0] * p[0] + p[1] * p[1]);
            }
            Err(e) => err = Some(e.into()),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(c),
    }
}

/// Constraint-term parameters of one assembled loss.
#[derive(Debug, Clone)]
pub struct ConstraintWeights {
    /// Per-constraint quadratic penalty weights β_l.
    pub beta: Vec<f64>,
    /// Augmented-Lagrangian quadratic weight μ.
    pub mu: f64,
    /// T/M: the time-grid quadrature weight in ‖c‖²_{L²(0,T)}.
    pub time_weight: f64,
}

/// Combine a base loss with constraint values per the training mode:
///   unconstrained: base
///   penalty:       base + Σ_l β_l (T/M) Σ_i c_l(t_i)²
///   lagrange:      base + Σ_{l,i} λ_l(t_i) c_l(t_i)
///   augmented:     base + μ (T/M) Σ_{l,i} c_l(t_i)² + Σ_{l,i} λ_l(t_i) c_l(t_i)
///
/// `constraints[l][i]` is c_l(t_i); `multipliers` is indexed the same way.
pub fn assemble_loss(
    base: f64,
    mode: Mode,
    constraints: &[Vec<f64>],
    multipliers: &[Vec<f64>],
    w: &ConstraintWeights,
) -> Result<f64, TrainError> {
    if mode != Mode::Unconstrained {
        if constraints.len() != w.beta.len() && mode == Mode::Penalty {
            return Err(TrainError::Config(format!(
                "{} penalty weights for {} constraints",
                w.beta.len(),
                constraints.len()
            )));
        }
        if matches!(mode, Mode::Lagrange | Mode::Augmented)
            && (multipliers.len() != constraints.len()
                || multipliers
                    .iter()
                    .zip(constraints)
                    .any(|(m, c)| m.len() != c.len()))
        {
            return Err(TrainError::Config(
                "multiplier field shape does not match constraints".into(),
            ));
        }
    }
    let mut total = base;
    match mode {
        Mode::Unconstrained => {}
        Mode::Penalty => {
            for (l, c_l) in constraints.iter().enumerate() {
                let s: f64 = c_l.iter().map(|c| c * c).sum();
                total += w.beta[l] * w.time_weight * s;
            }
        }
        Mode::Lagrange => {
            for (lam_l, c_l) in multipliers.iter().zip(constraints) {
                for (lam, c) in lam_l.iter().zip(c_l) {
                    total += lam * c;
                }
            }
        }
        Mode::Augmented => {
            for c_l in constraints {
                let s: f64 = c_l.iter().map(|c| c * c).sum();
                total += w.mu * w.time_weight * s;
            }
            for (lam_l, c_l) in multipliers.iter().zip(constraints) {
                for (lam, c) in lam_l.iter().zip(c_l) {
                    total += lam * c;
                }
            }
        }
    }
    Ok(total)
}

/// Everything the training loop needs from one tape assembly.
pub struct AssembledLoss {
    pub total: Var,
    pub parts: LossParts,
    /// c_l(t_i) values, per constraint then per time node.
    pub constraint_values: Vec<Vec<f64>>,
    /// Mass quadrature at each time node (the value-channel byproduct).
    pub mass_values: Vec<f64>,
}

/// Tape assembly of the Fokker--Planck loss in a given mode.
#[allow(clippy::too_many_arguments)]
pub fn build_fp_loss(
    tape: &mut Tape,
    batches: &FpBatches,
    cfg: &FpConfig,
    mode: Mode,
    multipliers: &[Vec<f64>],
    weights: &ConstraintWeights,
    time_grid: &TimeGrid,
    quad: &QuadGrid,
) -> Result<AssembledLoss, TrainError> {
    let req = req_fp_interior();
    let (ts, xs, vs) = (
        &batches.interior.axes[0].values,
        &batches.interior.axes[1].values,
        &batches.interior.axes[2].values,
    );
    let n_int = ts.len() * xs.len() * vs.len();
    let mut coords = Vec::with_capacity(3 * n_int);
    for &t in ts {
        for &x in xs {
            for &v in vs {
                coords.extend_from_slice(&[t, x, v]);
            }
        }
    }
    let jets = tape.eval_points(&coords, n_int, &req)?;
    let mut squares = Vec::with_capacity(n_int);
    for (idx, jet) in jets.iter().enumerate() {
        let v = coords[3 * idx + 2];
        let r = fp_residual_var(tape, jet, v, cfg);
        if !tape.value(r).is_finite() {
            return Err(TrainError::NonFinite(format!(
                "residual at (t={}, x={}, v={})",
                coords[3 * idx],
                coords[3 * idx + 1],
                v
            )));
        }
        squares.push(tape.square(r));
    }
    let s = tape.sum(&squares);
    let ge = tape.scale(s, 2.0 * cfg.t_final * cfg.v_max / n_int as f64);

    // Initial term.
    let (ixs, ivs) = (&batches.initial.axes[0].values, &batches.initial.axes[1].values);
    let z = cfg.initial_normalizer();
    let n_ic = ixs.len() * ivs.len();
    let mut coords_ic = Vec::with_capacity(3 * n_ic);
    for &x in ixs {
        for &v in ivs {
            coords_ic.extend_from_slice(&[0.0, x, v]);
        }
    }
    let vals = tape.eval_points(&coords_ic, n_ic, &DerivRequest::value_only())?;
    let mut squares_ic = Vec::with_capacity(n_ic);
    for (idx, jv) in vals.iter().enumerate() {
        let (x, v) = (coords_ic[3 * idx + 1], coords_ic[3 * idx + 2]);
        let d = tape.add_const(jv.value, -initial_value(cfg, z, x, v));
        squares_ic.push(tape.square(d));
    }
    let s_ic = tape.sum(&squares_ic);
    let ic = tape.scale(s_ic, 2.0 * cfg.v_max / n_ic as f64);

    // Boundary term: pair every inflow point with its mirror.
    let bts = &batches.boundary_t.values;
    let bvs = &batches.boundary_v.axes[0].values;
    let n_bc = bts.len() * bvs.len();
    let mut coords_in = Vec::with_capacity(3 * n_bc);
    let mut coords_mirror = Vec::with_capacity(3 * n_bc);
    for &t in bts {
        for &v in bvs {
            let x = boundary_face(v);
            coords_in.extend_from_slice(&[t, x, v]);
            coords_mirror.extend_from_slice(&[t, 1.0 - x, v]);
        }
    }
    let vals_in = tape.eval_points(&coords_in, n_bc, &DerivRequest::value_only())?;
    let vals_mirror = tape.eval_points(&coords_mirror, n_bc, &DerivRequest::value_only())?;
    let mut squares_bc = Vec::with_capacity(n_bc);
    for (a, b) in vals_in.iter().zip(&vals_mirror) {
        let d = tape.sub(a.value, b.value);
        squares_bc.push(tape.square(d));
    }
    let s_bc = tape.sum(&squares_bc);
    let bc = tape.scale(s_bc, cfg.t_final * cfg.v_max / n_bc as f64);

    let base = tape.sum(&[ge, ic, bc]);
    let parts = LossParts {
        total: tape.value(base),
        ge: tape.value(ge),
        ic: tape.value(ic),
        bc: tape.value(bc),
    };

    // Constraint quadratures on the fixed time grid (always evaluated: the
    // epoch record reports them in every mode).
    let (c_vars, c_vals, mass_values) = constraint_vars_fp(tape, time_grid, quad)?;
    let total = combine_modes(tape, base, mode, &[c_vars], multipliers, weights)?;
    Ok(AssembledLoss {
        total,
        parts,
        constraint_values: vec![c_vals],
        mass_values,
    })
}

/// The Fokker--Planck residual as a tape variable; evaluates identically to
/// [`crate::kinetic::fp_residual`] on the same jet.
fn fp_residual_var(tape: &mut Tape, jet: &JetVars, v: f64, cfg: &FpConfig) -> Var {
    let d_t = jet.d1[0].1;
    let d_x = jet.d1[1].1;
    let d_v = jet.d1[2].1;
    let d_vv = jet.d2[0].1;
    tape.weighted_sum(
        &[d_t, d_x, d_vv, jet.value, d_v],
        &[1.0, v, -cfg.q, -cfg.p, -cfg.p * v],
    )
}

fn constraint_vars_fp(
    tape: &mut Tape,
    time_grid: &TimeGrid,
    quad: &QuadGrid,
) -> Result<(Vec<Var>, Vec<f64>, Vec<f64>), TrainError> {
    let req = req_dt();
    let mut points = Vec::with_capacity(quad.len());
    let mut weights = Vec::with_capacity(quad.len());
    quad.for_each(|p, w| {
        points.push([p[0], p[1]]);
        weights.push(w);
    });
    let mut c_vars = Vec::with_capacity(time_grid.len());
    let mut c_vals = Vec::with_capacity(time_grid.len());
    let mut masses = Vec::with_capacity(time_grid.len());
    for &t_i in &time_grid.values {
        let mut coords = Vec::with_capacity(3 * points.len());
        for p in &points {
            coords.extend_from_slice(&[t_i, p[0], p[1]]);
        }
        let jets = tape.eval_points(&coords, points.len(), &req)?;
        let dt_vars: Vec<Var> = jets.iter().map(|j| j.d1[0].1).collect();
        let c = tape.weighted_sum(&dt_vars, &weights);
        if !tape.value(c).is_finite() {
            return Err(TrainError::NonFinite(format!("constraint at t={t_i}")));
        }
        let mass: f64 = jets
            .iter()
            .zip(&weights)
            .map(|(j, w)| w * tape.value(j.value))
            .sum();
        c_vals.push(tape.value(c));
        c_vars.push(c);
        masses.push(mass);
    }
    Ok((c_vars, c_vals, masses))
}

/// Add the mode's constraint terms to the base-loss variable. Mirrors
/// [`assemble_loss`] exactly (same summation order).
fn combine_modes(
    tape: &mut Tape,
    base: Var,
    mode: Mode,
    constraints: &[Vec<Var>],
    multipliers: &[Vec<f64>],
    w: &ConstraintWeights,
) -> Result<Var, TrainError> {
    match mode {
        Mode::Unconstrained => Ok(base),
        Mode::Penalty => {
            if w.beta.len() != constraints.len() {
                return Err(TrainError::Config(format!(
                    "{} penalty weights for {} constraints",
                    w.beta.len(),
                    constraints.len()
                )));
            }
            let mut total = base;
            for (l, c_l) in constraints.iter().enumerate() {
                let squares: Vec<Var> = c_l.iter().map(|&c| tape.square(c)).collect();
                let s = tape.sum(&squares);
                let term = tape.scale(s, w.beta[l] * w.time_weight);
                total = tape.add(total, term);
            }
            Ok(total)
        }
        Mode::Lagrange => {
            check_multiplier_shape(constraints, multipliers)?;
            let mut total = base;
            for (lam_l, c_l) in multipliers.iter().zip(constraints) {
                let term = tape.weighted_sum(c_l, lam_l);
                total = tape.add(total, term);
            }
            Ok(total)
        }
        Mode::Augmented => {
            check_multiplier_shape(constraints, multipliers)?;
            let mut total = base;
            for c_l in constraints {
                let squares: Vec<Var> = c_l.iter().map(|&c| tape.square(c)).collect();
                let s = tape.sum(&squares);
                let term = tape.scale(s, w.mu * w.time_weight);
                total = tape.add(total, term);
            }
            for (lam_l, c_l) in multipliers.iter().zip(constraints) {
                let term = tape.weighted_sum(c_l, lam_l);
                total = tape.add(total, term);
            }
            Ok(total)
        }
    }
}

fn check_multiplier_shape(
    constraints: &[Vec<Var>],
    multipliers: &[Vec<f64>],
) -> Result<(), TrainError> {
    if multipliers.len() != constraints.len()
        || multipliers
            .iter()
            .zip(constraints)
            .any(|(m, c)| m.len() != c.len())
    {
        return Err(TrainError::Config(
            "multiplier field shape does not match constraints".into(),
        ));
    }
    Ok(())
}

/// Boltzmann loss of an arbitrary field (no gradients).
pub fn loss_boltzmann_hat(
    field: &dyn JetField,
    batches: &BoltzmannBatches,
    cfg: &BoltzmannConfig,
    quad: &CollisionQuad,
) -> Result<LossParts, TrainError> {
    let req = req_dt();
    let (ts, vxs, vys) = (
        &batches.interior.axes[0].values,
        &batches.interior.axes[1].values,
        &batches.interior.axes[2].values,
    );
    let mut ge_sum = 0.0;
    for &t in ts {
        let f_slice = |vx: f64, vy: f64| field.value(&[t, vx, vy]).unwrap_or(f64::NAN);
        for &vx in vxs {
            for &vy in vys {
                let jet = field.jet(&[t, vx, vy], &req)?;
                let q_val = crate::kinetic::collision_q(&f_slice, vx, vy, quad);
                let r = crate::kinetic::boltzmann_residual(jet.d1[&0], q_val, cfg);
                if !r.is_finite() {
                    return Err(TrainError::NonFinite(format!(
                        "residual at (t={t}, vx={vx}, vy={vy})"
                    )));
                }
                ge_sum += r * r;
            }
        }
    }
    let n_c3 = (ts.len() * vxs.len() * vys.len()) as f64;
    let ge = 4.0 * cfg.t_final * cfg.v_max * cfg.v_max / n_c3 * ge_sum;

    let (ixs, ivs) = (&batches.initial.axes[0].values, &batches.initial.axes[1].values);
    let mut ic_sum = 0.0;
    for &vx in ixs {
        for &vy in ivs {
            let d = field.value(&[0.0, vx, vy])? - boltzmann_f0(vx, vy);
            ic_sum += d * d;
        }
    }
    let ic = 4.0 * cfg.v_max * cfg.v_max / (ixs.len() * ivs.len()) as f64 * ic_sum;

    Ok(LossParts {
        total: ge + ic,
        ge,
        ic,
        bc: 0.0,
    })
}

/// Tape assembly of the Boltzmann loss. The collision integral is unrolled
/// onto the tape so the parameter gradient flows through every quadrature
/// node evaluation; f(t_i, v*) evaluations are shared across collocation
/// velocities at the same time sample.
#[allow(clippy::too_many_arguments)]
pub fn build_boltzmann_loss(
    tape: &mut Tape,
    batches: &BoltzmannBatches,
    cfg: &BoltzmannConfig,
    quad: &CollisionQuad,
    mode: Mode,
    multipliers: &[Vec<f64>],
    weights: &ConstraintWeights,
    time_grid: &TimeGrid,
    moment_quad: &QuadGrid,
) -> Result<AssembledLoss, TrainError> {
    let req = req_dt();
    let (ts, vxs, vys) = (
        &batches.interior.axes[0].values,
        &batches.interior.axes[1].values,
        &batches.interior.axes[2].values,
    );
    let n_star = quad.vstar_nodes.len();
    let n_angle = quad.angle_nodes.len();
    let n_per_t = vxs.len() * vys.len();

    // Quadrature term weights including the kernel constant.
    let mut term_weights = Vec::with_capacity(n_star * n_star * n_angle);
    for wx in &quad.vstar_weights {
        for wy in &quad.vstar_weights {
            for wa in &quad.angle_weights {
                term_weights.push(wx * wy * wa * MAXWELL_KERNEL_2D);
            }
        }
    }

    let mut squares = Vec::with_capacity(ts.len() * n_per_t);
    for &t in ts {
        // f(t, v*) shared by all collocation velocities at this time sample.
        let mut star_coords = Vec::with_capacity(3 * n_star * n_star);
        for &sx in &quad.vstar_nodes {
            for &sy in &quad.vstar_nodes {
                star_coords.extend_from_slice(&[t, sx, sy]);
            }
        }
        let star_vals =
            tape.eval_points(&star_coords, n_star * n_star, &DerivRequest::value_only())?;

        for &vx in vxs {
            for &vy in vys {
                let jet = tape.eval(&[t, vx, vy], &req)?;
                // Post-collision evaluation points for every (v*, angle).
                let mut post = Vec::with_capacity(3 * 2 * n_star * n_star * n_angle);
                for &sx in &quad.vstar_nodes {
                    for &sy in &quad.vstar_nodes {
                        let cx = vx + sx;
                        let cy = vy + sy;
                        let g = ((vx - sx) * (vx - sx) + (vy - sy) * (vy - sy)).sqrt();
                        for &phi in &quad.angle_nodes {
                            let (sin_phi, cos_phi) = phi.sin_cos();
                            let gx = g * cos_phi;
                            let gy = g * sin_phi;
                            post.extend_from_slice(&[t, 0.5 * (cx + gx), 0.5 * (cy + gy)]);
                            post.extend_from_slice(&[t, 0.5 * (cx - gx), 0.5 * (cy - gy)]);
                        }
                    }
                }
                let post_vals = tape.eval_points(
                    &post,
                    2 * n_star * n_star * n_angle,
                    &DerivRequest::value_only(),
                )?;

                let mut terms = Vec::with_capacity(n_star * n_star * n_angle);
                let mut k = 0;
                for star in star_vals.iter() {
                    let loss_part = tape.mul(jet.value, star.value);
                    for _ in 0..n_angle {
                        let gain = tape.mul(post_vals[2 * k].value, post_vals[2 * k + 1].value);
                        terms.push(tape.sub(gain, loss_part));
                        k += 1;
                    }
                }
                let q_var = tape.weighted_sum(&terms, &term_weights);
                let scaled_q = tape.scale(q_var, 1.0 / cfg.eps);
                let r = tape.sub(jet.d1[0].1, scaled_q);
                if !tape.value(r).is_finite() {
                    return Err(TrainError::NonFinite(format!(
                        "residual at (t={t}, vx={vx}, vy={vy})"
                    )));
                }
                squares.push(tape.square(r));
            }
        }
    }
    let s = tape.sum(&squares);
    let ge = tape.scale(
        s,
        4.0 * cfg.t_final * cfg.v_max * cfg.v_max / squares.len() as f64,
    );

    // Initial term.
    let (ixs, ivs) = (&batches.initial.axes[0].values, &batches.initial.axes[1].values);
    let n_ic = ixs.len() * ivs.len();
    let mut coords_ic = Vec::with_capacity(3 * n_ic);
    for &vx in ixs {
        for &vy in ivs {
            coords_ic.extend_from_slice(&[0.0, vx, vy]);
        }
    }
    let vals = tape.eval_points(&coords_ic, n_ic, &DerivRequest::value_only())?;
    let mut squares_ic = Vec::with_capacity(n_ic);
    for (idx, jv) in vals.iter().enumerate() {
        let (vx, vy) = (coords_ic[3 * idx + 1], coords_ic[3 * idx + 2]);
        let d = tape.add_const(jv.value, -boltzmann_f0(vx, vy));
        squares_ic.push(tape.square(d));
    }
    let s_ic = tape.sum(&squares_ic);
    let ic = tape.scale(s_ic, 4.0 * cfg.v_max * cfg.v_max / n_ic as f64);

    let base = tape.sum(&[ge, ic]);
    let parts = LossParts {
        total: tape.value(base),
        ge: tape.value(ge),
        ic: tape.value(ic),
        bc: 0.0,
    };

    // The four moment constraints on the fixed time grid.
    let mut points = Vec::with_capacity(moment_quad.len());
    let mut wq = Vec::with_capacity(moment_quad.len());
    moment_quad.for_each(|p, w| {
        points.push([p[0], p[1]]);
        wq.push(w);
    });
    let mut c_vars: Vec<Vec<Var>> = vec![Vec::new(); 4];
    let mut c_vals: Vec<Vec<f64>> = vec![Vec::new(); 4];
    let mut masses = Vec::with_capacity(time_grid.len());
    for &t_i in &time_grid.values {
        let mut coords = Vec::with_capacity(3 * points.len());
        for p in &points {
            coords.extend_from_slice(&[t_i, p[0], p[1]]);
        }
        let jets = tape.eval_points(&coords, points.len(), &req)?;
        let dt_vars: Vec<Var> = jets.iter().map(|j| j.d1[0].1).collect();
        let w_mass: Vec<f64> = wq.clone();
        let w_px: Vec<f64> = wq.iter().zip(&points).map(|(w, p)| w * p[0]).collect();
        let w_py: Vec<f64> = wq.iter().zip(&points).map(|(w, p)| w * p[1]).collect();
        let w_en: Vec<f64> = wq
            .iter()
            .zip(&points)
            .map(|(w, p)| w * (p[0] * p[0] + p[1] * p[1]))
            .collect();
        for (l, wl) in [w_mass, w_px, w_py, w_en].into_iter().enumerate() {
            let c = tape.weighted_sum(&dt_vars, &wl);
            if !tape.value(c).is_finite() {
                return Err(TrainError::NonFinite(format!(
                    "constraint {l} at t={t_i}"
                )));
            }
            c_vals[l].push(tape.value(c));
            c_vars[l].push(c);
        }
        let mass: f64 = jets
            .iter()
            .zip(&wq)
            .map(|(j, w)| w * tape.value(j.value))
            .sum();
        masses.push(mass);
    }

    let total = combine_modes(tape, base, mode, &c_vars, multipliers, weights)?;
    Ok(AssembledLoss {
        total,
        parts,
        constraint_values: c_vals,
        mass_values: masses,
    })
}

/// Discrete ‖c_l‖_{L²(0,T)} over the time grid: sqrt((T/M)·Σ_i c_l(t_i)²).
pub fn constraint_norm(c_l: &[f64], time_weight: f64) -> f64 {
    (time_weight * c_l.iter().map(|c| c * c).sum::<f64>()).sqrt()
}

/// The initial value f₀ with its normalizer computed once.
pub fn fp_initial_cached(cfg: &FpConfig) -> impl Fn(f64, f64) -> f64 + '_ {
    let z = cfg.initial_normalizer();
    move |x, v| initial_value(cfg, z, x, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{init_params, NetSpec, ParamVector};
    use crate::kinetic::fp_initial;
    use crate::kinetic::oracle::{BkwExact, FpEquilibrium, FpUniformExact};

    fn small_net(seed: u64) -> ParamVector {
        init_params(&NetSpec::new(3, vec![8, 8]).unwrap(), seed).unwrap()
    }

    fn fp_quad(cfg: &FpConfig) -> QuadGrid {
        QuadGrid::new(&[
            (Axis::X, 12, 0.0, 1.0),
            (Axis::V, 16, -cfg.v_max, cfg.v_max),
        ])
    }

    fn weights_for(mode: Mode, n_constraints: usize, time_weight: f64) -> ConstraintWeights {
        let _ = mode;
        ConstraintWeights {
            beta: vec![10.0; n_constraints],
            mu: 10.0,
            time_weight,
        }
    }

    #[test]
    fn fp_initial_matches_cached_form() {
        let cfg = FpConfig::test2();
        let cached = fp_initial_cached(&cfg);
        for (x, v) in [(0.1, 0.5), (0.9, -3.0), (0.5, 0.0)] {
            assert_eq!(cached(x, v), fp_initial(x, v, &cfg).unwrap());
        }
    }

    #[test]
    fn zero_network_fp_loss_components() {
        // f ≡ 0: GE and BC vanish, IC is the weighted sum of f₀².
        let spec = NetSpec::new(3, vec![4]).unwrap();
        let p = ParamVector {
            values: vec![0.0; spec.param_count()],
            spec,
            seed: 0,
        };
        let cfg = FpConfig::test1();
        let batches = sample_fp_batches(&cfg, 4, 5, 4, 11, 0).unwrap();
        let parts = loss_fp_hat(&p, &batches, &cfg).unwrap();
        assert_eq!(parts.ge, 0.0);
        assert_eq!(parts.bc, 0.0);
        let f0 = fp_initial_cached(&cfg);
        let mut expected = 0.0;
        for &x in &batches.initial.axes[0].values {
            for &v in &batches.initial.axes[1].values {
                expected += f0(x, v) * f0(x, v);
            }
        }
        expected *= 2.0 * cfg.v_max / 25.0;
        assert!((parts.ic - expected).abs() <= 1e-15 * expected);
        assert!(parts.ic > 0.0);
    }

    #[test]
    fn exact_equilibrium_solution_has_vanishing_loss_and_constraints() {
        // p = 2q makes the stationary Maxwellian match the test-1 initial
        // condition; every component sits at quadrature tolerance.
        let cfg = FpConfig {
            q: 0.5,
            p: 1.0,
            ..FpConfig::test1()
        };
        let field = FpEquilibrium::matching_test1(&cfg);
        let batches = sample_fp_batches(&cfg, 5, 6, 4, 3, 0).unwrap();
        let parts = loss_fp_hat(&field, &batches, &cfg).unwrap();
        assert!(parts.ge <= 1e-24, "ge {}", parts.ge);
        assert!(parts.ic <= 1e-20, "ic {}", parts.ic);
        assert!(parts.bc <= 1e-28, "bc {}", parts.bc);
        let quad = fp_quad(&cfg);
        for t_i in [0.1, 0.6] {
            let c = constraint_fp(&field, t_i, &quad).unwrap();
            assert!(c.abs() <= 1e-6, "c({t_i}) = {c}");
        }
    }

    #[test]
    fn ou_solution_keeps_constraints_at_quadrature_tolerance() {
        let cfg = FpConfig::test1();
        let field = FpUniformExact::for_test1(&cfg);
        let quad = QuadGrid::new(&[
            (Axis::X, 16, 0.0, 1.0),
            (Axis::V, 24, -cfg.v_max, cfg.v_max),
        ]);
        for t_i in [0.05, 0.5, 0.95] {
            let c = constraint_fp(&field, t_i, &quad).unwrap();
            assert!(c.abs() <= 1e-6, "c({t_i}) = {c}");
        }
    }

    #[test]
    fn constraint_matches_time_difference_of_mass() {
        // c(t) against a centered difference of the mass quadrature.
        let p = small_net(5);
        let cfg = FpConfig::test1();
        let quad = fp_quad(&cfg);
        let mass = |t: f64| -> f64 {
            quad.integrate(|pt| crate::diffnet::forward(&p, &[t, pt[0], pt[1]]).unwrap())
        };
        let h = 1e-4;
        for t_i in [0.25, 0.75] {
            let c = constraint_fp(&p, t_i, &quad).unwrap();
            let fd = (mass(t_i + h) - mass(t_i - h)) / (2.0 * h);
            assert!((c - fd).abs() <= 1e-6, "c {c} vs fd {fd}");
        }
    }

    #[test]
    fn constant_in_time_network_has_zero_constraints() {
        // Zero the first-layer weights feeding on t: output is t-independent.
        let mut p = small_net(9);
        let (w_off, _) = p.spec.layer_offsets()[0];
        let (fan_in, fan_out) = p.spec.layer_dims()[0];
        for i in 0..fan_out {
            p.values[w_off + i * fan_in] = 0.0; // column multiplying t
        }
        let cfg = FpConfig::test1();
        let quad = fp_quad(&cfg);
        let c = constraint_fp(&p, 0.4, &quad).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn bkw_oracle_satisfies_all_four_boltzmann_constraints() {
        let quad = QuadGrid::new(&[(Axis::Vx, 48, -5.0, 5.0), (Axis::Vy, 48, -5.0, 5.0)]);
        for t_i in [0.2, 1.0, 2.5] {
            let c = constraints_boltzmann(&BkwExact, t_i, &quad).unwrap();
            for (l, cl) in c.iter().enumerate() {
                assert!(cl.abs() <= 1e-6, "c{l}({t_i}) = {cl}");
            }
        }
    }

    #[test]
    fn radially_symmetric_field_has_zero_momentum_constraints() {
        let quad = QuadGrid::new(&[(Axis::Vx, 24, -5.0, 5.0), (Axis::Vy, 24, -5.0, 5.0)]);
        let c = constraints_boltzmann(&BkwExact, 0.7, &quad).unwrap();
        assert!(c[1].abs() <= 1e-12);
        assert!(c[2].abs() <= 1e-12);
    }

    #[test]
    fn assemble_loss_mode_identities_hold_bitwise() {
        let base = 0.7312;
        let constraints = vec![vec![0.11, -0.23, 0.05], vec![0.4, 0.0, -0.1]];
        let lam0 = vec![vec![0.0; 3], vec![0.0; 3]];
        let w0 = ConstraintWeights {
            beta: vec![0.0, 0.0],
            mu: 0.0,
            time_weight: 0.5,
        };
        let u = assemble_loss(base, Mode::Unconstrained, &constraints, &lam0, &w0).unwrap();
        let p0 = assemble_loss(base, Mode::Penalty, &constraints, &lam0, &w0).unwrap();
        let a0 = assemble_loss(base, Mode::Augmented, &constraints, &lam0, &w0).unwrap();
        assert_eq!(u, base);
        assert_eq!(p0, base);
        assert_eq!(a0, base);
    }

    #[test]
    fn penalty_arithmetic_matches_formula() {
        // one constraint, c(t_i) = 0.1 for all i, β = 10, T = 1, M = 10:
        // adds 10 · (1/10) · 10 · 0.01 = 0.1
        let base = 1.0;
        let constraints = vec![vec![0.1; 10]];
        let w = ConstraintWeights {
            beta: vec![10.0],
            mu: 0.0,
            time_weight: 0.1,
        };
        let total = assemble_loss(base, Mode::Penalty, &constraints, &[vec![0.0; 10]], &w).unwrap();
        assert!((total - 1.1).abs() < 1e-15);
    }

    #[test]
    fn augmented_equals_penalty_at_mu_plus_lagrange_terms() {
        let base = 0.4;
        let constraints = vec![vec![0.2, -0.3], vec![0.05, 0.15]];
        let lam = vec![vec![1.0, -2.0], vec![0.5, 0.25]];
        let w = ConstraintWeights {
            beta: vec![7.0, 7.0],
            mu: 7.0,
            time_weight: 0.5,
        };
        let aug = assemble_loss(base, Mode::Augmented, &constraints, &lam, &w).unwrap();
        let pen = assemble_loss(base, Mode::Penalty, &constraints, &lam, &w).unwrap();
        let lagrange_terms: f64 = lam
            .iter()
            .zip(&constraints)
            .flat_map(|(l, c)| l.iter().zip(c).map(|(a, b)| a * b))
            .sum();
        assert!((aug - (pen + lagrange_terms)).abs() <= 1e-15);
    }

    #[test]
    fn penalty_is_nondecreasing_in_beta() {
        let base = 0.0;
        let constraints = vec![vec![0.3, -0.2, 0.7]];
        let lam = vec![vec![0.0; 3]];
        let mut prev = f64::NEG_INFINITY;
        for beta in [0.0, 1.0, 5.0, 50.0] {
            let w = ConstraintWeights {
                beta: vec![beta],
                mu: 0.0,
                time_weight: 0.25,
            };
            let total = assemble_loss(base, Mode::Penalty, &constraints, &lam, &w).unwrap();
            assert!(total >= prev);
            prev = total;
        }
    }

    #[test]
    fn tape_fp_loss_matches_plain_evaluation() {
        let p = small_net(21);
        let cfg = FpConfig::test1();
        let batches = sample_fp_batches(&cfg, 4, 4, 3, 7, 2).unwrap();
        let plain = loss_fp_hat(&p, &batches, &cfg).unwrap();

        let time_grid = TimeGrid::new(5, cfg.t_final).unwrap();
        let quad = fp_quad(&cfg);
        let w = weights_for(Mode::Penalty, 1, time_grid.weight());
        let mut tape = Tape::new(&p);
        let asm = build_fp_loss(
            &mut tape,
            &batches,
            &cfg,
            Mode::Unconstrained,
            &[vec![0.0; 5]],
            &w,
            &time_grid,
            &quad,
        )
        .unwrap();
        let rel = (asm.parts.total - plain.total).abs() / plain.total.abs().max(1e-300);
        assert!(rel <= 1e-13, "tape {} vs plain {}", asm.parts.total, plain.total);
        assert!((asm.parts.ge - plain.ge).abs() <= 1e-13 * plain.ge.abs().max(1e-300));
        assert!((asm.parts.ic - plain.ic).abs() <= 1e-13 * plain.ic.abs().max(1e-300));
        assert!((asm.parts.bc - plain.bc).abs() <= 1e-13 * plain.bc.abs().max(1e-300));

        // tape constraint values match the plain operation
        for (i, &t_i) in time_grid.values.iter().enumerate() {
            let c = constraint_fp(&p, t_i, &quad).unwrap();
            assert!((asm.constraint_values[0][i] - c).abs() <= 1e-12 * c.abs().max(1e-12));
        }
    }

    #[test]
    fn tape_boltzmann_loss_matches_plain_evaluation() {
        let p = small_net(33);
        let cfg = BoltzmannConfig {
            n_vstar: 4,
            n_angle: 4,
            ..BoltzmannConfig::bkw()
        };
        let quad = CollisionQuad::new(&cfg).unwrap();
        let batches = sample_boltzmann_batches(&cfg, 3, 3, 13, 1).unwrap();
        let plain = loss_boltzmann_hat(&p, &batches, &cfg, &quad).unwrap();

        let time_grid = TimeGrid::new(3, cfg.t_final).unwrap();
        let mq = QuadGrid::new(&[
            (Axis::Vx, 6, -cfg.v_max, cfg.v_max),
            (Axis::Vy, 6, -cfg.v_max, cfg.v_max),
        ]);
        let w = weights_for(Mode::Augmented, 4, time_grid.weight());
        let mut tape = Tape::new(&p);
        let asm = build_boltzmann_loss(
            &mut tape,
            &batches,
            &cfg,
            &quad,
            Mode::Unconstrained,
            &vec![vec![0.0; 3]; 4],
            &w,
            &time_grid,
            &mq,
        )
        .unwrap();
        let rel = (asm.parts.total - plain.total).abs() / plain.total.abs().max(1e-300);
        assert!(rel <= 1e-12, "tape {} vs plain {}", asm.parts.total, plain.total);

        for (i, &t_i) in time_grid.values.iter().enumerate() {
            let c = constraints_boltzmann(&p, t_i, &mq).unwrap();
            for l in 0..4 {
                assert!(
                    (asm.constraint_values[l][i] - c[l]).abs()
                        <= 1e-12 * c[l].abs().max(1e-12),
                    "constraint {l} at node {i}"
                );
            }
        }
    }

    #[test]
    fn tape_mode_combination_matches_value_level_assembly() {
        let p = small_net(41);
        let cfg = FpConfig::test1();
        let batches = sample_fp_batches(&cfg, 3, 3, 2, 19, 0).unwrap();
        let time_grid = TimeGrid::new(4, cfg.t_final).unwrap();
        let quad = fp_quad(&cfg);
        let lam = vec![vec![0.3, -0.1, 0.2, 0.05]];
        for mode in [Mode::Unconstrained, Mode::Penalty, Mode::Lagrange, Mode::Augmented] {
            let w = ConstraintWeights {
                beta: vec![3.0],
                mu: 2.0,
                time_weight: time_grid.weight(),
            };
            let mut tape = Tape::new(&p);
            let asm =
                build_fp_loss(&mut tape, &batches, &cfg, mode, &lam, &w, &time_grid, &quad)
                    .unwrap();
            let expected = assemble_loss(
                asm.parts.total,
                mode,
                &asm.constraint_values,
                &lam,
                &w,
            )
            .unwrap();
            let got = tape.value(asm.total);
            assert!(
                (got - expected).abs() <= 1e-14 * expected.abs().max(1.0),
                "{mode:?}: tape {got} vs value-level {expected}"
            );
        }
    }
}
