//! Constrained training: the four loss modes, dual ascent, Adam, and the
//! training loop.

mod adam;
mod loss;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use loss::{
    assemble_loss, build_boltzmann_loss, build_fp_loss, constraint_fp, constraint_norm,
    constraints_boltzmann, fp_initial_cached, loss_boltzmann_hat, loss_fp_hat, req_dt,
    req_fp_interior, sample_boltzmann_batches, sample_fp_batches, AssembledLoss,
    BoltzmannBatches, ConstraintWeights, FpBatches, LossParts,
};

use crate::collocation::{Axis, CollocationError, QuadGrid, TimeGrid};
use crate::diffnet::{init_params, DiffError, NetSpec, ParamVector, Tape};
use crate::kinetic::{bkw, BoltzmannConfig, CollisionQuad, FpConfig, KineticError};
use crate::reference::{
    conservation_traces, eval_error, fd_solve_fp, suggested_steps, ConservationTraces, FdGrid,
    RefError, Reference, TraceProblem,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Kinetic(#[from] KineticError),
    #[error(transparent)]
    Collocation(#[from] CollocationError),
    #[error(transparent)]
    Reference(#[from] RefError),
}

/// How constraints enter the optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Unconstrained,
    Penalty,
    Lagrange,
    Augmented,
}

impl Mode {
    pub fn uses_multipliers(&self) -> bool {
        matches!(self, Mode::Lagrange | Mode::Augmented)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Unconstrained => "unconstrained",
            Mode::Penalty => "penalty",
            Mode::Lagrange => "lagrange",
            Mode::Augmented => "augmented",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unconstrained" => Ok(Mode::Unconstrained),
            "penalty" => Ok(Mode::Penalty),
            "lagrange" => Ok(Mode::Lagrange),
            "augmented" => Ok(Mode::Augmented),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

/// Which experiment to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    FpTest1,
    FpTest2,
    BoltzmannBkw,
}

impl Problem {
    pub fn is_fp(&self) -> bool {
        matches!(self, Problem::FpTest1 | Problem::FpTest2)
    }

    pub fn constraint_count(&self) -> usize {
        if self.is_fp() {
            1
        } else {
            4
        }
    }
}

/// Discretized Lagrange multipliers: one value per (constraint, time node),
/// initialized to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierField {
    pub values: Vec<Vec<f64>>,
}

impl MultiplierField {
    pub fn zeros(n_constraints: usize, m: usize) -> Self {
        MultiplierField {
            values: vec![vec![0.0; m]; n_constraints],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }
}

/// Dual-ascent update after the primal step: λ += η·c in Lagrange mode,
/// λ += μ·c in augmented mode (the penalty weight doubles as the dual step).
pub fn dual_ascent(
    multipliers: &mut MultiplierField,
    constraint_values: &[Vec<f64>],
    mode: Mode,
    eta_dual: f64,
    mu: f64,
) -> Result<(), TrainError> {
    if !mode.uses_multipliers() {
        return Err(TrainError::Config(format!(
            "dual ascent called in mode {mode:?}"
        )));
    }
    if multipliers.values.len() != constraint_values.len()
        || multipliers
            .values
            .iter()
            .zip(constraint_values)
            .any(|(m, c)| m.len() != c.len())
    {
        return Err(TrainError::Config(
            "multiplier field shape does not match constraint values".into(),
        ));
    }
    let step = match mode {
        Mode::Lagrange => eta_dual,
        Mode::Augmented => mu,
        _ => unreachable!(),
    };
    for (lam_l, c_l) in multipliers.values.iter_mut().zip(constraint_values) {
        for (lam, c) in lam_l.iter_mut().zip(c_l) {
            *lam += step * c;
        }
    }
    Ok(())
}

/// Full training configuration. Defaults mirror the desk-scale experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub problem: Problem,
    pub mode: Mode,
    pub hidden_widths: Vec<usize>,
    pub seed: u64,
    pub epochs: usize,
    /// Primal learning rate.
    pub lr: f64,
    /// Quadratic penalty weight(s) β, one per constraint (a single value is
    /// broadcast).
    pub beta: Vec<f64>,
    /// Augmented-Lagrangian quadratic weight μ.
    pub mu: f64,
    /// Dual-ascent step η for Lagrange mode.
    pub eta_dual: f64,
    /// Dual update every this many epochs.
    pub dual_period: usize,
    /// Collocation samples per axis: interior, initial, boundary.
    pub n_c: usize,
    pub n_i: usize,
    pub n_b: usize,
    /// Time-grid size M carrying the multipliers.
    pub m_time: usize,
    /// Constraint quadrature nodes (x for FP; each velocity axis otherwise).
    pub quad_x: usize,
    pub quad_v: usize,
    pub fp: FpConfig,
    pub boltzmann: BoltzmannConfig,
    /// Evaluation times of the per-epoch error metric.
    pub error_eval_times: usize,
    /// Dense time-grid size of the post-training conservation traces.
    pub trace_points: usize,
    /// FD reference resolution for per-epoch errors (FP problems).
    pub ref_n_x: usize,
    pub ref_n_v: usize,
    /// Summation is always ordered and deterministic; the flag is recorded
    /// in reports for provenance.
    pub reproducible: bool,
}

impl TrainerConfig {
    pub fn defaults(problem: Problem) -> Self {
        let fp = match problem {
            Problem::FpTest2 => FpConfig::test2(),
            _ => FpConfig::test1(),
        };
        let is_fp = problem.is_fp();
        TrainerConfig {
            problem,
            mode: Mode::Augmented,
            hidden_widths: vec![64, 64],
            seed: 1,
            epochs: if is_fp { 3000 } else { 300 },
            lr: 1e-3,
            beta: vec![10.0; problem.constraint_count()],
            mu: 10.0,
            eta_dual: 1e-2,
            dual_period: 1,
            n_c: if is_fp { 16 } else { 6 },
            n_i: 16,
            n_b: 16,
            m_time: 16,
            quad_x: 16,
            quad_v: 24,
            fp,
            boltzmann: BoltzmannConfig {
                n_vstar: 8,
                n_angle: 8,
                ..BoltzmannConfig::bkw()
            },
            error_eval_times: 11,
            trace_points: 101,
            ref_n_x: 64,
            ref_n_v: 128,
            reproducible: true,
        }
    }

    pub fn t_final(&self) -> f64 {
        if self.problem.is_fp() {
            self.fp.t_final
        } else {
            self.boltzmann.t_final
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.problem.is_fp() {
            self.fp.validate()?;
        } else {
            self.boltzmann.validate()?;
        }
        if self.hidden_widths.is_empty() {
            return Err(TrainError::Config("network needs a hidden layer".into()));
        }
        if self.n_c == 0 || self.n_i == 0 || (self.problem.is_fp() && self.n_b == 0) {
            return Err(TrainError::Config("batch sizes must be positive".into()));
        }
        if self.m_time == 0 || self.quad_v == 0 || (self.problem.is_fp() && self.quad_x == 0) {
            return Err(TrainError::Config(
                "time grid and quadrature sizes must be positive".into(),
            ));
        }
        if self.beta.len() != self.problem.constraint_count() {
            return Err(TrainError::Config(format!(
                "{} penalty weights for {} constraints",
                self.beta.len(),
                self.problem.constraint_count()
            )));
        }
        if self.beta.iter().any(|b| *b < 0.0) || self.mu < 0.0 || self.eta_dual < 0.0 {
            return Err(TrainError::Config(
                "beta, mu, and eta_dual must be nonnegative".into(),
            ));
        }
        if self.dual_period == 0 {
            return Err(TrainError::Config("dual_period must be positive".into()));
        }
        if self.lr <= 0.0 {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        if self.error_eval_times < 2 || self.trace_points < 2 {
            return Err(TrainError::Config(
                "need at least two error/trace evaluation times".into(),
            ));
        }
        Ok(())
    }

    /// Unconstrained mode carries no constraint terms: β and μ act as zero
    /// and no dual updates run.
    pub fn effective_weights(&self, time_weight: f64) -> ConstraintWeights {
        match self.mode {
            Mode::Unconstrained => ConstraintWeights {
                beta: vec![0.0; self.problem.constraint_count()],
                mu: 0.0,
                time_weight,
            },
            _ => ConstraintWeights {
                beta: self.beta.clone(),
                mu: self.mu,
                time_weight,
            },
        }
    }

    pub fn net_spec(&self) -> Result<NetSpec, TrainError> {
        Ok(NetSpec::new(3, self.hidden_widths.clone())?)
    }
}

/// Per-epoch record of loss components, constraint norms, reference error,
/// and the time-averaged mass. Row `epoch` describes the parameters before
/// that epoch's update; the final row describes the trained network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_ge: f64,
    pub loss_ic: f64,
    pub loss_bc: f64,
    /// Discrete ‖c_l‖_{L²(0,T)} per constraint.
    pub constraint_norms: Vec<f64>,
    pub error_linf_l2: f64,
    pub time_avg_mass: f64,
}

/// Everything a finished (or aborted) run reports.
#[derive(Debug)]
pub struct RunReport {
    pub config: TrainerConfig,
    pub records: Vec<EpochRecord>,
    pub final_params: ParamVector,
    pub multipliers: MultiplierField,
    pub traces: ConservationTraces,
    pub final_error: f64,
    /// Set when training aborted on a non-finite value; the parameters are
    /// the last good checkpoint.
    pub aborted: Option<String>,
}

/// Train with the configured mode and return the full report.
pub fn train(cfg: &TrainerConfig) -> Result<RunReport, TrainError> {
    train_with_hooks(cfg, |_, _| {})
}

/// Train, invoking `on_epoch_end(epoch, params)` after every parameter
/// update (checkpoint writers hook in here).
pub fn train_with_hooks(
    cfg: &TrainerConfig,
    mut on_epoch_end: impl FnMut(usize, &ParamVector),
) -> Result<RunReport, TrainError> {
    cfg.validate()?;
    let spec = cfg.net_spec()?;
    let mut params = init_params(&spec, cfg.seed)?;
    let t_final = cfg.t_final();
    let time_grid = TimeGrid::new(cfg.m_time, t_final)?;
    let quad = constraint_quad(cfg);
    let weights = cfg.effective_weights(time_grid.weight());
    let mut multipliers =
        MultiplierField::zeros(cfg.problem.constraint_count(), cfg.m_time);
    let mut adam = AdamState::new(params.len());

    // Reference for the per-epoch error metric.
    let fd_reference: Option<FdGrid> = if cfg.problem.is_fp() {
        let n_t = suggested_steps(&cfg.fp, cfg.ref_n_x, cfg.ref_n_v, 1e-3);
        Some(fd_solve_fp(&cfg.fp, cfg.ref_n_x, cfg.ref_n_v, n_t)?)
    } else {
        None
    };
    let bkw_ref = |t: f64, vx: f64, vy: f64| bkw(t, vx, vy);
    let reference = match &fd_reference {
        Some(grid) => Reference::Grid(grid),
        None => Reference::Analytic(&bkw_ref),
    };
    let eval_times: Vec<f64> = linspace(0.0, t_final, cfg.error_eval_times);
    let collision_quad = if cfg.problem.is_fp() {
        None
    } else {
        Some(CollisionQuad::new(&cfg.boltzmann)?)
    };

    let mut records: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs + 1);
    let mut aborted = None;

    for epoch in 0..=cfg.epochs {
        // Assemble the epoch's loss on a fresh tape with resampled batches.
        let assembled: Result<(AssembledLoss, Option<Vec<f64>>), TrainError> = (|| {
            let mut tape = Tape::new(&params);
            let asm = match cfg.problem {
                Problem::FpTest1 | Problem::FpTest2 => {
                    let batches = sample_fp_batches(
                        &cfg.fp, cfg.n_c, cfg.n_i, cfg.n_b, cfg.seed, epoch as u64,
                    )?;
                    build_fp_loss(
                        &mut tape,
                        &batches,
                        &cfg.fp,
                        cfg.mode,
                        &multipliers.values,
                        &weights,
                        &time_grid,
                        &quad,
                    )?
                }
                Problem::BoltzmannBkw => {
                    let batches = sample_boltzmann_batches(
                        &cfg.boltzmann,
                        cfg.n_c,
                        cfg.n_i,
                        cfg.seed,
                        epoch as u64,
                    )?;
                    build_boltzmann_loss(
                        &mut tape,
                        &batches,
                        &cfg.boltzmann,
                        collision_quad.as_ref().unwrap(),
                        cfg.mode,
                        &multipliers.values,
                        &weights,
                        &time_grid,
                        &quad,
                    )?
                }
            };
            let grad = if epoch < cfg.epochs {
                Some(tape.gradient(asm.total)?)
            } else {
                None
            };
            Ok((asm, grad))
        })();

        let (asm, grad) = match assembled {
            Ok(v) => v,
            Err(TrainError::NonFinite(msg)) => {
                aborted = Some(format!("epoch {epoch}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        };

        let error_report = eval_error(&params, &reference, &eval_times, &quad)?;
        let time_avg_mass =
            asm.mass_values.iter().sum::<f64>() / asm.mass_values.len() as f64;
        let total_with_constraints = assemble_loss(
            asm.parts.total,
            cfg.mode,
            &asm.constraint_values,
            &multipliers.values,
            &weights,
        )?;
        records.push(EpochRecord {
            epoch,
            loss_total: total_with_constraints,
            loss_ge: asm.parts.ge,
            loss_ic: asm.parts.ic,
            loss_bc: asm.parts.bc,
            constraint_norms: asm
                .constraint_values
                .iter()
                .map(|c_l| constraint_norm(c_l, time_grid.weight()))
                .collect(),
            error_linf_l2: error_report.linf_l2,
            time_avg_mass,
        });

        let Some(grad) = grad else { break };
        match adam_step(&mut params, &grad, &mut adam, cfg.lr) {
            Ok(()) => {}
            Err(TrainError::NonFinite(msg)) => {
                aborted = Some(format!("epoch {epoch}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        }
        if cfg.mode.uses_multipliers() && (epoch + 1) % cfg.dual_period == 0 {
            dual_ascent(
                &mut multipliers,
                &asm.constraint_values,
                cfg.mode,
                cfg.eta_dual,
                cfg.mu,
            )?;
        }
        on_epoch_end(epoch + 1, &params);
    }

    let trace_times = linspace(0.0, t_final, cfg.trace_points);
    let trace_problem = if cfg.problem.is_fp() {
        TraceProblem::FokkerPlanck
    } else {
        TraceProblem::Boltzmann
    };
    let traces = conservation_traces(&params, trace_problem, &trace_times, &quad)?;
    let final_error = records.last().map(|r| r.error_linf_l2).unwrap_or(f64::NAN);

    Ok(RunReport {
        config: cfg.clone(),
        records,
        final_params: params,
        multipliers,
        traces,
        final_error,
        aborted,
    })
}

fn constraint_quad(cfg: &TrainerConfig) -> QuadGrid {
    if cfg.problem.is_fp() {
        QuadGrid::new(&[
            (Axis::X, cfg.quad_x, 0.0, 1.0),
            (Axis::V, cfg.quad_v, -cfg.fp.v_max, cfg.fp.v_max),
        ])
    } else {
        QuadGrid::new(&[
            (Axis::Vx, cfg.quad_v, -cfg.boltzmann.v_max, cfg.boltzmann.v_max),
            (Axis::Vy, cfg.quad_v, -cfg.boltzmann.v_max, cfg.boltzmann.v_max),
        ])
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(problem: Problem, mode: Mode) -> TrainerConfig {
        TrainerConfig {
            mode,
            hidden_widths: vec![8],
            epochs: 3,
            n_c: 4,
            n_i: 4,
            n_b: 3,
            m_time: 4,
            quad_x: 6,
            quad_v: 8,
            error_eval_times: 3,
            trace_points: 5,
            ref_n_x: 32,
            ref_n_v: 64,
            ..TrainerConfig::defaults(problem)
        }
    }

    #[test]
    fn dual_ascent_formula() {
        let mut lam = MultiplierField::zeros(1, 3);
        let c = vec![vec![0.3, -0.2, 0.0]];
        dual_ascent(&mut lam, &c, Mode::Lagrange, 0.1, 5.0).unwrap();
        assert!((lam.values[0][0] - 0.03).abs() < 1e-15);
        assert!((lam.values[0][1] + 0.02).abs() < 1e-15);
        assert_eq!(lam.values[0][2], 0.0);
        // augmented uses mu as the step
        dual_ascent(&mut lam, &c, Mode::Augmented, 0.1, 5.0).unwrap();
        assert!((lam.values[0][0] - (0.03 + 1.5)).abs() < 1e-15);
    }

    #[test]
    fn dual_ascent_is_a_fixed_point_on_satisfied_constraints() {
        let mut lam = MultiplierField::zeros(2, 4);
        lam.values[1][2] = 0.7;
        let before = lam.clone();
        let c = vec![vec![0.0; 4], vec![0.0; 4]];
        dual_ascent(&mut lam, &c, Mode::Lagrange, 0.5, 1.0).unwrap();
        assert_eq!(lam, before);
    }

    #[test]
    fn dual_ascent_accumulates_linearly() {
        let mut lam = MultiplierField::zeros(1, 2);
        let c = vec![vec![0.4, -0.1]];
        dual_ascent(&mut lam, &c, Mode::Lagrange, 0.25, 0.0).unwrap();
        dual_ascent(&mut lam, &c, Mode::Lagrange, 0.25, 0.0).unwrap();
        assert!((lam.values[0][0] - 2.0 * 0.25 * 0.4).abs() < 1e-15);
    }

    #[test]
    fn dual_ascent_rejects_wrong_modes() {
        let mut lam = MultiplierField::zeros(1, 2);
        let c = vec![vec![0.1, 0.1]];
        assert!(dual_ascent(&mut lam, &c, Mode::Unconstrained, 0.1, 1.0).is_err());
        assert!(dual_ascent(&mut lam, &c, Mode::Penalty, 0.1, 1.0).is_err());
    }

    #[test]
    fn dual_update_sign_follows_constraint_sign() {
        let mut lam = MultiplierField::zeros(1, 3);
        let c = vec![vec![0.4, -0.7, 0.001]];
        dual_ascent(&mut lam, &c, Mode::Augmented, 0.0, 2.5).unwrap();
        for (lam, c) in lam.values[0].iter().zip(&c[0]) {
            assert_eq!(lam.signum(), c.signum());
        }
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let mut cfg = tiny_cfg(Problem::FpTest1, Mode::Penalty);
        cfg.beta = vec![1.0, 2.0];
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg(Problem::BoltzmannBkw, Mode::Penalty);
        cfg.beta = vec![1.0];
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_cfg(Problem::FpTest1, Mode::Augmented);
        cfg.mu = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_epoch_run_reports_only_the_initial_evaluation() {
        let mut cfg = tiny_cfg(Problem::FpTest1, Mode::Unconstrained);
        cfg.epochs = 0;
        let report = train(&cfg).unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.records[0].epoch, 0);
        assert!(report.aborted.is_none());
        // the parameters were never stepped
        let fresh = init_params(&cfg.net_spec().unwrap(), cfg.seed).unwrap();
        assert_eq!(report.final_params.values, fresh.values);
    }

    #[test]
    fn identical_configs_give_bit_identical_reports() {
        let cfg = tiny_cfg(Problem::FpTest1, Mode::Augmented);
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.loss_total, rb.loss_total);
            assert_eq!(ra.error_linf_l2, rb.error_linf_l2);
            assert_eq!(ra.time_avg_mass, rb.time_avg_mass);
            assert_eq!(ra.constraint_norms, rb.constraint_norms);
        }
        assert_eq!(a.final_params.values, b.final_params.values);
        assert_eq!(a.traces.mass, b.traces.mass);
    }

    #[test]
    fn short_runs_complete_for_every_mode_and_problem() {
        for problem in [Problem::FpTest1, Problem::BoltzmannBkw] {
            for mode in [
                Mode::Unconstrained,
                Mode::Penalty,
                Mode::Lagrange,
                Mode::Augmented,
            ] {
                let mut cfg = tiny_cfg(problem, mode);
                if problem == Problem::BoltzmannBkw {
                    cfg.n_c = 2;
                    cfg.n_i = 3;
                    cfg.boltzmann.n_vstar = 4;
                    cfg.boltzmann.n_angle = 4;
                    cfg.quad_v = 6;
                }
                let report = train(&cfg).unwrap();
                assert_eq!(report.records.len(), cfg.epochs + 1);
                assert!(report.aborted.is_none(), "{problem:?}/{mode:?}");
                assert!(report.records.iter().all(|r| r.loss_total.is_finite()));
                assert_eq!(
                    report.records[0].constraint_norms.len(),
                    problem.constraint_count()
                );
                // multipliers move only in dual modes
                let moved = report
                    .multipliers
                    .values
                    .iter()
                    .flatten()
                    .any(|&l| l != 0.0);
                assert_eq!(moved, mode.uses_multipliers(), "{problem:?}/{mode:?}");
            }
        }
    }

    #[test]
    fn training_descends_on_the_loss() {
        let mut cfg = tiny_cfg(Problem::FpTest1, Mode::Unconstrained);
        cfg.epochs = 60;
        cfg.lr = 3e-3;
        let report = train(&cfg).unwrap();
        let first = report.records.first().unwrap().loss_total;
        let last = report.records.last().unwrap().loss_total;
        assert!(
            last < first,
            "loss did not decrease: {first} -> {last}"
        );
    }

    #[test]
    fn lagrange_multipliers_follow_dual_ascent_trace() {
        // With dual_period = 1 the final multipliers are η·Σ_epochs c(t_i).
        let mut cfg = tiny_cfg(Problem::FpTest1, Mode::Lagrange);
        cfg.epochs = 2;
        let report = train(&cfg).unwrap();
        assert!(report.multipliers.is_finite());
        assert_eq!(report.multipliers.values.len(), 1);
        assert_eq!(report.multipliers.values[0].len(), cfg.m_time);
    }
}
