//! Experiment orchestration behind the `kinetic-pinn` binary.
//!
//! Exit codes: 0 on success, 2 on configuration errors (unreadable or
//! invalid config, incompatible checkpoint, unsupported problem), 3 on a
//! numerical abort (non-finite loss or parameters).

use crate::config::{ConfigError, ExperimentConfig};
use crate::diffnet::{read_checkpoint, write_checkpoint, ParamVector};
use crate::kinetic::bkw;
use crate::reference::{
    conservation_traces, eval_error, fd_solve_fp, read_fd_grid, suggested_steps, write_fd_grid,
    FdGrid, Reference, TraceProblem,
};
use crate::report::{
    write_epochs_csv, write_evaluation_json, write_report_json, write_slices_csv,
    write_traces_csv, EvaluationReport, SliceRow, REPORT_FORMAT_VERSION,
};
use crate::trainer::{linspace, train_with_hooks, Mode, RunReport, TrainerConfig};
use crate::collocation::{Axis, QuadGrid};
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Command-level failure carrying its exit code.
#[derive(Debug)]
pub struct CliFailure {
    pub code: i32,
    pub message: String,
}

impl CliFailure {
    fn config(message: impl Into<String>) -> Self {
        CliFailure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn numeric(message: impl Into<String>) -> Self {
        CliFailure {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl From<ConfigError> for CliFailure {
    fn from(e: ConfigError) -> Self {
        CliFailure::config(e.to_string())
    }
}

/// Overrides from command-line flags, applied after the config file.
#[derive(Debug, Default, Clone)]
pub struct CliOverrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// One mode, or all four sharing seed and batches.
    pub mode: Option<ModeSelection>,
    pub reproducible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeSelection {
    One(Mode),
    All,
}

impl std::str::FromStr for ModeSelection {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            Ok(ModeSelection::All)
        } else {
            s.parse::<Mode>().map(ModeSelection::One)
        }
    }
}

fn load_config(path: &Path, overrides: &CliOverrides) -> Result<ExperimentConfig, CliFailure> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = &overrides.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = overrides.seed {
        cfg.trainer.seed = seed;
    }
    if overrides.reproducible {
        cfg.trainer.reproducible = true;
    }
    if let Some(ModeSelection::One(mode)) = overrides.mode {
        cfg.trainer.mode = mode;
    }
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<(), CliFailure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliFailure::config(format!("cannot create output directory {}: {e}", dir.display())))
}

/// `train`: run the configured experiment (or all four modes) and write
/// epochs.csv, traces.csv, checkpoint.bin, and report.json per run.
pub fn cmd_train(config_path: &Path, overrides: &CliOverrides) -> Result<(), CliFailure> {
    let base = load_config(config_path, overrides)?;
    let run_all = matches!(overrides.mode, Some(ModeSelection::All));
    let modes: Vec<Mode> = if run_all {
        vec![
            Mode::Unconstrained,
            Mode::Penalty,
            Mode::Lagrange,
            Mode::Augmented,
        ]
    } else {
        vec![base.trainer.mode]
    };

    let mut aborted: Option<String> = None;
    for mode in modes {
        let mut cfg = base.clone();
        cfg.trainer.mode = mode;
        let out_dir = if run_all {
            base.out_dir.join(mode.as_str())
        } else {
            base.out_dir.clone()
        };
        ensure_dir(&out_dir)?;
        eprintln!(
            "training {:?} in mode {} (seed {}, {} epochs) -> {}",
            cfg.trainer.problem,
            mode.as_str(),
            cfg.trainer.seed,
            cfg.trainer.epochs,
            out_dir.display()
        );
        let report = run_one(&cfg, &out_dir)?;
        if let Some(msg) = &report.aborted {
            eprintln!("numerical abort: {msg}");
            aborted = Some(msg.clone());
        }
    }
    match aborted {
        Some(msg) => Err(CliFailure::numeric(msg)),
        None => Ok(()),
    }
}

fn run_one(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport, CliFailure> {
    let every = cfg.checkpoint_every;
    let trainer_cfg = cfg.trainer.clone();
    let report = train_with_hooks(&trainer_cfg, |epoch, params| {
        if every > 0 && epoch % every == 0 {
            let _ = write_checkpoint(params, &out_dir.join(format!("checkpoint_{epoch:06}.bin")));
        }
    })
    .map_err(|e| match e {
        crate::trainer::TrainError::NonFinite(msg) => CliFailure::numeric(msg),
        other => CliFailure::config(other.to_string()),
    })?;

    write_checkpoint(&report.final_params, &out_dir.join("checkpoint.bin"))
        .map_err(|e| CliFailure::config(e.to_string()))?;
    write_epochs_csv(&report.records, &out_dir.join("epochs.csv"))
        .map_err(|e| CliFailure::config(e.to_string()))?;
    write_traces_csv(&report.traces, &out_dir.join("traces.csv"))
        .map_err(|e| CliFailure::config(e.to_string()))?;
    let mut cfg_echo = cfg.clone();
    cfg_echo.out_dir = out_dir.to_path_buf();
    cfg_echo.trainer = report.config.clone();
    write_report_json(&cfg_echo, &report, &out_dir.join("report.json"))
        .map_err(|e| CliFailure::config(e.to_string()))?;
    Ok(report)
}

/// `reference`: solve (or reuse) the FD oracle and write slice CSVs at
/// t ∈ {0, T/2, T}.
pub fn cmd_reference(config_path: &Path, overrides: &CliOverrides) -> Result<(), CliFailure> {
    let cfg = load_config(config_path, overrides)?;
    if !cfg.trainer.problem.is_fp() {
        return Err(CliFailure::config(
            "the reference solver covers the Fokker--Planck problems only; \
             the Boltzmann problem uses the exact BKW solution",
        ));
    }
    ensure_dir(&cfg.out_dir)?;
    let grid = obtain_fd_grid(&cfg, &cfg.out_dir)?;

    let t_final = cfg.trainer.fp.t_final;
    for (i, frac) in [0.0, 0.5, 1.0].iter().enumerate() {
        let t = frac * t_final;
        let level = grid.nearest_level(t).map_err(|e| CliFailure::config(e.to_string()))?;
        let mut rows = Vec::with_capacity(grid.n_x * grid.n_v);
        for j in 0..grid.n_x {
            for k in 0..grid.n_v {
                rows.push(SliceRow {
                    x: grid.x_center(j),
                    v: grid.v_center(k),
                    f_reference: grid.level(level)[j * grid.n_v + k],
                    f_network: None,
                });
            }
        }
        let path = cfg.out_dir.join(format!("slices_{i}.csv"));
        write_slices_csv(t, &rows, &path).map_err(|e| CliFailure::config(e.to_string()))?;
    }
    Ok(())
}

fn obtain_fd_grid(cfg: &ExperimentConfig, cache_dir: &Path) -> Result<FdGrid, CliFailure> {
    let fp = &cfg.trainer.fp;
    let (n_x, n_v) = (cfg.trainer.ref_n_x, cfg.trainer.ref_n_v);
    let n_t = if cfg.ref_n_t > 0 {
        cfg.ref_n_t
    } else {
        suggested_steps(fp, n_x, n_v, 1e-3)
    };
    let cache_path = cache_dir.join("fdgrid.bin");
    match read_fd_grid(&cache_path, fp, n_x, n_v, n_t) {
        Ok(Some(grid)) => {
            eprintln!("cache hit: {}", cache_path.display());
            return Ok(grid);
        }
        Ok(None) => {}
        Err(e) => eprintln!("ignoring unreadable cache: {e}"),
    }
    let grid =
        fd_solve_fp(fp, n_x, n_v, n_t).map_err(|e| CliFailure::config(e.to_string()))?;
    if let Err(e) = write_fd_grid(&grid, &cache_path) {
        eprintln!("cannot write cache {}: {e}", cache_path.display());
    }
    Ok(grid)
}

/// `evaluate`: load a checkpoint, recompute conservation traces and the
/// error report for the stored network.
pub fn cmd_evaluate(
    checkpoint_path: &Path,
    config_path: &Path,
    overrides: &CliOverrides,
) -> Result<(), CliFailure> {
    let cfg = load_config(config_path, overrides)?;
    let params: ParamVector =
        read_checkpoint(checkpoint_path).map_err(|e| CliFailure::config(e.to_string()))?;
    let expected_spec = cfg
        .trainer
        .net_spec()
        .map_err(|e| CliFailure::config(e.to_string()))?;
    if params.spec != expected_spec {
        return Err(CliFailure::config(format!(
            "checkpoint architecture {:?} does not match configured {:?}",
            params.spec, expected_spec
        )));
    }
    ensure_dir(&cfg.out_dir)?;

    let trainer = &cfg.trainer;
    let t_final = trainer.t_final();
    let (quad, problem) = if trainer.problem.is_fp() {
        (
            QuadGrid::new(&[
                (Axis::X, trainer.quad_x, 0.0, 1.0),
                (Axis::V, trainer.quad_v, -trainer.fp.v_max, trainer.fp.v_max),
            ]),
            TraceProblem::FokkerPlanck,
        )
    } else {
        let v = trainer.boltzmann.v_max;
        (
            QuadGrid::new(&[
                (Axis::Vx, trainer.quad_v, -v, v),
                (Axis::Vy, trainer.quad_v, -v, v),
            ]),
            TraceProblem::Boltzmann,
        )
    };

    let trace_times = linspace(0.0, t_final, trainer.trace_points);
    let traces = conservation_traces(&params, problem, &trace_times, &quad)
        .map_err(|e| CliFailure::numeric(e.to_string()))?;
    write_traces_csv(&traces, &cfg.out_dir.join("traces.csv"))
        .map_err(|e| CliFailure::config(e.to_string()))?;

    let eval_times = linspace(0.0, t_final, trainer.error_eval_times);
    let report = if trainer.problem.is_fp() {
        let grid = obtain_fd_grid(&cfg, &cfg.out_dir)?;
        eval_error(&params, &Reference::Grid(&grid), &eval_times, &quad)
    } else {
        let f = |t: f64, vx: f64, vy: f64| bkw(t, vx, vy);
        eval_error(&params, &Reference::Analytic(&f), &eval_times, &quad)
    }
    .map_err(|e| CliFailure::numeric(e.to_string()))?;

    let doc = EvaluationReport {
        format_version: REPORT_FORMAT_VERSION,
        config: &cfg,
        checkpoint: checkpoint_path.display().to_string(),
        linf_l2: report.linf_l2,
        per_time_l2: report.per_time_l2,
        eval_times: report.eval_times,
    };
    write_evaluation_json(&doc, &cfg.out_dir.join("report.json"))
        .map_err(|e| CliFailure::config(e.to_string()))?;
    Ok(())
}

/// Convenience used by tests: a TrainerConfig matching a tiny smoke run.
pub fn smoke_trainer_config() -> TrainerConfig {
    let mut cfg = TrainerConfig::defaults(crate::trainer::Problem::FpTest1);
    cfg.hidden_widths = vec![8];
    cfg.epochs = 2;
    cfg.n_c = 3;
    cfg.n_i = 3;
    cfg.n_b = 2;
    cfg.m_time = 3;
    cfg.quad_x = 4;
    cfg.quad_v = 6;
    cfg.error_eval_times = 3;
    cfg.trace_points = 5;
    cfg.ref_n_x = 32;
    cfg.ref_n_v = 64;
    cfg
}
