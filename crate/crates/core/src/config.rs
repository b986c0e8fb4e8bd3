//! Experiment configuration: a sectioned key-value (TOML) file with strict
//! validation. Every key is optional; missing keys take the desk-scale
//! defaults, and unknown keys are fatal so a typo cannot silently change an
//! experiment. The fully resolved configuration is echoed into report.json
//! so a run can be re-created from its report alone.

use crate::kinetic::{BoltzmannConfig, FpConfig, FpInitial};
use crate::trainer::{Mode, Problem, TrainerConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Unreadable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Scalar-or-list penalty weight; a scalar is broadcast per constraint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaSpec {
    Scalar(f64),
    PerConstraint(Vec<f64>),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    problem: Option<Problem>,
    mode: Option<Mode>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    reproducible: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkSection {
    hidden_widths: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainerSection {
    epochs: Option<usize>,
    lr: Option<f64>,
    beta: Option<BetaSpec>,
    mu: Option<f64>,
    eta_dual: Option<f64>,
    dual_period: Option<usize>,
    n_c: Option<usize>,
    n_i: Option<usize>,
    n_b: Option<usize>,
    m_time: Option<usize>,
    quad_x: Option<usize>,
    quad_v: Option<usize>,
    error_eval_times: Option<usize>,
    trace_points: Option<usize>,
    checkpoint_every: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FpSection {
    q: Option<f64>,
    p: Option<f64>,
    v_max: Option<f64>,
    t_final: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoltzmannSection {
    v_max: Option<f64>,
    t_final: Option<f64>,
    eps: Option<f64>,
    n_vstar: Option<usize>,
    n_angle: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReferenceSection {
    n_x: Option<usize>,
    n_v: Option<usize>,
    /// 0 selects the automatic step count (stability + time snapping).
    n_t: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Option<ExperimentSection>,
    network: Option<NetworkSection>,
    trainer: Option<TrainerSection>,
    fp: Option<FpSection>,
    boltzmann: Option<BoltzmannSection>,
    reference: Option<ReferenceSection>,
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub trainer: TrainerConfig,
    pub out_dir: PathBuf,
    pub checkpoint_every: usize,
    /// FD oracle step count; 0 means automatic.
    pub ref_n_t: usize,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        let raw: RawConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::resolve(raw)
    }

    fn resolve(raw: RawConfig) -> Result<Self, ConfigError> {
        let experiment = raw.experiment.unwrap_or_default();
        let problem = experiment.problem.unwrap_or(Problem::FpTest1);
        let mut cfg = TrainerConfig::defaults(problem);

        if let Some(mode) = experiment.mode {
            cfg.mode = mode;
        }
        if let Some(seed) = experiment.seed {
            cfg.seed = seed;
        }
        if let Some(r) = experiment.reproducible {
            cfg.reproducible = r;
        }
        if let Some(net) = raw.network {
            if let Some(w) = net.hidden_widths {
                cfg.hidden_widths = w;
            }
        }

        let mut checkpoint_every = 0;
        if let Some(t) = raw.trainer {
            set(&mut cfg.epochs, t.epochs);
            set(&mut cfg.lr, t.lr);
            set(&mut cfg.mu, t.mu);
            set(&mut cfg.eta_dual, t.eta_dual);
            set(&mut cfg.dual_period, t.dual_period);
            set(&mut cfg.n_c, t.n_c);
            set(&mut cfg.n_i, t.n_i);
            set(&mut cfg.n_b, t.n_b);
            set(&mut cfg.m_time, t.m_time);
            set(&mut cfg.quad_x, t.quad_x);
            set(&mut cfg.quad_v, t.quad_v);
            set(&mut cfg.error_eval_times, t.error_eval_times);
            set(&mut cfg.trace_points, t.trace_points);
            set(&mut checkpoint_every, t.checkpoint_every);
            if let Some(beta) = t.beta {
                cfg.beta = match beta {
                    BetaSpec::Scalar(b) => vec![b; problem.constraint_count()],
                    BetaSpec::PerConstraint(v) => v,
                };
            }
        }

        if let Some(fp) = raw.fp {
            set(&mut cfg.fp.q, fp.q);
            set(&mut cfg.fp.p, fp.p);
            set(&mut cfg.fp.v_max, fp.v_max);
            set(&mut cfg.fp.t_final, fp.t_final);
            cfg.fp.initial = match problem {
                Problem::FpTest2 => FpInitial::Test2,
                _ => FpInitial::Test1,
            };
        }
        if let Some(b) = raw.boltzmann {
            set(&mut cfg.boltzmann.v_max, b.v_max);
            set(&mut cfg.boltzmann.t_final, b.t_final);
            set(&mut cfg.boltzmann.eps, b.eps);
            set(&mut cfg.boltzmann.n_vstar, b.n_vstar);
            set(&mut cfg.boltzmann.n_angle, b.n_angle);
        }

        let mut ref_n_t = 0;
        if let Some(r) = raw.reference {
            set(&mut cfg.ref_n_x, r.n_x);
            set(&mut cfg.ref_n_v, r.n_v);
            set(&mut ref_n_t, r.n_t);
        }

        cfg.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(ExperimentConfig {
            trainer: cfg,
            out_dir: experiment.out_dir.unwrap_or_else(|| PathBuf::from("out")),
            checkpoint_every,
            ref_n_t,
        })
    }
}

fn set<T>(dst: &mut T, src: Option<T>) {
    if let Some(v) = src {
        *dst = v;
    }
}

/// Problem-dependent physics defaults, exposed for tests and the CLI.
pub fn default_fp_config(problem: Problem) -> FpConfig {
    match problem {
        Problem::FpTest2 => FpConfig::test2(),
        _ => FpConfig::test1(),
    }
}

pub fn default_boltzmann_config() -> BoltzmannConfig {
    BoltzmannConfig::bkw()
}
