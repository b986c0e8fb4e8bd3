//! Error norms against a reference solution and conservation traces.

use super::fd::FdGrid;
use super::RefError;
use crate::collocation::QuadGrid;
use crate::diffnet::JetField;

/// Reference a network is compared against: a finite-difference grid for the
/// Fokker--Planck tests, or a closed form (the BKW solution) evaluated as
/// `f(t, a, b)` on the two quadrature coordinates.
pub enum Reference<'a> {
    Grid(&'a FdGrid),
    Analytic(&'a dyn Fn(f64, f64, f64) -> f64),
}

impl Reference<'_> {
    fn eval(&self, t: f64, a: f64, b: f64) -> Result<f64, RefError> {
        match self {
            Reference::Grid(grid) => grid.interpolate(t, a, b),
            Reference::Analytic(f) => Ok(f(t, a, b)),
        }
    }
}

/// L²-in-space errors per evaluation time and their maximum over time.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub linf_l2: f64,
    pub per_time_l2: Vec<f64>,
    pub eval_times: Vec<f64>,
}

/// per_time_l2(t) = sqrt(∬ (f − ref)² dΩ) over the quadrature grid;
/// `linf_l2` is the maximum over the evaluation times.
pub fn eval_error(
    field: &dyn JetField,
    reference: &Reference,
    eval_times: &[f64],
    quad: &QuadGrid,
) -> Result<ErrorReport, RefError> {
    assert_eq!(quad.dimension(), 2, "error norm expects a 2-D quadrature");
    let mut per_time_l2 = Vec::with_capacity(eval_times.len());
    for &t in eval_times {
        let mut acc = 0.0;
        let mut err: Option<RefError> = None;
        quad.for_each(|p, w| {
            if err.is_some() {
                return;
            }
            let net = match field.value(&[t, p[0], p[1]]) {
                Ok(v) => v,
                Err(e) => {
                    err = Some(e.into());
                    return;
                }
            };
            let rf = match reference.eval(t, p[0], p[1]) {
                Ok(v) => v,
                Err(e) => {
                    err = Some(e);
                    return;
                }
            };
            let d = net - rf;
            acc += w * d * d;
        });
        if let Some(e) = err {
            return Err(e);
        }
        per_time_l2.push(acc.sqrt());
    }
    let linf_l2 = per_time_l2.iter().copied().fold(0.0, f64::max);
    Ok(ErrorReport {
        linf_l2,
        per_time_l2,
        eval_times: eval_times.to_vec(),
    })
}

/// L² difference between two FD grids at one time, on a common quadrature.
pub fn l2_difference_at(
    a: &FdGrid,
    b: &FdGrid,
    t: f64,
    quad: &QuadGrid,
) -> Result<f64, RefError> {
    let mut acc = 0.0;
    let mut err: Option<RefError> = None;
    quad.for_each(|p, w| {
        if err.is_some() {
            return;
        }
        match (a.interpolate(t, p[0], p[1]), b.interpolate(t, p[0], p[1])) {
            (Ok(va), Ok(vb)) => acc += w * (va - vb) * (va - vb),
            (Err(e), _) | (_, Err(e)) => err = Some(e),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(acc.sqrt()),
    }
}

/// Which moments a conservation trace carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceProblem {
    /// Mass ∬ f dx dv only.
    FokkerPlanck,
    /// Mass ∬ f dv, momentum ∬ v f dv, kinetic energy ½ ∬ |v|² f dv.
    Boltzmann,
}

/// Post-training conservation traces on a dense time grid.
#[derive(Debug, Clone)]
pub struct ConservationTraces {
    pub t: Vec<f64>,
    pub mass: Vec<f64>,
    pub momentum_x: Option<Vec<f64>>,
    pub momentum_y: Option<Vec<f64>>,
    pub energy: Option<Vec<f64>>,
}

/// Quadrature moments of the field at each time of `dense_t_grid`.
pub fn conservation_traces(
    field: &dyn JetField,
    problem: TraceProblem,
    dense_t_grid: &[f64],
    quad: &QuadGrid,
) -> Result<ConservationTraces, RefError> {
    assert_eq!(quad.dimension(), 2, "traces expect a 2-D quadrature");
    let n = dense_t_grid.len();
    let mut mass = Vec::with_capacity(n);
    let mut momentum_x = Vec::with_capacity(n);
    let mut momentum_y = Vec::with_capacity(n);
    let mut energy = Vec::with_capacity(n);
    for &t in dense_t_grid {
        let mut m = 0.0;
        let mut px = 0.0;
        let mut py = 0.0;
        let mut en = 0.0;
        let mut err: Option<RefError> = None;
        quad.for_each(|p, w| {
            if err.is_some() {
                return;
            }
            match field.value(&[t, p[0], p[1]]) {
                Ok(f) => {
                    m += w * f;
                    if problem == TraceProblem::Boltzmann {
                        px += w * f * p[0];
                        py += w * f * p[1];
                        en += 0.5 * w * f * (p[0] * p[0] + p[1] * p[1]);
                    }
                }
                Err(e) => err = Some(e.into()),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        mass.push(m);
        momentum_x.push(px);
        momentum_y.push(py);
        energy.push(en);
    }
    Ok(match problem {
        TraceProblem::FokkerPlanck => ConservationTraces {
            t: dense_t_grid.to_vec(),
            mass,
            momentum_x: None,
            momentum_y: None,
            energy: None,
        },
        TraceProblem::Boltzmann => ConservationTraces {
            t: dense_t_grid.to_vec(),
            mass,
            momentum_x: Some(momentum_x),
            momentum_y: Some(momentum_y),
            energy: Some(energy),
        },
    })
}
