//! Finite-difference oracle for the kinetic Fokker--Planck tests.
//!
//! Strang splitting per step: a half step of free transport by first-order
//! upwind with periodic x, a full step of the velocity operator, and a
//! second transport half step. The velocity operator ∂_v(q ∂_v f + p v f)
//! is discretized in flux form on cell faces with equilibrium-weighted
//! coefficients
//!
//!   F_{k+1/2} = (q/dv)·(e^{+p·dv·v_{k+1/2}/(2q)} f_{k+1}
//!                     − e^{−p·dv·v_{k+1/2}/(2q)} f_k),
//!
//! a central flux-form discretization (second-order consistent with
//! q ∂_v f + p v f) whose discrete Maxwellian e^{−p v²/(2q)} is an exact
//! stationary state. No-flux faces at v = ±V make the discrete mass an
//! invariant up to roundoff; all update coefficients stay nonnegative under
//! the time-step bound, so nonnegative data stays nonnegative.

use super::RefError;
use crate::kinetic::{fp_initial, FpConfig};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Dense space-velocity-time solution grid. Cells are centered:
/// x_j = (j+½)dx on [0,1] (periodic), v_k = −V+(k+½)dv. Time level n holds
/// the solution at t = n·dt; there are `n_t` steps and `n_t + 1` levels.
#[derive(Debug, Clone)]
pub struct FdGrid {
    pub cfg: FpConfig,
    pub n_x: usize,
    pub n_v: usize,
    pub n_t: usize,
    pub dx: f64,
    pub dv: f64,
    pub dt: f64,
    /// (n_t + 1) × n_x × n_v, time-major then x-major.
    pub values: Vec<f64>,
}

impl FdGrid {
    pub fn level(&self, n: usize) -> &[f64] {
        let sz = self.n_x * self.n_v;
        &self.values[n * sz..(n + 1) * sz]
    }

    pub fn x_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dx
    }

    pub fn v_center(&self, k: usize) -> f64 {
        -self.cfg.v_max + (k as f64 + 0.5) * self.dv
    }

    /// Discrete mass dx·dv·Σ f at a time level.
    pub fn mass_at(&self, n: usize) -> f64 {
        self.level(n).iter().sum::<f64>() * self.dx * self.dv
    }

    /// Nearest stored time level for an evaluation time.
    pub fn nearest_level(&self, t: f64) -> Result<usize, RefError> {
        let t_final = self.n_t as f64 * self.dt;
        if t < -1e-12 || t > t_final + 1e-12 {
            return Err(RefError::InvalidInput(format!(
                "evaluation time {t} outside stored range [0, {t_final}]"
            )));
        }
        Ok(((t / self.dt).round() as usize).min(self.n_t))
    }

    /// Bilinear interpolation in (x, v) at the nearest stored time: periodic
    /// in x, clamped at the velocity walls.
    pub fn interpolate(&self, t: f64, x: f64, v: f64) -> Result<f64, RefError> {
        let level = self.level(self.nearest_level(t)?);
        let nx = self.n_x;
        let nv = self.n_v;

        let xc = x / self.dx - 0.5;
        let j0f = xc.floor();
        let fx = xc - j0f;
        let j0 = (j0f as i64).rem_euclid(nx as i64) as usize;
        let j1 = (j0 + 1) % nx;

        let vc = ((v + self.cfg.v_max) / self.dv - 0.5).clamp(0.0, (nv - 1) as f64);
        let k0 = (vc.floor() as usize).min(nv - 2);
        let fv = (vc - k0 as f64).clamp(0.0, 1.0);
        let k1 = k0 + 1;

        let g = |j: usize, k: usize| level[j * nv + k];
        Ok(g(j0, k0) * (1.0 - fx) * (1.0 - fv)
            + g(j1, k0) * fx * (1.0 - fv)
            + g(j0, k1) * (1.0 - fx) * fv
            + g(j1, k1) * fx * fv)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Largest stable time step for the scheme at a given resolution. The
/// transport bound is dx/V; the velocity bound is dv²/(2q) corrected by the
/// growth of the equilibrium face weights, cosh(p·dv·V/(2q)).
pub fn stable_dt(cfg: &FpConfig, n_x: usize, n_v: usize) -> f64 {
    let dx = 1.0 / n_x as f64;
    let dv = 2.0 * cfg.v_max / n_v as f64;
    let face_growth = (cfg.p * dv * cfg.v_max / (2.0 * cfg.q)).cosh();
    0.9 * (dx / cfg.v_max).min(dv * dv / (2.0 * cfg.q * face_growth))
}

/// Step count that satisfies both the stability bound and a target
/// time-snapping error (half the stored step) for evaluation times.
pub fn suggested_steps(cfg: &FpConfig, n_x: usize, n_v: usize, snap_tol: f64) -> usize {
    let n_stab = (cfg.t_final / stable_dt(cfg, n_x, n_v)).ceil() as usize;
    let n_snap = (cfg.t_final / (2.0 * snap_tol)).ceil() as usize;
    n_stab.max(n_snap).max(1)
}

/// Solve the initial-boundary value problem with the configured test initial
/// condition.
pub fn fd_solve_fp(cfg: &FpConfig, n_x: usize, n_v: usize, n_t: usize) -> Result<FdGrid, RefError> {
    let initial =
        |x: f64, v: f64| fp_initial(x, v, cfg).expect("cell centers lie inside the domain");
    fd_solve_fp_with_initial(cfg, n_x, n_v, n_t, initial)
}

/// Solve with caller-provided initial data (stationarity and convergence
/// checks inject their own).
pub fn fd_solve_fp_with_initial(
    cfg: &FpConfig,
    n_x: usize,
    n_v: usize,
    n_t: usize,
    initial: impl Fn(f64, f64) -> f64,
) -> Result<FdGrid, RefError> {
    cfg.validate()
        .map_err(|e| RefError::InvalidConfig(e.to_string()))?;
    if n_x < 32 || n_v < 64 {
        return Err(RefError::InvalidConfig(format!(
            "resolution {n_x}×{n_v} below the supported minimum 32×64"
        )));
    }
    if n_t == 0 {
        return Err(RefError::InvalidConfig("need at least one time step".into()));
    }
    let dx = 1.0 / n_x as f64;
    let dv = 2.0 * cfg.v_max / n_v as f64;
    let dt = cfg.t_final / n_t as f64;
    let dt_max = stable_dt(cfg, n_x, n_v);
    if dt > dt_max {
        return Err(RefError::InvalidConfig(format!(
            "dt = {dt:.3e} violates the stability bound {dt_max:.3e}; use at least {} steps",
            (cfg.t_final / dt_max).ceil() as usize
        )));
    }

    let mut grid = FdGrid {
        cfg: *cfg,
        n_x,
        n_v,
        n_t,
        dx,
        dv,
        dt,
        values: vec![0.0; (n_t + 1) * n_x * n_v],
    };
    let sz = n_x * n_v;
    for j in 0..n_x {
        for k in 0..n_v {
            grid.values[j * n_v + k] = initial(grid.x_center(j), grid.v_center(k));
        }
    }

    // Face coefficients of the velocity flux (interior faces only).
    let alpha = cfg.q * dt / (dv * dv);
    let mut up = vec![0.0; n_v - 1]; // multiplies f_{k+1}
    let mut dn = vec![0.0; n_v - 1]; // multiplies f_k
    for (m, (u, d)) in up.iter_mut().zip(dn.iter_mut()).enumerate() {
        let v_face = -cfg.v_max + (m as f64 + 1.0) * dv;
        let e = cfg.p * dv * v_face / (2.0 * cfg.q);
        *u = e.exp();
        *d = (-e).exp();
    }

    let mut f = grid.values[..sz].to_vec();
    let mut work = vec![0.0; sz];
    let nu = dt / (2.0 * dx); // transport half step
    for n in 0..n_t {
        transport_half(&mut f, &mut work, &grid, nu);
        velocity_step(&mut f, &mut work, n_x, n_v, alpha, &up, &dn);
        transport_half(&mut f, &mut work, &grid, nu);
        grid.values[(n + 1) * sz..(n + 2) * sz].copy_from_slice(&f);
    }

    let min = grid.min_value();
    if min < -1e-12 {
        return Err(RefError::Format(format!(
            "solver produced negative values down to {min:.3e}"
        )));
    }
    Ok(grid)
}

/// Upwind transport f_t + v f_x = 0 over a half step, periodic in x.
fn transport_half(f: &mut [f64], work: &mut [f64], grid: &FdGrid, nu: f64) {
    let (n_x, n_v) = (grid.n_x, grid.n_v);
    for k in 0..n_v {
        let v = grid.v_center(k);
        let c = nu * v;
        if v >= 0.0 {
            for j in 0..n_x {
                let jm = if j == 0 { n_x - 1 } else { j - 1 };
                work[j * n_v + k] = (1.0 - c) * f[j * n_v + k] + c * f[jm * n_v + k];
            }
        } else {
            for j in 0..n_x {
                let jp = if j + 1 == n_x { 0 } else { j + 1 };
                work[j * n_v + k] = (1.0 + c) * f[j * n_v + k] - c * f[jp * n_v + k];
            }
        }
    }
    f.copy_from_slice(work);
}

/// Explicit flux-form step of the velocity operator; zero flux at v = ±V.
fn velocity_step(
    f: &mut [f64],
    work: &mut [f64],
    n_x: usize,
    n_v: usize,
    alpha: f64,
    up: &[f64],
    dn: &[f64],
) {
    for j in 0..n_x {
        let row = &f[j * n_v..(j + 1) * n_v];
        let out = &mut work[j * n_v..(j + 1) * n_v];
        let mut flux_below = 0.0;
        for k in 0..n_v {
            let flux_above = if k + 1 < n_v {
                alpha * (up[k] * row[k + 1] - dn[k] * row[k])
            } else {
                0.0
            };
            out[k] = row[k] + (flux_above - flux_below);
            flux_below = flux_above;
        }
    }
    f.copy_from_slice(work);
}

pub const FDGRID_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize, PartialEq)]
struct FdHeader {
    cfg: FpConfig,
    n_x: usize,
    n_v: usize,
    n_t: usize,
    format_version: u32,
}

/// Cache container: little-endian u32 header length, JSON header
/// (configuration and resolutions), then the values as little-endian f64.
pub fn write_fd_grid(grid: &FdGrid, path: &Path) -> Result<(), RefError> {
    let header = FdHeader {
        cfg: grid.cfg,
        n_x: grid.n_x,
        n_v: grid.n_v,
        n_t: grid.n_t,
        format_version: FDGRID_FORMAT_VERSION,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| RefError::Format(e.to_string()))?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    file.write_all(&header_bytes)?;
    let mut buf = Vec::with_capacity(grid.values.len() * 8);
    for v in &grid.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&buf)?;
    Ok(())
}

/// Read a cached grid; `None` when the stored header does not match the
/// requested configuration (a cache miss, not an error).
pub fn read_fd_grid(
    path: &Path,
    cfg: &FpConfig,
    n_x: usize,
    n_v: usize,
    n_t: usize,
) -> Result<Option<FdGrid>, RefError> {
    if !path.exists() {
        return Ok(None);
    }
    let mut file = std::fs::File::open(path)?;
    let mut len_bytes = [0u8; 4];
    if file.read_exact(&mut len_bytes).is_err() {
        return Ok(None);
    }
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    if header_len == 0 || header_len > 1 << 20 {
        return Ok(None);
    }
    let mut header_bytes = vec![0u8; header_len];
    if file.read_exact(&mut header_bytes).is_err() {
        return Ok(None);
    }
    let Ok(header) = serde_json::from_slice::<FdHeader>(&header_bytes) else {
        return Ok(None);
    };
    let expected = FdHeader {
        cfg: *cfg,
        n_x,
        n_v,
        n_t,
        format_version: FDGRID_FORMAT_VERSION,
    };
    if header != expected {
        return Ok(None);
    }
    let mut payload = Vec::new();
    file.read_to_end(&mut payload)?;
    let n_values = (n_t + 1) * n_x * n_v;
    if payload.len() != n_values * 8 {
        return Ok(None);
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let dx = 1.0 / n_x as f64;
    let dv = 2.0 * cfg.v_max / n_v as f64;
    let dt = cfg.t_final / n_t as f64;
    Ok(Some(FdGrid {
        cfg: *cfg,
        n_x,
        n_v,
        n_t,
        dx,
        dv,
        dt,
        values,
    }))
}
