//! Space-homogeneous Boltzmann equation for 2-D Maxwellian molecules:
//!
//!   ∂_t f = (1/ε) Q(f, f),   Q(f,f)(v) = ∫∫ σ [f(v′)f(v′*) − f(v)f(v*)] dw dv*
//!
//! with post-collision velocities v′ = ½(v+v* + |v−v*|w) and
//! v′* = ½(v+v* − |v−v*|w), w = (cos φ, sin φ). The v* integral runs over
//! the truncated box [−V,V]² by tensor Gauss--Legendre; the angular integral
//! is a uniform rule on [0, 2π), spectrally accurate for periodic integrands.
//!
//! The exact BKW solution drives every validation: mass and kinetic energy
//! equal to one, vanishing momentum, and ∂_t f equal to the collision
//! integral itself.

use super::KineticError;
use crate::collocation::gauss_legendre;
use serde::{Deserialize, Serialize};

/// Maxwell-molecule kernel constant. The angular rule carries the full 2π
/// measure of the circle, so the kernel normalizes it to unit mass; this is
/// the normalization under which the BKW relaxation rate exp(−t/8) solves
/// the equation exactly.
pub const MAXWELL_KERNEL_2D: f64 = 1.0 / (2.0 * std::f64::consts::PI);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoltzmannConfig {
    /// Velocity truncation half-width.
    pub v_max: f64,
    /// Final time.
    pub t_final: f64,
    /// Knudsen number ε > 0.
    pub eps: f64,
    /// Gauss--Legendre nodes per velocity axis of the v* integral.
    pub n_vstar: usize,
    /// Uniform angular nodes on [0, 2π).
    pub n_angle: usize,
}

impl BoltzmannConfig {
    pub fn bkw() -> Self {
        BoltzmannConfig {
            v_max: 5.0,
            t_final: 3.0,
            eps: 1.0,
            n_vstar: 32,
            n_angle: 16,
        }
    }

    pub fn validate(&self) -> Result<(), KineticError> {
        if !(self.eps > 0.0) {
            return Err(KineticError::InvalidConfig(
                "Knudsen number eps must be positive".into(),
            ));
        }
        if self.n_vstar < 4 {
            return Err(KineticError::InvalidConfig(
                "n_vstar must be at least 4".into(),
            ));
        }
        if self.n_angle < 4 || self.n_angle % 2 != 0 {
            return Err(KineticError::InvalidConfig(
                "n_angle must be even and at least 4".into(),
            ));
        }
        if !(self.v_max > 0.0) || !(self.t_final > 0.0) {
            return Err(KineticError::InvalidConfig(
                "v_max and t_final must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Quadrature data for the collision integral: a Gauss--Legendre tensor grid
/// over v* ∈ [−V,V]² and a uniform angular grid with total weight 2π.
#[derive(Debug, Clone)]
pub struct CollisionQuad {
    pub vstar_nodes: Vec<f64>,
    pub vstar_weights: Vec<f64>,
    pub angle_nodes: Vec<f64>,
    pub angle_weights: Vec<f64>,
    pub v_max: f64,
}

impl CollisionQuad {
    pub fn new(cfg: &BoltzmannConfig) -> Result<Self, KineticError> {
        cfg.validate()?;
        let (vstar_nodes, vstar_weights) = gauss_legendre(cfg.n_vstar, -cfg.v_max, cfg.v_max);
        let n = cfg.n_angle;
        let angle_nodes: Vec<f64> = (0..n)
            .map(|m| 2.0 * std::f64::consts::PI * m as f64 / n as f64)
            .collect();
        let angle_weights = vec![2.0 * std::f64::consts::PI / n as f64; n];
        Ok(CollisionQuad {
            vstar_nodes,
            vstar_weights,
            angle_nodes,
            angle_weights,
            v_max: cfg.v_max,
        })
    }

    /// Number of (v*, angle) quadrature terms per collision evaluation.
    pub fn terms(&self) -> usize {
        self.vstar_nodes.len() * self.vstar_nodes.len() * self.angle_nodes.len()
    }
}

/// Initial condition f₀(v) = |v|²/π · exp(−|v|²): unit mass and unit kinetic
/// energy.
pub fn boltzmann_f0(vx: f64, vy: f64) -> f64 {
    let r2 = vx * vx + vy * vy;
    r2 / std::f64::consts::PI * (-r2).exp()
}

/// BKW exact solution with s = 1 − exp(−t/8)/2:
///   f(t,v) = 1/(2πs²) · exp(−|v|²/(2s)) · (2s − 1 + (1−s)/(2s)·|v|²).
pub fn bkw(t: f64, vx: f64, vy: f64) -> f64 {
    let s = 1.0 - (-t / 8.0).exp() / 2.0;
    let r2 = vx * vx + vy * vy;
    1.0 / (2.0 * std::f64::consts::PI * s * s)
        * (-r2 / (2.0 * s)).exp()
        * (2.0 * s - 1.0 + (1.0 - s) / (2.0 * s) * r2)
}

/// Closed-form ∂_t of the BKW solution. With s′ = (1−s)/8,
///   ∂_t f = exp(−r²/2s)·(1−s)²/(16π)·[2/s³ − 2r²/s⁴ + r⁴/(4s⁵)].
pub fn bkw_dt(t: f64, vx: f64, vy: f64) -> f64 {
    let s = 1.0 - (-t / 8.0).exp() / 2.0;
    let r2 = vx * vx + vy * vy;
    let e = (-r2 / (2.0 * s)).exp();
    let one_minus_s = 1.0 - s;
    e * one_minus_s * one_minus_s / (16.0 * std::f64::consts::PI)
        * (2.0 / s.powi(3) - 2.0 * r2 / s.powi(4) + r2 * r2 / (4.0 * s.powi(5)))
}

/// Collision operator by quadrature at one velocity:
///   Q(f,f)(v) = Σ_{v*} Σ_φ w_{v*} w_φ σ [f(v′)f(v′*) − f(v)f(v*)].
///
/// Post-collision velocities can leave the truncation box; `f` is simply
/// evaluated there. Summation is ordered (v* lexicographic, angle fastest)
/// for determinism.
pub fn collision_q<F: Fn(f64, f64) -> f64>(f: &F, vx: f64, vy: f64, quad: &CollisionQuad) -> f64 {
    let fv = f(vx, vy);
    let mut total = 0.0;
    for (ix, &sx) in quad.vstar_nodes.iter().enumerate() {
        let wx = quad.vstar_weights[ix];
        for (iy, &sy) in quad.vstar_nodes.iter().enumerate() {
            let w_star = wx * quad.vstar_weights[iy];
            let fstar = f(sx, sy);
            let cx = vx + sx;
            let cy = vy + sy;
            let g = ((vx - sx) * (vx - sx) + (vy - sy) * (vy - sy)).sqrt();
            for (ia, &phi) in quad.angle_nodes.iter().enumerate() {
                let (sin_phi, cos_phi) = phi.sin_cos();
                let gx = g * cos_phi;
                let gy = g * sin_phi;
                let f_post = f(0.5 * (cx + gx), 0.5 * (cy + gy));
                let f_post_star = f(0.5 * (cx - gx), 0.5 * (cy - gy));
                let w = w_star * quad.angle_weights[ia] * MAXWELL_KERNEL_2D;
                total += w * (f_post * f_post_star - fv * fstar);
            }
        }
    }
    total
}

/// Residual of the homogeneous Boltzmann equation: ∂_t f − Q/ε.
pub fn boltzmann_residual(jet_t: f64, q_val: f64, cfg: &BoltzmannConfig) -> f64 {
    jet_t - q_val / cfg.eps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collocation::gauss_legendre;

    fn quad(n_vstar: usize, n_angle: usize) -> CollisionQuad {
        CollisionQuad::new(&BoltzmannConfig {
            n_vstar,
            n_angle,
            ..BoltzmannConfig::bkw()
        })
        .unwrap()
    }

    #[test]
    fn quad_weights_have_the_right_measures() {
        let q = quad(16, 8);
        let sv: f64 = q.vstar_weights.iter().sum();
        assert!((sv - 10.0).abs() < 1e-12);
        let sa: f64 = q.angle_weights.iter().sum();
        assert!((sa - 2.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn f0_basics() {
        assert_eq!(boltzmann_f0(0.0, 0.0), 0.0);
        // unit mass and unit kinetic energy, odd first moments
        let (n, w) = gauss_legendre(64, -5.0, 5.0);
        let mut mass = 0.0;
        let mut energy = 0.0;
        let mut momx = 0.0;
        for (vx, wx) in n.iter().zip(&w) {
            for (vy, wy) in n.iter().zip(&w) {
                let f = boltzmann_f0(*vx, *vy);
                mass += wx * wy * f;
                energy += 0.5 * wx * wy * f * (vx * vx + vy * vy);
                momx += wx * wy * f * vx;
            }
        }
        assert!((mass - 1.0).abs() < 1e-8, "mass {mass}");
        assert!((energy - 1.0).abs() < 1e-8, "energy {energy}");
        assert!(momx.abs() < 1e-14);
    }

    #[test]
    fn bkw_at_time_zero_equals_f0() {
        // s(0) = 1/2 makes the Gaussian prefactor collapse onto f₀.
        let mut state = 0x12345u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 10.0 - 5.0
        };
        for _ in 0..100 {
            let (vx, vy) = (rnd(), rnd());
            let a = bkw(0.0, vx, vy);
            let b = boltzmann_f0(vx, vy);
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0), "({vx},{vy}): {a} vs {b}");
        }
    }

    #[test]
    fn bkw_long_time_limit_is_the_maxwellian() {
        let t = 400.0;
        for (vx, vy) in [(0.0, 0.0), (1.0, 2.0), (-2.5, 0.5)] {
            let r2: f64 = vx * vx + vy * vy;
            let maxwell = 1.0 / (2.0 * std::f64::consts::PI) * (-r2 / 2.0).exp();
            assert!((bkw(t, vx, vy) - maxwell).abs() < 1e-12);
        }
    }

    #[test]
    fn bkw_mass_is_one_at_selected_times() {
        let (n, w) = gauss_legendre(64, -5.0, 5.0);
        for t in [0.0, 1.0, 3.0] {
            let mut mass = 0.0;
            for (vx, wx) in n.iter().zip(&w) {
                for (vy, wy) in n.iter().zip(&w) {
                    mass += wx * wy * bkw(t, *vx, *vy);
                }
            }
            assert!((mass - 1.0).abs() <= 1e-6, "t={t}: mass {mass}");
        }
    }

    #[test]
    fn bkw_is_nonnegative() {
        for i in 0..=50 {
            let t = 3.0 * i as f64 / 50.0;
            for j in 0..=40 {
                let vx = -5.0 + 10.0 * j as f64 / 40.0;
                for k in 0..=40 {
                    let vy = -5.0 + 10.0 * k as f64 / 40.0;
                    assert!(bkw(t, vx, vy) >= 0.0, "bkw({t},{vx},{vy}) negative");
                }
            }
        }
    }

    #[test]
    fn bkw_dt_matches_finite_difference_in_time() {
        let h = 1e-5;
        for t in [0.3, 1.0, 2.5] {
            for (vx, vy) in [(0.0, 0.0), (0.7, -1.2), (2.0, 2.0)] {
                let fd = (bkw(t + h, vx, vy) - bkw(t - h, vx, vy)) / (2.0 * h);
                let an = bkw_dt(t, vx, vy);
                assert!(
                    (an - fd).abs() <= 1e-9 * an.abs().max(fd.abs()).max(1e-3),
                    "t={t} v=({vx},{vy}): {an} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn maxwellian_is_a_fixed_point_of_the_collision_operator() {
        // |v′|² + |v′*|² = |v|² + |v*|² makes the integrand vanish pointwise.
        let q = quad(32, 16);
        let m = |vx: f64, vy: f64| {
            1.0 / (2.0 * std::f64::consts::PI) * (-(vx * vx + vy * vy) / 2.0).exp()
        };
        for (vx, vy) in [(0.0, 0.0), (1.0, -1.0), (3.0, 0.0), (-2.0, 2.0)] {
            let qv = collision_q(&m, vx, vy, &q);
            assert!(qv.abs() <= 1e-6, "Q(M,M)({vx},{vy}) = {qv}");
        }
    }

    #[test]
    fn zero_function_has_zero_collisions() {
        let q = quad(8, 4);
        let z = |_: f64, _: f64| 0.0;
        assert_eq!(collision_q(&z, 0.5, -0.5, &q), 0.0);
    }

    #[test]
    fn collision_operator_matches_bkw_time_derivative() {
        let q = quad(32, 16);
        let t = 1.0;
        let f = |vx: f64, vy: f64| bkw(t, vx, vy);
        let mut worst = 0.0f64;
        for i in 0..=6 {
            let vx = -3.0 + i as f64;
            for j in 0..=6 {
                let vy = -3.0 + j as f64;
                let d = (collision_q(&f, vx, vy, &q) - bkw_dt(t, vx, vy)).abs();
                worst = worst.max(d);
            }
        }
        assert!(worst <= 1e-3, "sup |Q − ∂_t bkw| = {worst}");
    }

    #[test]
    fn collision_commutes_with_rotation_for_radial_f() {
        let q = quad(32, 16);
        let f = |vx: f64, vy: f64| bkw(1.0, vx, vy);
        let r = 1.7;
        let q0 = collision_q(&f, r, 0.0, &q);
        for angle in [0.7, 1.9, 3.4] {
            let (s, c) = f64::sin_cos(angle);
            let qr = collision_q(&f, r * c, r * s, &q);
            assert!((q0 - qr).abs() <= 1e-6, "rotation defect {}", (q0 - qr).abs());
        }
    }

    #[test]
    fn residual_arithmetic() {
        let cfg = BoltzmannConfig { eps: 1.0, ..BoltzmannConfig::bkw() };
        assert_eq!(boltzmann_residual(0.5, 0.5, &cfg), 0.0);
        let cfg2 = BoltzmannConfig { eps: 0.5, ..BoltzmannConfig::bkw() };
        assert_eq!(boltzmann_residual(0.0, 0.5, &cfg2), -1.0);
    }

    #[test]
    fn config_validation() {
        assert!(BoltzmannConfig { eps: 0.0, ..BoltzmannConfig::bkw() }.validate().is_err());
        assert!(BoltzmannConfig { n_vstar: 2, ..BoltzmannConfig::bkw() }.validate().is_err());
        assert!(BoltzmannConfig { n_angle: 7, ..BoltzmannConfig::bkw() }.validate().is_err());
        assert!(BoltzmannConfig::bkw().validate().is_ok());
    }
}
