//! Kinetic Fokker--Planck problem data on [0,T] × [0,1] × [−V,V]:
//!
//!   ∂_t f + v ∂_x f = ∂_v (q ∂_v f + p v f)
//!
//! with a mirrored inflow boundary f(t,x,v) = f(t,1−x,v) on
//! Γ⁻ = {x=0, 0<v<V} ∪ {x=1, −V<v<0} and nonnegative normalized initial
//! data. The only conserved quantity is total mass.

use super::KineticError;
use crate::collocation::gauss_legendre;
use crate::diffnet::Jet;
use serde::{Deserialize, Serialize};

/// Which of the two test initial conditions to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FpInitial {
    /// f₀ = exp(−v²)/Z₁, spatially uniform.
    Test1,
    /// f₀ = (1 + cos 2πx)·exp(−v²)/Z₂, nonnegative and normalized.
    Test2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpConfig {
    /// Diffusion coefficient q > 0.
    pub q: f64,
    /// Friction coefficient p ≥ 0.
    pub p: f64,
    /// Velocity truncation half-width.
    pub v_max: f64,
    /// Final time.
    pub t_final: f64,
    pub initial: FpInitial,
}

impl FpConfig {
    pub fn test1() -> Self {
        FpConfig {
            q: 1.0,
            p: 1.0,
            v_max: 5.0,
            t_final: 1.0,
            initial: FpInitial::Test1,
        }
    }

    pub fn test2() -> Self {
        FpConfig {
            q: 0.1,
            p: 0.1,
            v_max: 5.0,
            t_final: 3.0,
            initial: FpInitial::Test2,
        }
    }

    pub fn validate(&self) -> Result<(), KineticError> {
        if !(self.q > 0.0) {
            return Err(KineticError::InvalidConfig(
                "diffusion coefficient q must be positive".into(),
            ));
        }
        if !(self.p >= 0.0) {
            return Err(KineticError::InvalidConfig(
                "friction coefficient p must be nonnegative".into(),
            ));
        }
        if !(self.v_max > 0.0) || !(self.t_final > 0.0) {
            return Err(KineticError::InvalidConfig(
                "v_max and t_final must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Normalizer of the initial condition, by 64-node Gauss--Legendre.
    pub fn initial_normalizer(&self) -> f64 {
        let (nodes, weights) = gauss_legendre(64, -self.v_max, self.v_max);
        let zv: f64 = nodes
            .iter()
            .zip(&weights)
            .map(|(v, w)| w * (-v * v).exp())
            .sum();
        match self.initial {
            FpInitial::Test1 => zv,
            FpInitial::Test2 => {
                // ∫₀¹ (1 + cos 2πx) dx · ∫ exp(−v²) dv, by the same rule.
                let (xn, xw) = gauss_legendre(64, 0.0, 1.0);
                let zx: f64 = xn
                    .iter()
                    .zip(&xw)
                    .map(|(x, w)| w * (1.0 + (2.0 * std::f64::consts::PI * x).cos()))
                    .sum();
                zx * zv
            }
        }
    }
}

/// Strong-form residual ∂_t f + v ∂_x f − q ∂_vv f − p f − p v ∂_v f with the
/// velocity divergence expanded by the product rule. Inputs t, x, v are jet
/// indices 0, 1, 2.
pub fn fp_residual(jet: &Jet, v: f64, cfg: &FpConfig) -> Result<f64, KineticError> {
    let ft = jet
        .d1
        .get(&0)
        .ok_or_else(|| KineticError::Contract("jet missing ∂_t".into()))?;
    let fx = jet
        .d1
        .get(&1)
        .ok_or_else(|| KineticError::Contract("jet missing ∂_x".into()))?;
    let fv = jet
        .d1
        .get(&2)
        .ok_or_else(|| KineticError::Contract("jet missing ∂_v".into()))?;
    let fvv = jet
        .d2
        .get(&(2, 2))
        .ok_or_else(|| KineticError::Contract("jet missing ∂_vv".into()))?;
    Ok(ft + v * fx - cfg.q * fvv - cfg.p * jet.value - cfg.p * v * fv)
}

/// Initial condition f₀(x, v), normalized so ∬ f₀ = 1.
pub fn fp_initial(x: f64, v: f64, cfg: &FpConfig) -> Result<f64, KineticError> {
    if !(0.0..=1.0).contains(&x) || v.abs() > cfg.v_max {
        return Err(KineticError::InvalidInput(format!(
            "initial point (x={x}, v={v}) outside [0,1]×[−{0},{0}]",
            cfg.v_max
        )));
    }
    let z = cfg.initial_normalizer();
    let g = (-v * v).exp();
    Ok(match cfg.initial {
        FpInitial::Test1 => g / z,
        FpInitial::Test2 => (1.0 + (2.0 * std::f64::consts::PI * x).cos()) * g / z,
    })
}

/// Mirror a point of the inflow boundary Γ⁻ to its image (t, 1−x, v); the
/// boundary loss penalizes the network differing between the two.
pub fn fp_boundary_pair(
    t: f64,
    x: f64,
    v: f64,
    v_max: f64,
) -> Result<(f64, f64, f64), KineticError> {
    let inflow = (x == 0.0 && v > 0.0 && v < v_max) || (x == 1.0 && v < 0.0 && v > -v_max);
    if !inflow {
        return Err(KineticError::InvalidInput(format!(
            "point (x={x}, v={v}) is not on the inflow boundary Γ⁻"
        )));
    }
    Ok((t, 1.0 - x, v))
}

/// Global Maxwellian equilibrium C·exp(−p v²/(2q)), normalized over [−V, V].
pub fn maxwellian(v: f64, cfg: &FpConfig) -> f64 {
    let (nodes, weights) = gauss_legendre(64, -cfg.v_max, cfg.v_max);
    let z: f64 = nodes
        .iter()
        .zip(&weights)
        .map(|(u, w)| w * (-cfg.p * u * u / (2.0 * cfg.q)).exp())
        .sum();
    (-cfg.p * v * v / (2.0 * cfg.q)).exp() / z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collocation::gauss_legendre;
    use crate::diffnet::{DerivRequest, Jet};
    use std::collections::BTreeMap;

    fn jet(value: f64, ft: f64, fx: f64, fv: f64, fvv: f64) -> Jet {
        let mut d1 = BTreeMap::new();
        d1.insert(0, ft);
        d1.insert(1, fx);
        d1.insert(2, fv);
        let mut d2 = BTreeMap::new();
        d2.insert((2, 2), fvv);
        Jet { value, d1, d2 }
    }

    #[test]
    fn maxwellian_jet_annihilates_the_velocity_operator() {
        // f = exp(−p v²/(2q)): q f_vv + p f + p v f_v = 0 identically, so the
        // residual of the t- and x-independent jet vanishes.
        let cfg = FpConfig {
            q: 0.8,
            p: 1.3,
            ..FpConfig::test1()
        };
        for v in [-4.0, -1.0, 0.0, 0.5, 3.2] {
            let a = cfg.p / (2.0 * cfg.q);
            let f = (-a * v * v).exp();
            let fv = -2.0 * a * v * f;
            let fvv = (-2.0 * a + 4.0 * a * a * v * v) * f;
            let r = fp_residual(&jet(f, 0.0, 0.0, fv, fvv), v, &cfg).unwrap();
            assert!(r.abs() <= 1e-12, "v={v}: residual {r}");
        }
    }

    #[test]
    fn residual_of_polynomial_matches_hand_derivation() {
        // f = t + x + v², q = p = 1: residual = 1 + v − 2 − (t+x+v²) − 2v².
        let cfg = FpConfig::test1();
        for (t, x, v) in [(0.2, 0.4, 1.5), (0.9, 0.1, -2.0), (0.0, 1.0, 0.0)] {
            let f = t + x + v * v;
            let r = fp_residual(&jet(f, 1.0, 1.0, 2.0 * v, 2.0), v, &cfg).unwrap();
            let expected = 1.0 + v - 2.0 - (t + x + v * v) - 2.0 * v * v;
            assert!((r - expected).abs() <= 1e-14);
        }
    }

    #[test]
    fn residual_of_zero_jet_is_zero() {
        let cfg = FpConfig::test1();
        let req = DerivRequest::new(&[0, 1, 2], &[(2, 2)]).unwrap();
        let z = Jet::zero(&req);
        assert_eq!(fp_residual(&z, 1.0, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn residual_requires_all_derivatives() {
        let cfg = FpConfig::test1();
        let req = DerivRequest::new(&[0], &[]).unwrap();
        let z = Jet::zero(&req);
        assert!(matches!(
            fp_residual(&z, 1.0, &cfg),
            Err(KineticError::Contract(_))
        ));
    }

    #[test]
    fn residual_is_linear_in_the_jet() {
        let cfg = FpConfig { q: 0.7, p: 0.3, ..FpConfig::test1() };
        let f = jet(0.5, 0.1, -0.2, 0.9, -1.1);
        let g = jet(-0.4, 0.7, 0.3, -0.5, 0.2);
        let (alpha, beta) = (1.7, -0.6);
        for v in [-3.0, 0.2, 4.0] {
            let combo = jet(
                alpha * f.value + beta * g.value,
                alpha * f.d1[&0] + beta * g.d1[&0],
                alpha * f.d1[&1] + beta * g.d1[&1],
                alpha * f.d1[&2] + beta * g.d1[&2],
                alpha * f.d2[&(2, 2)] + beta * g.d2[&(2, 2)],
            );
            let r = fp_residual(&combo, v, &cfg).unwrap();
            let rf = fp_residual(&f, v, &cfg).unwrap();
            let rg = fp_residual(&g, v, &cfg).unwrap();
            assert!((r - (alpha * rf + beta * rg)).abs() <= 1e-12);
        }
    }

    #[test]
    fn test1_initial_is_normalized() {
        let cfg = FpConfig::test1();
        let (xn, xw) = gauss_legendre(32, 0.0, 1.0);
        let (vn, vw) = gauss_legendre(64, -cfg.v_max, cfg.v_max);
        let mut mass = 0.0;
        for (x, wx) in xn.iter().zip(&xw) {
            for (v, wv) in vn.iter().zip(&vw) {
                mass += wx * wv * fp_initial(*x, *v, &cfg).unwrap();
            }
        }
        assert!((mass - 1.0).abs() <= 1e-12, "mass {mass}");
    }

    #[test]
    fn test1_normalizer_is_sqrt_pi_up_to_truncation() {
        let cfg = FpConfig::test1();
        let z = cfg.initial_normalizer();
        assert!((z - 1.772453850905516).abs() < 1e-11, "Z1 = {z}");
    }

    #[test]
    fn test2_vanishes_at_cosine_zero() {
        let cfg = FpConfig::test2();
        let f = fp_initial(0.5, 0.3, &cfg).unwrap();
        assert!(f.abs() <= 1e-15);
        // and is nonnegative everywhere
        for i in 0..=20 {
            let x = i as f64 / 20.0;
            for j in 0..=20 {
                let v = -5.0 + 10.0 * j as f64 / 20.0;
                assert!(fp_initial(x, v, &cfg).unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn test2_initial_is_normalized() {
        let cfg = FpConfig::test2();
        let (xn, xw) = gauss_legendre(64, 0.0, 1.0);
        let (vn, vw) = gauss_legendre(64, -cfg.v_max, cfg.v_max);
        let mut mass = 0.0;
        for (x, wx) in xn.iter().zip(&xw) {
            for (v, wv) in vn.iter().zip(&vw) {
                mass += wx * wv * fp_initial(*x, *v, &cfg).unwrap();
            }
        }
        assert!((mass - 1.0).abs() <= 1e-12, "mass {mass}");
    }

    #[test]
    fn initial_rejects_out_of_domain_points() {
        let cfg = FpConfig::test1();
        assert!(fp_initial(-0.1, 0.0, &cfg).is_err());
        assert!(fp_initial(0.5, 5.1, &cfg).is_err());
    }

    #[test]
    fn boundary_pair_mirrors_inflow_points() {
        assert_eq!(fp_boundary_pair(0.3, 0.0, 2.0, 5.0).unwrap(), (0.3, 1.0, 2.0));
        assert_eq!(fp_boundary_pair(0.7, 1.0, -2.0, 5.0).unwrap(), (0.7, 0.0, -2.0));
        // outflow at x = 0
        assert!(fp_boundary_pair(0.1, 0.0, -1.0, 5.0).is_err());
        assert!(fp_boundary_pair(0.1, 0.5, 1.0, 5.0).is_err());
    }

    #[test]
    fn maxwellian_shape_symmetry_and_mass() {
        let cfg = FpConfig::test1();
        // q = p = 1: proportional to exp(−v²/2).
        let ratio = maxwellian(1.0, &cfg) / maxwellian(0.0, &cfg);
        assert!((ratio - (-0.5f64).exp()).abs() < 1e-14);
        for v in [0.3, 1.7, 4.2] {
            assert_eq!(maxwellian(v, &cfg), maxwellian(-v, &cfg));
        }
        let (vn, vw) = gauss_legendre(64, -cfg.v_max, cfg.v_max);
        let mass: f64 = vn
            .iter()
            .zip(&vw)
            .map(|(v, w)| w * maxwellian(*v, &cfg))
            .sum();
        assert!((mass - 1.0).abs() <= 1e-12);
    }
}
