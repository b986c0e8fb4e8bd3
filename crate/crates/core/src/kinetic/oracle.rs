//! Closed-form reference fields with exact jets.
//!
//! These stand in for a trained network wherever a test needs an exact
//! solution: the loss of an exact solution must sit at quadrature tolerance
//! and its conservation constraints must vanish.

use super::boltzmann::{bkw, bkw_dt};
use super::fokker_planck::FpConfig;
use crate::diffnet::{DerivRequest, DiffError, Jet, JetField};
use std::collections::BTreeMap;

/// Exact solution of the spatially uniform Fokker--Planck test: a centered
/// Gaussian whose variance relaxes as σ²(t) = q/p + (σ₀² − q/p)·e^{−2pt}
/// (the Ornstein--Uhlenbeck law), scaled to match the truncated-domain
/// normalization of f₀ = exp(−v²)/Z₁.
///
/// Inputs are ordered (t, x, v); the field is constant in x.
#[derive(Debug, Clone)]
pub struct FpUniformExact {
    pub q: f64,
    pub p: f64,
    /// Overall scale: √π / Z₁ for the truncated normalizer Z₁.
    pub amplitude: f64,
    /// Initial variance; 1/2 for f₀ ∝ exp(−v²).
    pub sigma0_sq: f64,
}

impl FpUniformExact {
    pub fn for_test1(cfg: &FpConfig) -> Self {
        FpUniformExact {
            q: cfg.q,
            p: cfg.p,
            amplitude: std::f64::consts::PI.sqrt() / cfg.initial_normalizer(),
            sigma0_sq: 0.5,
        }
    }

    fn sigma_sq(&self, t: f64) -> f64 {
        let eq = self.q / self.p;
        eq + (self.sigma0_sq - eq) * (-2.0 * self.p * t).exp()
    }

    /// d(σ²)/dt = 2(q − pσ²).
    fn sigma_sq_dot(&self, t: f64) -> f64 {
        2.0 * (self.q - self.p * self.sigma_sq(t))
    }

    pub fn eval(&self, t: f64, v: f64) -> f64 {
        let s2 = self.sigma_sq(t);
        self.amplitude / (2.0 * std::f64::consts::PI * s2).sqrt() * (-v * v / (2.0 * s2)).exp()
    }
}

impl JetField for FpUniformExact {
    fn jet(&self, x: &[f64], req: &DerivRequest) -> Result<Jet, DiffError> {
        if x.len() != 3 {
            return Err(DiffError::InvalidInput(
                "FpUniformExact expects (t, x, v)".into(),
            ));
        }
        req.check(3)?;
        let (t, v) = (x[0], x[2]);
        let s2 = self.sigma_sq(t);
        let f = self.eval(t, v);
        let f_v = -v / s2 * f;
        let f_vv = (v * v / (s2 * s2) - 1.0 / s2) * f;
        // ∂f/∂σ² = f·(v²/(2σ⁴) − 1/(2σ²))
        let f_t = self.sigma_sq_dot(t) * f * (v * v / (2.0 * s2 * s2) - 0.5 / s2);

        let mut d1 = BTreeMap::new();
        for &i in req.first_order() {
            d1.insert(
                i,
                match i {
                    0 => f_t,
                    1 => 0.0,
                    _ => f_v,
                },
            );
        }
        let mut d2 = BTreeMap::new();
        for &pair in req.second_order() {
            d2.insert(
                pair,
                match pair.0 {
                    2 => f_vv,
                    _ => {
                        return Err(DiffError::UnsupportedRequest(format!(
                            "FpUniformExact provides only ∂_vv, requested {pair:?}"
                        )))
                    }
                },
            );
        }
        Ok(Jet { value: f, d1, d2 })
    }
}

/// The BKW solution as a jet field over (t, vx, vy); supplies the value and
/// the exact time derivative (what the conservation constraints consume).
#[derive(Debug, Clone, Copy, Default)]
pub struct BkwExact;

impl JetField for BkwExact {
    fn jet(&self, x: &[f64], req: &DerivRequest) -> Result<Jet, DiffError> {
        if x.len() != 3 {
            return Err(DiffError::InvalidInput("BkwExact expects (t, vx, vy)".into()));
        }
        req.check(3)?;
        let (t, vx, vy) = (x[0], x[1], x[2]);
        let mut d1 = BTreeMap::new();
        for &i in req.first_order() {
            if i == 0 {
                d1.insert(0, bkw_dt(t, vx, vy));
            } else {
                return Err(DiffError::UnsupportedRequest(
                    "BkwExact provides only the time derivative".into(),
                ));
            }
        }
        if !req.second_order().is_empty() {
            return Err(DiffError::UnsupportedRequest(
                "BkwExact provides no second derivatives".into(),
            ));
        }
        Ok(Jet {
            value: bkw(t, vx, vy),
            d1,
            d2: BTreeMap::new(),
        })
    }
}

/// A stationary spatially uniform Maxwellian as a full jet field; an exact
/// solution of the Fokker--Planck problem whenever it matches the initial
/// condition (p = 2q makes it coincide with the test-1 data).
#[derive(Debug, Clone)]
pub struct FpEquilibrium {
    pub q: f64,
    pub p: f64,
    pub amplitude: f64,
}

impl FpEquilibrium {
    pub fn matching_test1(cfg: &FpConfig) -> Self {
        FpEquilibrium {
            q: cfg.q,
            p: cfg.p,
            amplitude: 1.0 / cfg.initial_normalizer(),
        }
    }

    pub fn eval(&self, v: f64) -> f64 {
        self.amplitude * (-self.p * v * v / (2.0 * self.q)).exp()
    }
}

impl JetField for FpEquilibrium {
    fn jet(&self, x: &[f64], req: &DerivRequest) -> Result<Jet, DiffError> {
        if x.len() != 3 {
            return Err(DiffError::InvalidInput(
                "FpEquilibrium expects (t, x, v)".into(),
            ));
        }
        req.check(3)?;
        let v = x[2];
        let a = self.p / (2.0 * self.q);
        let f = self.eval(v);
        let f_v = -2.0 * a * v * f;
        let f_vv = (4.0 * a * a * v * v - 2.0 * a) * f;
        let mut d1 = BTreeMap::new();
        for &i in req.first_order() {
            d1.insert(i, if i == 2 { f_v } else { 0.0 });
        }
        let mut d2 = BTreeMap::new();
        for &pair in req.second_order() {
            d2.insert(pair, if pair.0 == 2 { f_vv } else { 0.0 });
        }
        Ok(Jet { value: f, d1, d2 })
    }
}
