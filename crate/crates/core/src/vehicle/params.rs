use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One point of a torque curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorquePoint {
    pub rpm: f64,
    pub nm: f64,
}

/// Piecewise-linear torque curve, clamped at its end points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TorqueCurve(pub Vec<TorquePoint>);

impl TorqueCurve {
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        TorqueCurve(pairs.iter().map(|&(rpm, nm)| TorquePoint { rpm, nm }).collect())
    }

    pub fn rpm_range(&self) -> (f64, f64) {
        (self.0[0].rpm, self.0[self.0.len() - 1].rpm)
    }

    pub fn max_torque(&self) -> f64 {
        self.0.iter().map(|p| p.nm).fold(0.0, f64::max)
    }

    /// Torque at `rpm` and whether the query was clamped to the curve domain.
    pub fn torque(&self, rpm: f64) -> (f64, bool) {
        let pts = &self.0;
        let (lo, hi) = self.rpm_range();
        if rpm <= lo {
            return (pts[0].nm, rpm < lo);
        }
        if rpm >= hi {
            return (pts[pts.len() - 1].nm, rpm > hi);
        }
        let i = pts.partition_point(|p| p.rpm <= rpm);
        let (a, b) = (pts[i - 1], pts[i]);
        let w = (rpm - a.rpm) / (b.rpm - a.rpm);
        (a.nm + w * (b.nm - a.nm), false)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.0.len() < 2 {
            return Err(Error::invalid(format!("{name} needs at least two points")));
        }
        if self.0.windows(2).any(|w| w[1].rpm <= w[0].rpm) {
            return Err(Error::invalid(format!("{name} rpm values must increase")));
        }
        if self.0.iter().any(|p| p.nm < 0.0 || !p.nm.is_finite()) {
            return Err(Error::invalid(format!("{name} torques must be nonnegative")));
        }
        Ok(())
    }
}

/// Ego-vehicle parameters for the longitudinal model.
///
/// The defaults describe a synthetic LMP1-like car; none of them are
/// measured values of a real vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// Total mass including fuel and driver (kg).
    pub mass: f64,
    pub g: f64,
    /// Centre-of-mass height (m).
    pub cog_height: f64,
    /// Height at which the drag force acts (m).
    pub drag_height: f64,
    /// Half of the axle distance (m).
    pub half_wheelbase: f64,
    pub rho: f64,
    pub cx: f64,
    pub cz: f64,
    /// Aerodynamic reference surface (m²).
    pub area: f64,
    pub c_res: f64,
    pub mu: f64,
    pub comb_torque_curve: TorqueCurve,
    /// Overall wheel-to-engine ratio per gear.
    pub gear_ratios: Vec<f64>,
    pub el_torque_curve: TorqueCurve,
    pub tau_el: f64,
    pub eta_el_traction: f64,
    pub eta_el_rec: f64,
    /// Longitudinal force while sailing (N, ≤ 0).
    pub f_sail: f64,
    /// Largest braking force credited to regeneration (N, ≤ 0).
    pub f_dec_max: f64,
    pub wheel_radius: f64,
    /// Fuel flow at full thrust (kg/s).
    pub p_max_per_s: f64,
    pub coeff_engine: f64,
    pub coeff_adherence: f64,
    pub coeff_downforce: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            mass: 950.0,
            g: 9.81,
            cog_height: 0.30,
            drag_height: 0.35,
            half_wheelbase: 1.5,
            rho: 1.2,
            cx: 0.85,
            cz: 3.2,
            area: 1.0,
            c_res: 0.012,
            mu: 1.7,
            comb_torque_curve: TorqueCurve::from_pairs(&[
                (3000.0, 300.0),
                (5000.0, 420.0),
                (6500.0, 440.0),
                (8000.0, 400.0),
                (9000.0, 350.0),
            ]),
            gear_ratios: vec![12.0, 9.0, 7.0, 5.6, 4.6, 3.9, 3.4],
            el_torque_curve: TorqueCurve::from_pairs(&[
                (0.0, 250.0),
                (6000.0, 250.0),
                (8000.0, 238.7),
                (10000.0, 191.0),
                (12000.0, 159.2),
                (16000.0, 119.4),
            ]),
            tau_el: 5.0,
            eta_el_traction: 0.92,
            eta_el_rec: 0.85,
            f_sail: -1500.0,
            f_dec_max: -4000.0,
            wheel_radius: 0.33,
            p_max_per_s: 0.0223,
            coeff_engine: 1.0,
            coeff_adherence: 1.0,
            coeff_downforce: 1.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("g", self.g),
            ("cog_height", self.cog_height),
            ("half_wheelbase", self.half_wheelbase),
            ("rho", self.rho),
            ("area", self.area),
            ("mu", self.mu),
            ("wheel_radius", self.wheel_radius),
            ("tau_el", self.tau_el),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("eta_el_traction", self.eta_el_traction),
            ("eta_el_rec", self.eta_el_rec),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1]")));
            }
        }
        if self.f_sail > 0.0 || self.f_dec_max > 0.0 {
            return Err(Error::invalid("f_sail and f_dec_max must be <= 0"));
        }
        if self.gear_ratios.is_empty() || self.gear_ratios.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::invalid("gear ratios must be positive"));
        }
        self.comb_torque_curve.validate("comb_torque_curve")?;
        self.el_torque_curve.validate("el_torque_curve")?;
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let p: VehicleParams = toml::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Largest front thrust the electric motor can deliver at any speed (N).
    pub fn max_el_thrust(&self) -> f64 {
        self.el_torque_curve.max_torque() * self.tau_el / self.wheel_radius
    }

    /// Largest rear thrust the combustion engine can deliver at any speed (N).
    pub fn max_comb_thrust(&self) -> f64 {
        let top = self.gear_ratios.iter().cloned().fold(0.0, f64::max);
        self.comb_torque_curve.max_torque() * top * self.coeff_engine / self.wheel_radius
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let p = VehicleParams::default();
        p.validate().unwrap();
        let s = p.to_toml_string().unwrap();
        assert_eq!(VehicleParams::from_toml_str(&s).unwrap(), p);
    }

    #[test]
    fn curve_interpolates_and_clamps() {
        let c = TorqueCurve::from_pairs(&[(1000.0, 100.0), (2000.0, 300.0)]);
        assert_eq!(c.torque(1500.0), (200.0, false));
        assert_eq!(c.torque(500.0), (100.0, true));
        assert_eq!(c.torque(2500.0), (300.0, true));
        assert_eq!(c.torque(2000.0), (300.0, false));
    }

    #[test]
    fn bad_efficiency_is_rejected() {
        let p = VehicleParams {
            eta_el_rec: 1.2,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
