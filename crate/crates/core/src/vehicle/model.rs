//! Force model and the single-point integration step.

use serde::{Deserialize, Serialize};

use super::params::VehicleParams;
use super::track::TrackPoint;
use crate::{Error, Result};

const RPM_PER_RAD_S: f64 = 60.0 / (2.0 * std::f64::consts::PI);

/// Powertrain usage mode; exactly one is active per grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PowertrainMode {
    Both = 1,
    CombOnly = 2,
    Sailing = 3,
    Braking = 4,
}

impl PowertrainMode {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(Self::Both),
            2 => Some(Self::CombOnly),
            3 => Some(Self::Sailing),
            4 => Some(Self::Braking),
            _ => None,
        }
    }

    pub fn one_hot(self) -> [u8; 4] {
        let mut v = [0; 4];
        v[self as usize - 1] = 1;
        v
    }

    pub fn is_traction(self) -> bool {
        matches!(self, Self::Both | Self::CombOnly)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeroForces {
    pub drag: f64,
    pub down_front: f64,
    pub down_rear: f64,
}

/// Drag and per-axle downforce. The downforce coefficient correction applies
/// in high-speed curves only.
pub fn aero_forces(v: f64, params: &VehicleParams, high_speed_curve: bool) -> AeroForces {
    let q = params.rho * params.area * v * v;
    let cz = if high_speed_curve {
        params.cz * params.coeff_downforce
    } else {
        params.cz
    };
    let down = 0.25 * q * cz;
    AeroForces {
        drag: 0.5 * q * params.cx,
        down_front: down,
        down_rear: down,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxleLoads {
    pub front: f64,
    pub rear: f64,
}

impl AxleLoads {
    pub fn wheel_lift(&self) -> bool {
        self.front < 0.0 || self.rear < 0.0
    }

    /// Loads floored at zero, as used for friction and rolling resistance.
    pub fn clamped(&self) -> (f64, f64) {
        (self.front.max(0.0), self.rear.max(0.0))
    }
}

/// Moment balance for the vertical axle loads.
pub fn vertical_loads(
    v_dot: f64,
    slope: f64,
    aero: &AeroForces,
    params: &VehicleParams,
) -> AxleLoads {
    let two_l = 2.0 * params.half_wheelbase;
    let m = params.mass;
    let g = params.g;
    let h = params.cog_height;
    let l = params.half_wheelbase;
    let (sin_a, cos_a) = slope.sin_cos();
    let front = (-aero.drag * params.drag_height + aero.down_front * two_l) / two_l
        + (-m * v_dot * h - m * g * h * sin_a + m * g * l * cos_a) / two_l;
    let rear = (aero.drag * params.drag_height + aero.down_rear * two_l) / two_l
        + (m * v_dot * h + m * g * h * sin_a + m * g * l * cos_a) / two_l;
    AxleLoads { front, rear }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TireLimits {
    pub lateral_front: f64,
    pub lateral_rear: f64,
    pub front: f64,
    pub rear: f64,
    /// Lateral demand reached the adherence limit on some axle.
    pub saturated: bool,
}

/// Longitudinal force each axle can still transmit given the lateral demand.
pub fn tire_limits(
    fz_front: f64,
    fz_rear: f64,
    v: f64,
    radius: f64,
    params: &VehicleParams,
    low_speed_curve: bool,
) -> TireLimits {
    let fy = if radius.is_finite() {
        params.mass * v * v / (2.0 * radius)
    } else {
        0.0
    };
    let mu = if low_speed_curve {
        params.mu * params.coeff_adherence
    } else {
        params.mu
    };
    let limit = |fz: f64| -> (f64, bool) {
        let fad = mu * fz.max(0.0);
        if fad >= fy {
            ((fad * fad - fy * fy).sqrt(), false)
        } else {
            (0.0, true)
        }
    };
    let (front, sf) = limit(fz_front);
    let (rear, sr) = limit(fz_rear);
    TireLimits {
        lateral_front: fy,
        lateral_rear: fy,
        front,
        rear,
        saturated: sf || sr,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thrust {
    pub el: f64,
    pub comb: f64,
    pub gear: usize,
    /// Some engine or motor speed fell outside its torque curve.
    pub clamped: bool,
}

pub fn engine_rpm(v: f64, ratio: f64, params: &VehicleParams) -> f64 {
    v / params.wheel_radius * ratio * RPM_PER_RAD_S
}

/// Gear with the largest wheel thrust at speed `v` (0-based), preferring
/// gears whose engine speed lies inside the torque curve.
pub fn select_gear(v: f64, params: &VehicleParams) -> usize {
    let (lo, hi) = params.comb_torque_curve.rpm_range();
    let mut best: Option<(usize, f64)> = None;
    for (q, &ratio) in params.gear_ratios.iter().enumerate() {
        let rpm = engine_rpm(v, ratio, params);
        if rpm < lo || rpm > hi {
            continue;
        }
        let f = params.comb_torque_curve.torque(rpm).0 * ratio;
        if best.map_or(true, |(_, bf)| f > bf) {
            best = Some((q, f));
        }
    }
    match best {
        Some((q, _)) => q,
        None => {
            // below the first gear's range or above the top gear's
            let first = engine_rpm(v, params.gear_ratios[0], params);
            if first < lo {
                0
            } else {
                params.gear_ratios.len() - 1
            }
        }
    }
}

/// Thrust available at the wheels from each machine in gear `gear`.
pub fn powertrain_thrust(v: f64, gear: usize, params: &VehicleParams) -> Thrust {
    let ratio = params.gear_ratios[gear.min(params.gear_ratios.len() - 1)];
    let (t_comb, c1) = params.comb_torque_curve.torque(engine_rpm(v, ratio, params));
    let (t_el, c2) = params
        .el_torque_curve
        .torque(engine_rpm(v, params.tau_el, params));
    Thrust {
        comb: t_comb * ratio * params.coeff_engine / params.wheel_radius,
        el: t_el * params.tau_el / params.wheel_radius,
        gear,
        clamped: c1 || c2,
    }
}

/// Speed integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// `v' = v + a * ds / v`
    #[default]
    Explicit,
    /// `v'^2 = v^2 + 2 a ds`
    KineticEnergy,
}

/// Commands for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInput {
    pub mode: PowertrainMode,
    /// Brake force command (N, ≤ 0); only read in [`PowertrainMode::Braking`].
    pub brake_force: f64,
    /// Electric energy still allowed in this step (kJ).
    pub el_energy_cap: f64,
    /// Fuel still allowed in this step (kg).
    pub fuel_cap: f64,
    /// Upper bound on the summed traction force (partial throttle).
    pub traction_demand: f64,
}

impl StepInput {
    pub fn new(mode: PowertrainMode) -> Self {
        StepInput {
            mode,
            brake_force: f64::NEG_INFINITY,
            el_energy_cap: f64::INFINITY,
            fuel_cap: f64::INFINITY,
            traction_demand: f64::INFINITY,
        }
    }

    pub fn braking(brake_force: f64) -> Self {
        StepInput {
            brake_force,
            ..Self::new(PowertrainMode::Braking)
        }
    }
}

/// Per-point force ledger (N).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ForceLedger {
    pub f_x_f: f64,
    pub f_x_r: f64,
    pub f_aero: f64,
    pub r_f: f64,
    pub r_r: f64,
    pub f_z_f: f64,
    pub f_z_r: f64,
    pub f_y_f: f64,
    pub f_y_r: f64,
    pub f_t_f: f64,
    pub f_t_r: f64,
    pub f_down_f: f64,
    pub f_down_r: f64,
    pub wheel_lift: bool,
    pub saturated: bool,
    pub rpm_clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub v_next: f64,
    pub v_dot: f64,
    pub dt: f64,
    /// kg
    pub fuel: f64,
    /// kJ
    pub e_used: f64,
    /// kJ
    pub e_rec: f64,
    pub mode: PowertrainMode,
    pub gear: usize,
    pub ledger: ForceLedger,
}

const LOAD_PASSES: usize = 4;

/// Advances the car over one grid interval without checking for stalls.
pub fn step_raw(
    v: f64,
    point: &TrackPoint,
    delta_s: f64,
    input: &StepInput,
    params: &VehicleParams,
    integrator: Integrator,
) -> StepOutput {
    let m = params.mass;
    let aero = aero_forces(v, params, point.high_speed_curve);
    let gear = select_gear(v, params);
    let thrust = powertrain_thrust(v, gear, params);
    let dt = delta_s / v;

    let el_cap_force = if input.el_energy_cap.is_finite() {
        (input.el_energy_cap * 1000.0 * params.eta_el_traction / delta_s).max(0.0)
    } else {
        f64::INFINITY
    };
    let comb_cap_force = if input.fuel_cap.is_finite() && thrust.comb > 0.0 {
        (thrust.comb * input.fuel_cap / (params.p_max_per_s * dt)).max(0.0)
    } else {
        f64::INFINITY
    };

    let mut v_dot = 0.0;
    let mut loads = vertical_loads(0.0, point.slope, &aero, params);
    let mut limits = tire_limits(0.0, 0.0, v, point.radius, params, point.low_speed_curve);
    let (mut fxf, mut fxr) = (0.0, 0.0);
    let mut rolling = (0.0, 0.0);
    for _ in 0..LOAD_PASSES {
        loads = vertical_loads(v_dot, point.slope, &aero, params);
        let (zf, zr) = loads.clamped();
        limits = tire_limits(zf, zr, v, point.radius, params, point.low_speed_curve);
        match input.mode {
            PowertrainMode::Both | PowertrainMode::CombOnly => {
                let demand = input.traction_demand.max(0.0);
                fxr = thrust.comb.min(limits.rear).min(comb_cap_force).min(demand);
                fxf = if input.mode == PowertrainMode::Both {
                    thrust
                        .el
                        .min(limits.front)
                        .min(el_cap_force)
                        .min((demand - fxr).max(0.0))
                } else {
                    0.0
                };
            }
            PowertrainMode::Sailing => {
                let total = params.f_sail.abs();
                let front = total.min(limits.front);
                let rear = (total - front).min(limits.rear);
                fxf = -front;
                fxr = -rear;
            }
            PowertrainMode::Braking => {
                let cap = limits.front + limits.rear;
                let total = input.brake_force.abs().min(cap);
                if cap > 0.0 {
                    fxf = -total * limits.front / cap;
                    fxr = -total * limits.rear / cap;
                } else {
                    fxf = 0.0;
                    fxr = 0.0;
                }
            }
        }
        rolling = (params.c_res * zf, params.c_res * zr);
        let next = (fxf + fxr - aero.drag - rolling.0 - rolling.1 - m * params.g * point.slope.sin()) / m;
        if (next - v_dot).abs() < 1e-9 {
            v_dot = next;
            break;
        }
        v_dot = next;
    }

    let v_next = match integrator {
        Integrator::Explicit => v + v_dot * dt,
        Integrator::KineticEnergy => {
            let e = v * v + 2.0 * v_dot * delta_s;
            if e > 0.0 {
                e.sqrt()
            } else {
                -1.0
            }
        }
    };

    let fuel = if fxr > 0.0 && thrust.comb > 0.0 {
        params.p_max_per_s * (fxr / thrust.comb) * dt
    } else {
        0.0
    };
    let e_used = if fxf > 0.0 {
        fxf * delta_s / params.eta_el_traction / 1000.0
    } else {
        0.0
    };
    let e_rec = match input.mode {
        PowertrainMode::Sailing => (fxf + fxr).abs() * delta_s * params.eta_el_rec / 1000.0,
        PowertrainMode::Braking => {
            (fxf + fxr).abs().min(params.f_dec_max.abs()) * delta_s * params.eta_el_rec / 1000.0
        }
        _ => 0.0,
    };

    StepOutput {
        v_next,
        v_dot,
        dt,
        fuel,
        e_used,
        e_rec,
        mode: input.mode,
        gear,
        ledger: ForceLedger {
            f_x_f: fxf,
            f_x_r: fxr,
            f_aero: aero.drag,
            r_f: rolling.0,
            r_r: rolling.1,
            f_z_f: loads.front,
            f_z_r: loads.rear,
            f_y_f: limits.lateral_front,
            f_y_r: limits.lateral_rear,
            f_t_f: limits.front,
            f_t_r: limits.rear,
            f_down_f: aero.down_front,
            f_down_r: aero.down_rear,
            wheel_lift: loads.wheel_lift(),
            saturated: limits.saturated,
            rpm_clamped: thrust.clamped,
        },
    }
}

/// One spatial step; a non-positive next speed is a stall at `index`.
pub fn step(
    v: f64,
    point: &TrackPoint,
    index: usize,
    delta_s: f64,
    input: &StepInput,
    params: &VehicleParams,
    integrator: Integrator,
) -> Result<StepOutput> {
    if !(v > 0.0) {
        return Err(Error::Stall { index, s: point.s });
    }
    let out = step_raw(v, point, delta_s, input, params, integrator);
    if !(out.v_next > 0.0) {
        return Err(Error::Stall { index, s: point.s });
    }
    Ok(out)
}

/// Cornering speed limit with no longitudinal force, solved by fixed-point
/// iteration on the speed-dependent downforce. `INFINITY` on straights.
pub fn apex_speed(point: &TrackPoint, params: &VehicleParams) -> f64 {
    if !point.radius.is_finite() {
        return f64::INFINITY;
    }
    let mu = if point.low_speed_curve {
        params.mu * params.coeff_adherence
    } else {
        params.mu
    };
    let r = point.radius;
    let m = params.mass;
    let mut v = (mu * params.g * r).sqrt();
    for _ in 0..100 {
        let aero = aero_forces(v, params, point.high_speed_curve);
        let loads = vertical_loads(0.0, point.slope, &aero, params);
        let (zf, zr) = loads.clamped();
        let next = (mu * zf.min(zr) * 2.0 * r / m).sqrt().min(APEX_CAP);
        if (next - v).abs() < 1e-6 {
            return next;
        }
        v = next;
    }
    v
}

/// Upper bound used when downforce grows faster than the lateral demand.
pub const APEX_CAP: f64 = 150.0;
