//! Lap simulation: speed envelope, driver logic and the lap ledger.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::model::{
    aero_forces, apex_speed, step, step_raw, ForceLedger, Integrator, PowertrainMode, StepInput,
    StepOutput, APEX_CAP,
};
use super::params::VehicleParams;
use super::track::TrackGeometry;
use crate::table::fmt_f;
use crate::{Error, Result};

/// Below this speed the car is considered stalled (m/s).
const LIMP_SPEED: f64 = 0.5;
const BISECT_ITERS: usize = 48;
/// Budget remainders below this (kJ or kg) count as spent.
const EXHAUSTED: f64 = 1e-9;

/// Per-region energy budgets plus per-point electric bans.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetPlan {
    /// Electric energy per region (kJ), indexed by `region - 1`.
    pub el: Vec<f64>,
    /// Fuel per region (kg).
    pub fuel: Vec<f64>,
    /// Points where the electric motor may not drive.
    pub banned: Vec<bool>,
}

impl BudgetPlan {
    pub fn new(el: Vec<f64>, fuel: Vec<f64>, n_points: usize) -> Self {
        BudgetPlan {
            el,
            fuel,
            banned: vec![false; n_points],
        }
    }
}

/// What drives the powertrain over the lap.
#[derive(Debug, Clone, Copy)]
pub enum Control<'a> {
    /// Mode 1 everywhere it helps, no budget.
    Unlimited,
    /// Combustion engine only, no budget.
    CombOnly,
    Budgets(&'a BudgetPlan),
    /// Explicit per-point modes. Braking force and partial throttle still
    /// follow the speed envelope.
    Modes(&'a [PowertrainMode]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LapResult {
    /// Speed at each grid point (m/s).
    pub speed: Vec<f64>,
    pub mode: Vec<PowertrainMode>,
    /// Time spent in each cell (s).
    pub dt: Vec<f64>,
    /// Speed when crossing the line at the end of the lap.
    pub v_end: f64,
    pub lap_time: f64,
    /// kg
    pub fuel_used: f64,
    /// kJ
    pub e_el_used: f64,
    /// kJ
    pub e_el_rec_kers: f64,
    /// Per-point fuel (kg) and electric energy (kJ).
    pub fuel: Vec<f64>,
    pub e_used: Vec<f64>,
    pub e_rec: Vec<f64>,
    pub ledger: Vec<ForceLedger>,
}

impl LapResult {
    /// Electric energy (kJ) and fuel (kg) consumed in each region.
    pub fn region_consumption(&self, geometry: &TrackGeometry) -> (Vec<f64>, Vec<f64>) {
        let m = geometry.n_regions();
        let mut el = vec![0.0; m];
        let mut fuel = vec![0.0; m];
        for (k, p) in geometry.points.iter().enumerate() {
            el[p.region - 1] += self.e_used[k];
            fuel[p.region - 1] += self.fuel[k];
        }
        (el, fuel)
    }

    /// Cumulative time at the start of each grid point, plus the lap time.
    pub fn timeline(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dt.len() + 1);
        let mut t = 0.0;
        out.push(t);
        for d in &self.dt {
            t += d;
            out.push(t);
        }
        out
    }

    /// Largest per-axle friction-circle excess over the lap (N); ≤ 0 when
    /// the circle is respected everywhere.
    pub fn friction_excess(&self) -> f64 {
        self.ledger
            .iter()
            .map(|l| (l.f_x_f.abs() - l.f_t_f).max(l.f_x_r.abs() - l.f_t_r))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Per-point ledger as delimited text followed by a summary block.
    pub fn write<W: Write>(&self, geometry: &TrackGeometry, mut sink: W) -> Result<()> {
        writeln!(
            sink,
            "s,v,mode,dt,fuel_g,e_used_kj,e_rec_kj,F_x_f,F_x_r,F_aero,R_f,R_r,F_z_f,F_z_r,F_y_f,F_y_r,F_t_f,F_t_r,wheel_lift,saturated"
        )?;
        for (k, l) in self.ledger.iter().enumerate() {
            writeln!(
                sink,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                fmt_f(geometry.points[k].s, 3),
                fmt_f(self.speed[k], 6),
                self.mode[k].code(),
                fmt_f(self.dt[k], 9),
                fmt_f(self.fuel[k] * 1000.0, 9),
                fmt_f(self.e_used[k], 9),
                fmt_f(self.e_rec[k], 9),
                fmt_f(l.f_x_f, 3),
                fmt_f(l.f_x_r, 3),
                fmt_f(l.f_aero, 3),
                fmt_f(l.r_f, 3),
                fmt_f(l.r_r, 3),
                fmt_f(l.f_z_f, 3),
                fmt_f(l.f_z_r, 3),
                fmt_f(l.f_y_f, 3),
                fmt_f(l.f_y_r, 3),
                fmt_f(l.f_t_f, 3),
                fmt_f(l.f_t_r, 3),
                l.wheel_lift as u8,
                l.saturated as u8,
            )?;
        }
        writeln!(sink, "# lap_time={}", fmt_f(self.lap_time, 9))?;
        writeln!(sink, "# fuel_kg={}", fmt_f(self.fuel_used, 9))?;
        writeln!(sink, "# e_used_kj={}", fmt_f(self.e_el_used, 9))?;
        writeln!(sink, "# e_rec_kj={}", fmt_f(self.e_el_rec_kers, 9))?;
        Ok(())
    }
}

/// Lap simulator bound to one circuit and one parameter set. Building it
/// computes the apex limits and the maximum-braking speed envelope.
#[derive(Debug, Clone)]
pub struct LapSimulator {
    pub geometry: TrackGeometry,
    pub params: VehicleParams,
    pub integrator: Integrator,
    v_lim: Vec<f64>,
    envelope: Vec<f64>,
}

impl LapSimulator {
    pub fn new(geometry: TrackGeometry, params: VehicleParams) -> Result<Self> {
        Self::with_integrator(geometry, params, Integrator::Explicit)
    }

    pub fn with_integrator(
        geometry: TrackGeometry,
        params: VehicleParams,
        integrator: Integrator,
    ) -> Result<Self> {
        geometry.validate()?;
        params.validate()?;
        let v_lim: Vec<f64> = geometry
            .points
            .iter()
            .map(|p| apex_speed(p, &params))
            .collect();
        let mut sim = LapSimulator {
            geometry,
            params,
            integrator,
            envelope: v_lim.clone(),
            v_lim,
        };
        sim.build_envelope();
        Ok(sim)
    }

    /// Apex speed limit at every point (`INFINITY` on straights).
    pub fn speed_limits(&self) -> &[f64] {
        &self.v_lim
    }

    /// Highest speed at each point from which the car can still honour every
    /// later limit under maximum braking.
    pub fn envelope(&self) -> &[f64] {
        &self.envelope
    }

    fn build_envelope(&mut self) {
        let n = self.v_lim.len();
        let Some(start) = (0..n)
            .filter(|&k| self.v_lim[k].is_finite())
            .min_by(|&a, &b| self.v_lim[a].total_cmp(&self.v_lim[b]))
        else {
            return;
        };
        for j in 1..n {
            let k = (start + n - j) % n;
            let next = (k + 1) % n;
            let entry = self.brake_entry(k, self.envelope[next]);
            self.envelope[k] = self.v_lim[k].min(entry);
        }
    }

    /// Largest speed at point `k` from which one maximum-braking step ends
    /// at or below `target`.
    fn brake_entry(&self, k: usize, target: f64) -> f64 {
        if !target.is_finite() || target >= APEX_CAP {
            return f64::INFINITY;
        }
        let p = &self.geometry.points[k];
        let ds = self.geometry.delta_s;
        let input = StepInput::braking(f64::NEG_INFINITY);
        let next = |v: f64| step_raw(v, p, ds, &input, &self.params, self.integrator).v_next;
        if next(APEX_CAP) <= target {
            return f64::INFINITY;
        }
        let (mut lo, mut hi) = (target, APEX_CAP);
        for _ in 0..BISECT_ITERS {
            let mid = 0.5 * (lo + hi);
            if next(mid) <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Net force needed at point `k` to go from `v` to `target` in one step.
    fn force_needed(&self, k: usize, v: f64, target: f64) -> f64 {
        let p = &self.geometry.points[k];
        let prm = &self.params;
        let ds = self.geometry.delta_s;
        let a = match self.integrator {
            Integrator::Explicit => (target - v) * v / ds,
            Integrator::KineticEnergy => (target * target - v * v) / (2.0 * ds),
        };
        let aero = aero_forces(v, prm, p.high_speed_curve);
        let normal = aero.down_front + aero.down_rear + prm.mass * prm.g * p.slope.cos();
        prm.mass * a + aero.drag + prm.c_res * normal + prm.mass * prm.g * p.slope.sin()
    }

    /// Speed the car settles at when it starts every lap from where the
    /// previous one ended, using the combustion engine only.
    pub fn flying_start(&self) -> Result<f64> {
        self.flying_start_with(Control::CombOnly)
    }

    pub fn flying_start_with(&self, control: Control) -> Result<f64> {
        let first = self.envelope[0];
        let mut v = if first.is_finite() { first } else { 50.0 };
        for _ in 0..6 {
            let r = self.simulate(control, v)?;
            if (r.v_end - v).abs() < 1e-9 {
                break;
            }
            v = r.v_end;
        }
        Ok(v)
    }

    pub fn simulate(&self, control: Control, v_start: f64) -> Result<LapResult> {
        let g = &self.geometry;
        let n = g.points.len();
        let ds = g.delta_s;
        if !(v_start > 0.0) {
            return Err(Error::Stall { index: 0, s: 0.0 });
        }
        if let Control::Budgets(plan) = control {
            let m = g.n_regions();
            if plan.el.len() != m || plan.fuel.len() != m || plan.banned.len() != n {
                return Err(Error::invalid(format!(
                    "budget plan shape ({} / {} / {}) does not match {m} regions and {n} points",
                    plan.el.len(),
                    plan.fuel.len(),
                    plan.banned.len()
                )));
            }
        }
        if let Control::Modes(modes) = control {
            if modes.len() != n {
                return Err(Error::GridMismatch(format!(
                    "mode trace has {} entries for {n} points",
                    modes.len()
                )));
            }
        }
        if v_start > self.envelope[0] * (1.0 + 1e-9) {
            return Err(Error::InfeasibleApex {
                index: 0,
                s: 0.0,
                speed: v_start,
                limit: self.envelope[0],
            });
        }

        let mut out = LapResult {
            speed: Vec::with_capacity(n),
            mode: Vec::with_capacity(n),
            dt: Vec::with_capacity(n),
            v_end: 0.0,
            lap_time: 0.0,
            fuel_used: 0.0,
            e_el_used: 0.0,
            e_el_rec_kers: 0.0,
            fuel: Vec::with_capacity(n),
            e_used: Vec::with_capacity(n),
            e_rec: Vec::with_capacity(n),
            ledger: Vec::with_capacity(n),
        };
        let mut el_left = f64::INFINITY;
        let mut fuel_left = f64::INFINITY;
        let mut region = 0;
        let mut v = v_start;
        for k in 0..n {
            let p = &g.points[k];
            if let Control::Budgets(plan) = control {
                if p.region != region {
                    // unspent budget does not carry over
                    region = p.region;
                    el_left = plan.el[region - 1];
                    fuel_left = plan.fuel[region - 1];
                }
            }
            let next = (k + 1) % n;
            let target = self.envelope[next];
            let desired = match control {
                Control::Unlimited => PowertrainMode::Both,
                Control::CombOnly => PowertrainMode::CombOnly,
                Control::Modes(m) => m[k],
                Control::Budgets(plan) => {
                    if fuel_left > EXHAUSTED && el_left > EXHAUSTED && !plan.banned[k] {
                        PowertrainMode::Both
                    } else if fuel_left > EXHAUSTED {
                        PowertrainMode::CombOnly
                    } else {
                        PowertrainMode::Sailing
                    }
                }
            };
            let mut input = StepInput {
                el_energy_cap: el_left,
                fuel_cap: fuel_left,
                ..StepInput::new(desired)
            };
            if desired == PowertrainMode::Braking {
                input.brake_force = self.force_needed(k, v, target).min(0.0);
            }
            let mut o = step(v, p, k, ds, &input, &self.params, self.integrator)?;
            if o.v_next > target {
                o = self.track_envelope(k, v, target, desired, &input)?;
            }
            if o.v_next < LIMP_SPEED {
                return Err(Error::Stall { index: k, s: p.s });
            }
            if o.v_next > self.v_lim[next] * (1.0 + 1e-6) + 1e-6 {
                let q = &g.points[next];
                return Err(Error::InfeasibleApex {
                    index: next,
                    s: q.s,
                    speed: o.v_next,
                    limit: self.v_lim[next],
                });
            }
            el_left -= o.e_used;
            fuel_left -= o.fuel;
            self.record(&mut out, v, &o);
            v = o.v_next;
        }
        out.v_end = v;
        Ok(out)
    }

    /// Extra time needed to climb back onto `lap`'s speed trace after
    /// entering point `from` at `v0`, replaying the lap's powertrain modes.
    /// Stops at the lap end if the trace is never rejoined.
    pub fn recovery_loss(&self, lap: &LapResult, from: usize, v0: f64) -> Result<f64> {
        let g = &self.geometry;
        let n = g.points.len();
        if lap.speed.len() != n {
            return Err(Error::GridMismatch(format!(
                "lap has {} points, circuit has {n}",
                lap.speed.len()
            )));
        }
        let ds = g.delta_s;
        let mut v = v0.max(LIMP_SPEED);
        let mut loss = 0.0;
        for k in from..n {
            if v >= lap.speed[k] * (1.0 - 1e-9) {
                break;
            }
            let p = &g.points[k];
            let next = (k + 1) % n;
            let ref_next = if k + 1 < n { lap.speed[k + 1] } else { lap.v_end };
            let target = self.envelope[next].min(ref_next);
            let mode = match lap.mode[k] {
                PowertrainMode::Braking => PowertrainMode::CombOnly,
                m => m,
            };
            let input = StepInput::new(mode);
            let mut o = step(v, p, k, ds, &input, &self.params, self.integrator)?;
            if o.v_next > target {
                o = self.track_envelope(k, v, target, mode, &input)?;
            }
            loss += o.dt - lap.dt[k];
            v = o.v_next;
        }
        Ok(loss.max(0.0))
    }

    /// Re-runs the step with reduced throttle, or with brakes, so the next
    /// speed lands on the envelope.
    fn track_envelope(
        &self,
        k: usize,
        v: f64,
        target: f64,
        desired: PowertrainMode,
        input: &StepInput,
    ) -> Result<StepOutput> {
        let p = &self.geometry.points[k];
        let ds = self.geometry.delta_s;
        let need = self.force_needed(k, v, target);
        let mut try_input = *input;
        if need >= 0.0 && desired.is_traction() {
            try_input.traction_demand = need;
        } else {
            try_input = StepInput::braking(need.min(0.0));
        }
        let o = step(v, p, k, ds, &try_input, &self.params, self.integrator)?;
        if o.v_next <= target * (1.0 + 1e-9) {
            return Ok(o);
        }
        step(
            v,
            p,
            k,
            ds,
            &StepInput::braking(f64::NEG_INFINITY),
            &self.params,
            self.integrator,
        )
    }

    fn record(&self, out: &mut LapResult, v: f64, o: &StepOutput) {
        out.speed.push(v);
        out.mode.push(o.mode);
        out.dt.push(o.dt);
        out.lap_time += o.dt;
        out.fuel.push(o.fuel);
        out.fuel_used += o.fuel;
        out.e_used.push(o.e_used);
        out.e_el_used += o.e_used;
        out.e_rec.push(o.e_rec);
        out.e_el_rec_kers += o.e_rec;
        out.ledger.push(o.ledger);
    }
}

/// Sets the low/high-speed curve labels from the apex speed thresholds.
pub fn label_curves(geometry: &mut TrackGeometry, params: &VehicleParams, low: f64, high: f64) {
    for p in &mut geometry.points {
        p.low_speed_curve = false;
        p.high_speed_curve = false;
        if p.radius.is_finite() {
            let v = apex_speed(p, params);
            p.low_speed_curve = v < low;
            p.high_speed_curve = v > high;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub coeff_engine: f64,
    pub coeff_adherence: f64,
    pub coeff_downforce: f64,
    /// RMS speed error against the reference (m/s).
    pub rms: f64,
}

/// Grid search over the three corrective coefficients minimising the RMS
/// speed error against `reference` (one speed per grid point). Candidates
/// that fail to complete a lap are skipped.
pub fn tune_coefficients(
    geometry: &TrackGeometry,
    params: &VehicleParams,
    reference: &[f64],
    grid: [&[f64]; 3],
    control: Control,
) -> Result<TuneResult> {
    if reference.len() != geometry.points.len() {
        return Err(Error::GridMismatch(format!(
            "reference has {} speeds for {} points",
            reference.len(),
            geometry.points.len()
        )));
    }
    let mut best: Option<TuneResult> = None;
    for &ce in grid[0] {
        for &ca in grid[1] {
            for &cd in grid[2] {
                let prm = VehicleParams {
                    coeff_engine: ce,
                    coeff_adherence: ca,
                    coeff_downforce: cd,
                    ..params.clone()
                };
                let sim = LapSimulator::new(geometry.clone(), prm)?;
                let Ok(v0) = sim.flying_start_with(control) else {
                    continue;
                };
                let Ok(r) = sim.simulate(control, v0) else {
                    continue;
                };
                let sq: f64 = r
                    .speed
                    .iter()
                    .zip(reference)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let rms = (sq / reference.len() as f64).sqrt();
                if best.as_ref().map_or(true, |b| rms < b.rms) {
                    best = Some(TuneResult {
                        coeff_engine: ce,
                        coeff_adherence: ca,
                        coeff_downforce: cd,
                        rms,
                    });
                }
            }
        }
    }
    best.ok_or_else(|| Error::invalid("no coefficient candidate completed a lap"))
}
