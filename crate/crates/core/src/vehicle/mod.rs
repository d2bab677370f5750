//! Longitudinal ego-vehicle model.

mod lap;
mod model;
mod params;
mod track;

pub use lap::{
    label_curves, tune_coefficients, BudgetPlan, Control, LapResult, LapSimulator, TuneResult,
};
pub use model::{
    aero_forces, apex_speed, engine_rpm, powertrain_thrust, select_gear, step, step_raw,
    tire_limits, vertical_loads, AeroForces, AxleLoads, ForceLedger, Integrator, PowertrainMode,
    StepInput, StepOutput, Thrust, TireLimits, APEX_CAP,
};
pub use params::{TorqueCurve, TorquePoint, VehicleParams};
pub use track::{Segment, SectionMap, Straight, TrackBuilder, TrackGeometry, TrackPoint};
