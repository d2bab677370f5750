//! Synthetic datasets: circuit presets, a simulated race published as a
//! sector-time table, and planted overtaking episodes.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ingest::{Class, SectorTimeRecord};
use crate::mc_sim::{CarState, McConfig, McModel, RaceState};
use crate::stats::{CarFreeTimes, CarPositions, FreeSectorTimes, OvertakingTable, RacePositions, ReferenceProfile};
use crate::vehicle::{label_curves, Control, LapSimulator, Segment, SectionMap, TrackBuilder, TrackGeometry, VehicleParams};
use crate::{Error, Result};

/// Apex speeds separating low-, medium- and high-speed curves (m/s).
pub const LOW_SPEED_CURVE: f64 = 25.0;
pub const HIGH_SPEED_CURVE: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "oval-1km")]
    Oval1km,
    #[serde(rename = "bahrain-like")]
    BahrainLike,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oval-1km" => Ok(Preset::Oval1km),
            "bahrain-like" => Ok(Preset::BahrainLike),
            _ => Err(Error::invalid(format!(
                "unknown track preset {s:?} (expected oval-1km or bahrain-like)"
            ))),
        }
    }
}

impl Preset {
    pub fn segments(self) -> (Vec<Segment>, f64) {
        use Segment::{Curve, Straight};
        match self {
            Preset::Oval1km => {
                let r = 160.0 / std::f64::consts::PI;
                (
                    vec![
                        Straight { length: 340.0 },
                        Curve { length: 160.0, radius: r },
                        Straight { length: 340.0 },
                        Curve { length: 160.0, radius: r },
                    ],
                    100.0,
                )
            }
            Preset::BahrainLike => {
                let straights = [1000.0, 500.0, 350.0, 600.0, 400.0, 900.0, 350.0, 300.0];
                let curves = [(80.0, 25.0), (120.0, 60.0), (200.0, 120.0), (100.0, 40.0), (150.0, 90.0), (90.0, 30.0), (250.0, 150.0), (122.0, 50.0)];
                let mut segs = Vec::new();
                for (s, (l, r)) in straights.iter().zip(curves) {
                    segs.push(Straight { length: *s });
                    segs.push(Curve { length: l, radius: r });
                }
                (segs, 200.0)
            }
        }
    }

    /// Circuit on a `delta_s` grid with curve speed classes labelled for `params`.
    pub fn geometry(self, delta_s: f64, params: &VehicleParams) -> Result<TrackGeometry> {
        let (segments, max_section) = self.segments();
        let mut b = TrackBuilder::new(segments, delta_s);
        b.max_section = max_section;
        let mut g = b.build()?;
        label_curves(&mut g, params, LOW_SPEED_CURVE, HIGH_SPEED_CURVE);
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub preset: Preset,
    pub delta_s: f64,
    pub cars_per_class: usize,
    /// Complete laps published per car.
    pub laps: usize,
    /// Relative standard deviation of a sector time around the car's pace.
    pub lap_noise: f64,
    /// Half-width of the uniform spread of car pace within a class.
    pub car_spread: f64,
    /// Pace of each class relative to the reference lap, in `Class::ALL` order.
    pub class_factors: [f64; 4],
    /// Free laps in each car's pace pool.
    pub pool: usize,
    /// Adds a box-stop lap (slow last sector, no stop flag) to one car.
    pub box_outlier: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            preset: Preset::Oval1km,
            delta_s: 2.0,
            cars_per_class: 2,
            laps: 20,
            lap_noise: 0.004,
            car_spread: 0.005,
            class_factors: [1.03, 1.08, 1.14, 1.17],
            pool: 40,
            box_outlier: true,
            seed: 7,
        }
    }
}

/// Extra time of the planted box lap (s).
pub const BOX_STOP: f64 = 60.0;

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub geometry: TrackGeometry,
    pub params: VehicleParams,
    pub reference: ReferenceProfile,
    pub records: Vec<SectorTimeRecord>,
    /// Overtaking probabilities the race was simulated with.
    pub truth: OvertakingTable,
    /// (car, lap) pairs deliberately corrupted.
    pub outliers: Vec<(u32, u32)>,
}

/// Probability of `a` passing `b` used to simulate the race: easier on
/// straights and against slower classes.
pub fn planted_probability(a: Class, b: Class, straight: bool) -> f64 {
    let rank = |c: Class| Class::ALL.iter().position(|x| *x == c).unwrap() as f64;
    let base = if straight { 0.6 } else { 0.25 };
    (base + 0.1 * (rank(b) - rank(a))).clamp(0.05, 0.95)
}

pub fn car_number(class: Class, i: usize) -> u32 {
    let rank = Class::ALL.iter().position(|x| *x == class).unwrap() as u32;
    (rank + 1) * 10 + i as u32 + 1
}

/// Builds the circuit, the reference profile (the ego car on combustion
/// power only) and a simulated race of the competitor field.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    if cfg.cars_per_class == 0 || cfg.laps < 2 || cfg.pool == 0 {
        return Err(Error::invalid("synthetic race needs cars, at least 2 laps and a pace pool"));
    }
    let params = VehicleParams::default();
    let geometry = cfg.preset.geometry(cfg.delta_s, &params)?;
    let sim = LapSimulator::new(geometry.clone(), params.clone())?;
    let v0 = sim.flying_start()?;
    let lap = sim.simulate(Control::CombOnly, v0)?;
    let reference = ReferenceProfile::from_lap(&lap, &geometry)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.lap_noise).map_err(|e| Error::invalid(e.to_string()))?;
    let mut free = FreeSectorTimes::default();
    let mut cars = Vec::new();
    for (ci, class) in Class::ALL.iter().enumerate() {
        for i in 0..cfg.cars_per_class {
            let car = car_number(*class, i);
            let pace = cfg.class_factors[ci] * (1.0 + rng.gen_range(-cfg.car_spread..=cfg.car_spread));
            let mut times: [Vec<f64>; 3] = Default::default();
            for (s, pool) in times.iter_mut().enumerate() {
                for _ in 0..cfg.pool {
                    let f = (1.0 + noise.sample(&mut rng)).max(0.5);
                    pool.push(reference.sector_times[s] * pace * f);
                }
            }
            free.cars.insert(car, CarFreeTimes { class: *class, times });
            cars.push((car, *class));
        }
    }
    // rolling start: fastest classes in front, 30 m apart
    let n = cars.len();
    let initial = RaceState {
        t: 0.0,
        cars: cars
            .iter()
            .enumerate()
            .map(|(i, (car, class))| CarState {
                car: *car,
                class: *class,
                s: 30.0 * (n - i) as f64,
            })
            .collect(),
    };
    let sections = geometry.section_map();
    let mut truth = OvertakingTable::new(sections.len());
    let straight_section: BTreeMap<usize, bool> = geometry
        .points
        .iter()
        .map(|p| (p.section, p.is_straight))
        .collect();
    for a in Class::ALL {
        for b in Class::ALL {
            for (sec, st) in &straight_section {
                let p = planted_probability(a, b, *st);
                truth.add(a, b, *sec, (p * 1000.0).round() as u32, 1000);
            }
        }
    }
    let slowest = cfg.class_factors.iter().cloned().fold(1.0, f64::max) * (1.0 + cfg.car_spread + 6.0 * cfg.lap_noise);
    let model = McModel {
        reference: &reference,
        free: &free,
        table: &truth,
        sections,
        config: McConfig {
            horizon_laps: (cfg.laps as f64 + 2.0) * slowest * 1.3,
            ..McConfig::default()
        },
    };
    let trace = model.simulate(&initial, cfg.seed ^ 0x5eed)?;

    let l = geometry.length;
    let ends = reference.sector_ends;
    let mut records = Vec::new();
    for (i, (car, class)) in cars.iter().enumerate() {
        let p = &trace.positions[i];
        let cross = |x: f64| -> Option<f64> {
            let k = p.partition_point(|&q| q < x);
            if k == 0 || k >= p.len() {
                return None;
            }
            let f = (x - p[k - 1]) / (p[k] - p[k - 1]);
            Some((k as f64 - 1.0 + f) * trace.dt)
        };
        // lap 1 starts on the grid and is not published
        for lap in 2..=(cfg.laps + 1) as u32 {
            let base = (lap - 1) as f64 * l;
            let marks = [
                cross(base),
                cross(base + ends[0]),
                cross(base + ends[1]),
                cross(base + l),
            ];
            let [Some(t0), Some(t1), Some(t2), Some(t3)] = marks else {
                return Err(Error::invalid(format!("car {car} did not finish lap {lap} in the race horizon")));
            };
            records.push(SectorTimeRecord {
                car_number: *car,
                lap,
                stop_flag: None,
                s1: round3(t1 - t0),
                s2: round3(t2 - t1),
                s3: round3(t3 - t2),
                elapsed: round3(t3),
                class: *class,
                group: "H".into(),
                team: format!("Team {car}"),
            });
        }
    }
    let mut outliers = Vec::new();
    if cfg.box_outlier {
        let car = car_number(Class::Lmp2, 0);
        let lap = (cfg.laps / 2 + 1) as u32;
        for r in records.iter_mut().filter(|r| r.car_number == car) {
            if r.lap == lap {
                r.s3 = round3(r.s3 + BOX_STOP);
            }
            if r.lap >= lap {
                r.elapsed = round3(r.elapsed + BOX_STOP);
            }
        }
        outliers.push((car, lap));
    }
    Ok(SynthDataset {
        geometry,
        params,
        reference,
        records,
        truth,
        outliers,
    })
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Planted overtaking episodes between two cars of classes `a` and `b`.
///
/// Each episode is a separate lap: `b` drives through `section` at 20 m/s
/// with `a` 9 m behind; with probability `p`, `a` drives at 30 m/s and
/// passes, otherwise it holds the gap. The lap is 1000 m with ten 100 m
/// sections. Returns the positions, the section map and the number of
/// planted passes.
pub fn planted_episodes(
    a: Class,
    b: Class,
    section: usize,
    p: f64,
    n: usize,
    seed: u64,
) -> Result<(RacePositions, SectionMap, usize)> {
    if !(1..=10).contains(&section) {
        return Err(Error::invalid("planted section must be in 1..=10"));
    }
    let length = 1000.0;
    let dt = 0.1;
    let window = 26;
    let stride = window + 1;
    let start = (section - 1) as f64 * 100.0 + 5.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sa = vec![f64::NAN; n * stride];
    let mut sb = vec![f64::NAN; n * stride];
    let mut passes = 0;
    for e in 0..n {
        let pass = rng.gen::<f64>() < p;
        passes += pass as usize;
        let va = if pass { 30.0 } else { 20.0 };
        let base = e as f64 * length + start;
        for k in 0..window {
            let t = k as f64 * dt;
            sa[e * stride + k] = base + va * t;
            sb[e * stride + k] = base + 9.0 + 20.0 * t;
        }
    }
    let positions = RacePositions {
        dt,
        length,
        sector_ends: [300.0, 600.0, 1000.0],
        cars: vec![
            CarPositions {
                car: 1,
                class: a,
                start: 0,
                s: sa,
            },
            CarPositions {
                car: 2,
                class: b,
                start: 0,
                s: sb,
            },
        ],
    };
    let map = SectionMap::new((0..10).map(|i| i as f64 * 100.0).collect(), length)?;
    Ok((positions, map, passes))
}
