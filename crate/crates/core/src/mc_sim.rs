//! Monte Carlo traffic: competitors drive resampled free laps and interact
//! through an influence/reaction overtaking rule.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::Class;
use crate::stats::{CarFreeTimes, FreeSectorTimes, LapTimeline, OvertakingTable, ReferenceProfile};
use crate::table::fmt_f;
use crate::vehicle::SectionMap;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    /// Time step (s).
    pub dt: f64,
    pub horizon_laps: f64,
    /// Leader search range (m).
    pub influence: f64,
    /// A blocked follower decides at a section boundary only when this close (m).
    pub proximity: f64,
    /// Distance a blocked follower keeps behind its leader (m).
    pub following_gap: f64,
    /// Lead after which a passed car interacts with its passer again (m).
    pub swap_gap: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            dt: 0.1,
            horizon_laps: 2.0,
            influence: 100.0,
            proximity: 10.0,
            following_gap: 5.0,
            swap_gap: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub car: u32,
    pub class: Class,
    /// Cumulative arc position (m); the lap is `floor(s / length)`.
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RaceState {
    pub t: f64,
    pub cars: Vec<CarState>,
}

impl RaceState {
    pub fn validate(&self, length: f64) -> Result<()> {
        let mut seen: Vec<f64> = self.cars.iter().map(|c| c.s.rem_euclid(length)).collect();
        seen.sort_by(f64::total_cmp);
        if seen.windows(2).any(|w| (w[1] - w[0]).abs() < 1e-9) {
            return Err(Error::invalid("initial positions must be distinct"));
        }
        let mut ids: Vec<u32> = self.cars.iter().map(|c| c.car).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate car number in race state"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Overtake,
    Follow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    /// Position of the follower when the decision was taken.
    pub s: f64,
    pub section: usize,
    pub follower: u32,
    pub leader: u32,
    pub outcome: Outcome,
    pub u: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub seed: u64,
    pub dt: f64,
    pub length: f64,
    pub cars: Vec<CarState>,
    /// `positions[i][k]` is car `i` at time `k * dt` after the start.
    pub positions: Vec<Vec<f64>>,
    /// Sector times drawn for each car, one triple per lap started.
    pub drawn: Vec<Vec<[f64; 3]>>,
    pub events: Vec<Event>,
    /// Decisions that met a pair/section without probability data.
    pub missing_p: usize,
}

impl SimTrace {
    pub fn steps(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    pub fn duration(&self) -> f64 {
        (self.steps().saturating_sub(1)) as f64 * self.dt
    }

    /// Position of car `i` at time `t`, interpolated and clamped to the horizon.
    pub fn position(&self, i: usize, t: f64) -> f64 {
        let p = &self.positions[i];
        let x = (t / self.dt).max(0.0);
        let k = x.floor() as usize;
        if k + 1 >= p.len() {
            return *p.last().unwrap();
        }
        let f = x - k as f64;
        p[k] + f * (p[k + 1] - p[k])
    }

    pub fn final_state(&self, t0: f64) -> RaceState {
        RaceState {
            t: t0 + self.duration(),
            cars: self
                .cars
                .iter()
                .zip(&self.positions)
                .map(|(c, p)| CarState {
                    s: *p.last().unwrap(),
                    ..*c
                })
                .collect(),
        }
    }

    pub fn write_positions<W: Write>(&self, trace: usize, every: usize, mut sink: W) -> Result<()> {
        let every = every.max(1);
        for k in (0..self.steps()).step_by(every) {
            for (i, c) in self.cars.iter().enumerate() {
                writeln!(
                    sink,
                    "{trace},{},{},{}",
                    fmt_f(k as f64 * self.dt, 3),
                    c.car,
                    fmt_f(self.positions[i][k], 3)
                )?;
            }
        }
        Ok(())
    }

    pub fn write_events<W: Write>(&self, trace: usize, mut sink: W) -> Result<()> {
        for e in &self.events {
            writeln!(
                sink,
                "{trace},{},{},{},{},{},{},{},{}",
                fmt_f(e.t, 3),
                fmt_f(e.s, 3),
                e.section,
                e.follower,
                e.leader,
                match e.outcome {
                    Outcome::Overtake => "overtake",
                    Outcome::Follow => "follow",
                },
                e.u,
                e.p
            )?;
        }
        Ok(())
    }
}

pub const POSITIONS_HEADER: &str = "trace,t,car,s";
pub const EVENTS_HEADER: &str = "trace,t,s,section,follower,leader,outcome,u,p";

/// With-replacement draw of one free lap.
pub fn sample_free_lap<R: Rng>(car: u32, free: &CarFreeTimes, rng: &mut R) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for (i, t) in out.iter_mut().enumerate() {
        let pool = &free.times[i];
        if pool.is_empty() {
            return Err(Error::EmptyDistribution { car, sector: i + 1 });
        }
        *t = pool[rng.gen_range(0..pool.len())];
    }
    Ok(out)
}

/// Everything the simulator needs besides the initial state.
#[derive(Debug, Clone)]
pub struct McModel<'a> {
    pub reference: &'a ReferenceProfile,
    pub free: &'a FreeSectorTimes,
    pub table: &'a OvertakingTable,
    pub sections: SectionMap,
    pub config: McConfig,
}

struct Runner {
    lap: u64,
    timeline: LapTimeline,
    upcoming: Option<([f64; 3], LapTimeline)>,
    /// Index of a car ignored as leader until passed by `swap_gap`.
    ignore: Vec<usize>,
}

impl<'a> McModel<'a> {
    pub fn length(&self) -> f64 {
        self.reference.length()
    }

    pub fn horizon(&self) -> f64 {
        self.config.horizon_laps * self.reference.lap_time()
    }

    fn check(&self, initial: &RaceState) -> Result<()> {
        if !(self.config.dt > 0.0) || !(self.config.horizon_laps > 0.0) {
            return Err(Error::invalid("dt and horizon_laps must be positive"));
        }
        initial.validate(self.length())?;
        for c in &initial.cars {
            let free = self
                .free
                .cars
                .get(&c.car)
                .ok_or(Error::EmptyDistribution { car: c.car, sector: 1 })?;
            for i in 0..3 {
                if free.times[i].is_empty() {
                    return Err(Error::EmptyDistribution { car: c.car, sector: i + 1 });
                }
            }
        }
        Ok(())
    }

    fn draw_lap(&self, car: u32, rng: &mut ChaCha8Rng) -> Result<([f64; 3], LapTimeline)> {
        let t = sample_free_lap(car, &self.free.cars[&car], rng)?;
        Ok((t, LapTimeline::new(self.reference, t)?))
    }

    /// Position reached after `dt` of free driving from `s`.
    fn free_advance(
        &self,
        car: u32,
        r: &mut Runner,
        drawn: &mut Vec<[f64; 3]>,
        s: f64,
        dt: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        let l = self.length();
        let within = s - r.lap as f64 * l;
        let tau = r.timeline.time_at(within) + dt;
        if tau <= r.timeline.duration() {
            return Ok(r.lap as f64 * l + r.timeline.position_at(tau).max(within));
        }
        if r.upcoming.is_none() {
            let d = self.draw_lap(car, rng)?;
            drawn.push(d.0);
            r.upcoming = Some(d);
        }
        let rest = tau - r.timeline.duration();
        let next = &r.upcoming.as_ref().unwrap().1;
        // a lap never takes less than one step, so one lap change suffices
        Ok((r.lap + 1) as f64 * l + next.position_at(rest.min(next.duration())))
    }

    /// One trace from `initial`.
    pub fn simulate(&self, initial: &RaceState, seed: u64) -> Result<SimTrace> {
        self.check(initial)?;
        let cfg = &self.config;
        let l = self.length();
        let n = initial.cars.len();
        let steps = (self.horizon() / cfg.dt).ceil() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut runners = Vec::with_capacity(n);
        let mut drawn = vec![Vec::new(); n];
        for (i, c) in initial.cars.iter().enumerate() {
            let (t, timeline) = self.draw_lap(c.car, &mut rng)?;
            drawn[i].push(t);
            runners.push(Runner {
                lap: (c.s / l).floor() as u64,
                timeline,
                upcoming: None,
                ignore: Vec::new(),
            });
        }
        let mut pos: Vec<f64> = initial.cars.iter().map(|c| c.s).collect();
        let mut positions: Vec<Vec<f64>> = pos.iter().map(|p| {
            let mut v = Vec::with_capacity(steps + 1);
            v.push(*p);
            v
        }).collect();
        let mut events = Vec::new();
        let mut missing_p = 0;

        for k in 1..=steps {
            let t = k as f64 * cfg.dt;
            let old = pos.clone();
            // front to back by lap position
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|a, b| {
                (old[*b].rem_euclid(l))
                    .total_cmp(&old[*a].rem_euclid(l))
                    .then(a.cmp(b))
            });
            let mut moved = vec![false; n];
            for &i in &order {
                let car = initial.cars[i];
                let free = self.free_advance(car.car, &mut runners[i], &mut drawn[i], old[i], cfg.dt, &mut rng)?;
                // release passed cars once clear
                let ignore: Vec<usize> = runners[i]
                    .ignore
                    .iter()
                    .copied()
                    .filter(|j| {
                        let lead = rel(old[*j], old[i], l);
                        lead < cfg.swap_gap
                    })
                    .collect();
                runners[i].ignore = ignore;
                let leader = (0..n)
                    .filter(|j| *j != i && !runners[i].ignore.contains(j) && !runners[*j].ignore.contains(&i))
                    .map(|j| (j, (old[j] - old[i]).rem_euclid(l)))
                    .filter(|(_, g)| *g > 0.0 && *g <= cfg.influence)
                    .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                let mut next = free;
                if let Some((j, gap)) = leader {
                    let lead_now = if moved[j] { pos[j] } else { old[j] };
                    let advance_j = lead_now - old[j];
                    let cap = old[i] + (gap + advance_j - cfg.following_gap).max(0.0);
                    if free > cap {
                        next = cap;
                        let (sec_old, sec_new) = (self.sections.id_of(old[i]), self.sections.id_of(cap));
                        let crossed = sec_old != sec_new || (cap / l).floor() != (old[i] / l).floor();
                        if crossed && gap <= cfg.proximity {
                            let leader_car = initial.cars[j];
                            let p = match self.table.p(car.class, leader_car.class, sec_new) {
                                Some(p) => p,
                                None => {
                                    missing_p += 1;
                                    0.0
                                }
                            };
                            let u: f64 = rng.gen();
                            let outcome = if u < p {
                                runners[i].ignore.push(j);
                                next = free;
                                Outcome::Overtake
                            } else {
                                Outcome::Follow
                            };
                            events.push(Event {
                                t,
                                s: cap,
                                section: sec_new,
                                follower: car.car,
                                leader: leader_car.car,
                                outcome,
                                u,
                                p,
                            });
                        }
                    }
                }
                next = next.max(old[i]);
                let r = &mut runners[i];
                if (next / l).floor() as u64 > r.lap {
                    r.lap += 1;
                    let (_, tl) = r.upcoming.take().expect("lap drawn before crossing");
                    r.timeline = tl;
                }
                pos[i] = next;
                moved[i] = true;
            }
            for i in 0..n {
                positions[i].push(pos[i]);
            }
        }
        Ok(SimTrace {
            seed,
            dt: cfg.dt,
            length: l,
            cars: initial.cars.clone(),
            positions,
            drawn,
            events,
            missing_p,
        })
    }

    /// `n_sims` traces, trace `i` seeded with `base_seed ^ i`, mapped by `f`
    /// as they complete. Results are in index order.
    pub fn run_batch_with<T, F>(&self, initial: &RaceState, n_sims: usize, base_seed: u64, f: F) -> Vec<Result<T>>
    where
        T: Send,
        F: Fn(usize, SimTrace) -> T + Sync,
    {
        let missing = AtomicUsize::new(0);
        let out = (0..n_sims)
            .into_par_iter()
            .map(|i| {
                let tr = self.simulate(initial, trace_seed(base_seed, i))?;
                missing.fetch_add(tr.missing_p, Ordering::Relaxed);
                Ok(f(i, tr))
            })
            .collect();
        let m = missing.into_inner();
        if m > 0 {
            log::debug!("{m} overtaking decisions had no probability data and used p = 0");
        }
        out
    }

    pub fn run_batch(&self, initial: &RaceState, n_sims: usize, base_seed: u64) -> Result<Vec<SimTrace>> {
        if n_sims == 0 {
            return Err(Error::invalid("n_sims must be at least 1"));
        }
        self.run_batch_with(initial, n_sims, base_seed, |_, t| t)
            .into_iter()
            .collect()
    }
}

/// Signed distance by which `a` leads `b`, wrapped to `(-L/2, L/2]`.
fn rel(b: f64, a: f64, l: f64) -> f64 {
    let d = (a - b).rem_euclid(l);
    if d > 0.5 * l {
        d - l
    } else {
        d
    }
}

pub fn trace_seed(base_seed: u64, i: usize) -> u64 {
    base_seed ^ i as u64
}

/// Per-class counts of decisions and successes across a batch, keyed by
/// (follower class, leader class, section).
pub fn overtake_rates(traces: &[SimTrace]) -> BTreeMap<(Class, Class, usize), (usize, usize)> {
    let mut out = BTreeMap::new();
    for t in traces {
        let class: BTreeMap<u32, Class> = t.cars.iter().map(|c| (c.car, c.class)).collect();
        for e in &t.events {
            let entry = out
                .entry((class[&e.follower], class[&e.leader], e.section))
                .or_insert((0, 0));
            entry.0 += (e.outcome == Outcome::Overtake) as usize;
            entry.1 += 1;
        }
    }
    out
}
