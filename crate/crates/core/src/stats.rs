//! Competitor statistics: speed reconstruction from sector times, race
//! positions, free sector-time distributions and overtaking probabilities.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{Class, SectorTimeRecord};
use crate::table::fmt_f;
use crate::vehicle::{LapResult, SectionMap, TrackGeometry};
use crate::{Error, Result};

pub const DEFAULT_GAP_THRESHOLD: f64 = 100.0;
pub const DEFAULT_PROXIMITY: f64 = 10.0;
pub const DEFAULT_DT: f64 = 0.1;

/// Speed samples of one reference lap. Sample `k` holds the speed over
/// `(positions[k-1], positions[k]]`, with an implicit start at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceProfile {
    pub positions: Vec<f64>,
    pub speeds: Vec<f64>,
    /// End position of each sector; the last equals the lap length.
    pub sector_ends: [f64; 3],
    pub sector_times: [f64; 3],
    /// Index of the first sample of each sector, plus the sample count.
    bounds: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    sector_ends: [f64; 3],
    sector_times: [f64; 3],
}

impl ReferenceProfile {
    /// Builds a profile and derives its sector times by integrating 1/v.
    pub fn new(positions: Vec<f64>, speeds: Vec<f64>, sector_ends: [f64; 3]) -> Result<Self> {
        if positions.is_empty() || positions.len() != speeds.len() {
            return Err(Error::invalid(
                "reference profile needs matching, nonempty position and speed columns",
            ));
        }
        if !(positions[0] > 0.0) || positions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "reference positions must be positive and strictly increasing",
            ));
        }
        if let Some(k) = speeds.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("reference speed at sample {k} is not positive")));
        }
        let length = *positions.last().unwrap();
        if (sector_ends[2] - length).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "last sector ends at {} but the profile ends at {length}",
                sector_ends[2]
            )));
        }
        let mut bounds = [0; 4];
        for (i, end) in sector_ends.iter().enumerate() {
            let idx = positions.partition_point(|s| *s < end - 1e-6);
            if idx >= positions.len() || (positions[idx] - end).abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "sector {} end {end} is not a sample position",
                    i + 1
                )));
            }
            bounds[i + 1] = idx + 1;
        }
        if bounds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("every sector needs at least one sample"));
        }
        let mut p = ReferenceProfile {
            positions,
            speeds,
            sector_ends,
            sector_times: [0.0; 3],
            bounds,
        };
        p.sector_times = p.integrate(&p.speeds);
        Ok(p)
    }

    /// Profile of a simulated lap: cell `k` of the grid becomes sample `k`.
    pub fn from_lap(lap: &LapResult, geometry: &TrackGeometry) -> Result<Self> {
        let ds = geometry.delta_s;
        let positions = (1..=lap.speed.len()).map(|k| k as f64 * ds).collect();
        let map = geometry.sector_map();
        let ends = [map.end_of(1), map.end_of(2), map.end_of(3)];
        Self::new(positions, lap.speed.clone(), ends)
    }

    pub fn length(&self) -> f64 {
        self.sector_ends[2]
    }

    pub fn lap_time(&self) -> f64 {
        self.sector_times.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn max_speed(&self) -> f64 {
        self.speeds.iter().cloned().fold(0.0, f64::max)
    }

    fn start_of(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.positions[k - 1]
        }
    }

    /// Sector (0-based) of every sample.
    pub fn sample_sectors(&self) -> impl Iterator<Item = usize> + '_ {
        (0..3).flat_map(move |i| std::iter::repeat(i).take(self.bounds[i + 1] - self.bounds[i]))
    }

    /// Traversal time of each sector for speeds given on this profile's samples.
    pub fn integrate(&self, speeds: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, t) in out.iter_mut().enumerate() {
            for k in self.bounds[i]..self.bounds[i + 1] {
                *t += (self.positions[k] - self.start_of(k)) / speeds[k];
            }
        }
        out
    }

    /// Reads `s_m,v_mps` rows plus the TOML sidecar holding the sector data.
    pub fn parse(profile: &str, sidecar: &str) -> Result<Self> {
        let side: Sidecar = toml::from_str(sidecar)?;
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(profile.as_bytes());
        let mut positions = Vec::new();
        let mut speeds = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let field = |j: usize| -> Result<f64> {
                row.get(j)
                    .and_then(|x| x.parse::<f64>().ok())
                    .ok_or_else(|| Error::Parse {
                        row: i + 1,
                        msg: format!("column {} is not a number", j + 1),
                    })
            };
            positions.push(field(0)?);
            speeds.push(field(1)?);
        }
        let p = Self::new(positions, speeds, side.sector_ends)?;
        for i in 0..3 {
            let rel = (p.sector_times[i] - side.sector_times[i]).abs() / side.sector_times[i];
            if !(rel <= 0.01) {
                return Err(Error::invalid(format!(
                    "sector {} time {} disagrees with the integrated profile ({})",
                    i + 1,
                    side.sector_times[i],
                    p.sector_times[i]
                )));
            }
        }
        Ok(p)
    }

    /// Profile table and sidecar text.
    pub fn write(&self) -> Result<(String, String)> {
        let mut body = String::from("s_m,v_mps\n");
        for (s, v) in self.positions.iter().zip(&self.speeds) {
            body.push_str(&format!("{},{}\n", fmt_f(*s, 3), v));
        }
        let side = toml::to_string(&Sidecar {
            sector_ends: self.sector_ends,
            sector_times: self.sector_times,
        })?;
        Ok((body, side))
    }
}

fn check_times(times: [f64; 3]) -> Result<()> {
    if let Some(i) = times.iter().position(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err(Error::invalid(format!(
            "sector time {} must be positive, got {}",
            i + 1,
            times[i]
        )));
    }
    Ok(())
}

/// Speed profile of a car with the given sector times: each sector of the
/// reference is scaled by `T_ref / T`, so a slower sector gives lower speeds.
pub fn reconstruct_speed(reference: &ReferenceProfile, times: [f64; 3]) -> Result<Vec<f64>> {
    check_times(times)?;
    let ratio: Vec<f64> = (0..3).map(|i| reference.sector_times[i] / times[i]).collect();
    Ok(reference
        .speeds
        .iter()
        .zip(reference.sample_sectors())
        .map(|(v, i)| v * ratio[i])
        .collect())
}

/// Position-versus-time law of one lap driven with given sector times.
#[derive(Debug, Clone, PartialEq)]
pub struct LapTimeline {
    /// Sample boundaries, starting at 0 and ending at the lap length.
    pub s: Vec<f64>,
    /// Time at each boundary.
    pub t: Vec<f64>,
}

impl LapTimeline {
    pub fn new(reference: &ReferenceProfile, times: [f64; 3]) -> Result<Self> {
        let speeds = reconstruct_speed(reference, times)?;
        let mut s = Vec::with_capacity(speeds.len() + 1);
        let mut t = Vec::with_capacity(speeds.len() + 1);
        s.push(0.0);
        t.push(0.0);
        for (k, v) in speeds.iter().enumerate() {
            let len = reference.positions[k] - reference.start_of(k);
            s.push(reference.positions[k]);
            t.push(t[k] + len / v);
        }
        Ok(LapTimeline { s, t })
    }

    pub fn duration(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn length(&self) -> f64 {
        *self.s.last().unwrap()
    }

    /// Lap position reached `t` seconds after the lap start (clamped).
    pub fn position_at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if t >= self.duration() {
            return self.length();
        }
        let i = self.t.partition_point(|x| *x <= t);
        let (t0, t1) = (self.t[i - 1], self.t[i]);
        let (s0, s1) = (self.s[i - 1], self.s[i]);
        s0 + (s1 - s0) * (t - t0) / (t1 - t0)
    }

    /// Time from the lap start at which position `s` is reached (clamped).
    pub fn time_at(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if s >= self.length() {
            return self.duration();
        }
        let i = self.s.partition_point(|x| *x <= s);
        let (t0, t1) = (self.t[i - 1], self.t[i]);
        let (s0, s1) = (self.s[i - 1], self.s[i]);
        t0 + (t1 - t0) * (s - s0) / (s1 - s0)
    }

    /// Speed held at lap position `s`.
    pub fn speed_at(&self, s: f64) -> f64 {
        let i = self
            .s
            .partition_point(|x| *x < s)
            .clamp(1, self.s.len() - 1);
        (self.s[i] - self.s[i - 1]) / (self.t[i] - self.t[i - 1])
    }
}

/// Cumulative (multi-lap) arc position of one car on the common clock.
/// `s[k]` is the position at time `(start + k) * dt`; `NaN` marks samples
/// where the car's position is unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct CarPositions {
    pub car: u32,
    pub class: Class,
    pub start: usize,
    pub s: Vec<f64>,
}

impl CarPositions {
    pub fn at(&self, k: usize) -> Option<f64> {
        if k < self.start {
            return None;
        }
        self.s.get(k - self.start).copied().filter(|x| !x.is_nan())
    }

    pub fn end(&self) -> usize {
        self.start + self.s.len()
    }
}

/// Race positions of every car on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RacePositions {
    pub dt: f64,
    pub length: f64,
    pub sector_ends: [f64; 3],
    pub cars: Vec<CarPositions>,
}

impl RacePositions {
    /// Chains each car's laps through the reference profile. The cumulative
    /// position during lap `n` is `(n - 1) * length + lap position`.
    pub fn from_records(
        records: &[SectorTimeRecord],
        reference: &ReferenceProfile,
        dt: f64,
    ) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::invalid("time step must be positive"));
        }
        let length = reference.length();
        let mut by_car: BTreeMap<u32, Vec<&SectorTimeRecord>> = BTreeMap::new();
        for r in records {
            by_car.entry(r.car_number).or_default().push(r);
        }
        let cars = by_car
            .into_par_iter()
            .map(|(car, mut laps)| -> Result<CarPositions> {
                laps.sort_by_key(|r| r.lap);
                let class = laps[0].class;
                let first_t = laps[0].start_time();
                let last_t = laps.last().unwrap().elapsed;
                let start = (first_t / dt).ceil().max(0.0) as usize;
                let end = (last_t / dt).floor() as usize + 1;
                let mut s = vec![f64::NAN; end.saturating_sub(start)];
                for r in &laps {
                    let tl = LapTimeline::new(reference, r.sectors())?;
                    let t0 = r.start_time();
                    let base = (r.lap as f64 - 1.0) * length;
                    let k0 = ((t0 / dt).ceil().max(0.0) as usize).max(start);
                    let k1 = ((r.elapsed / dt).floor() as usize).min(end - 1);
                    for k in k0..=k1 {
                        let t = k as f64 * dt;
                        s[k - start] = base + tl.position_at(t - t0);
                    }
                }
                Ok(CarPositions {
                    car,
                    class,
                    start,
                    s,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RacePositions {
            dt,
            length,
            sector_ends: reference.sector_ends,
            cars,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.cars.iter().map(CarPositions::end).max().unwrap_or(0)
    }

    /// On-track distance from car `i` to the nearest car ahead at sample `k`.
    pub fn gap_ahead(&self, i: usize, k: usize) -> Option<f64> {
        let own = self.cars[i].at(k)?;
        self.cars
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .filter_map(|(_, c)| c.at(k))
            .map(|o| (o - own).rem_euclid(self.length))
            .min_by(f64::total_cmp)
    }
}

/// A completed traversal of one sector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Traversal {
    pub lap: u32,
    /// 0-based sector index.
    pub sector: usize,
    pub t_in: f64,
    pub t_out: f64,
    /// Samples whose time lies within `[t_in, t_out]`.
    pub k_in: usize,
    pub k_out: usize,
}

impl Traversal {
    pub fn duration(&self) -> f64 {
        self.t_out - self.t_in
    }
}

/// Sector traversals of one car, with crossing times interpolated linearly
/// between samples. Sectors cut by missing samples are skipped.
pub fn traversals(positions: &RacePositions, car: &CarPositions) -> Vec<Traversal> {
    let l = positions.length;
    let starts = [0.0, positions.sector_ends[0], positions.sector_ends[1]];
    let dt = positions.dt;
    let mut out = Vec::new();
    // (boundary cumulative position, time, first sample at or after)
    let mut last: Option<(f64, f64, usize)> = None;
    let on_boundary = |x: f64| {
        let within = x.rem_euclid(l);
        starts.iter().any(|st| (within - st).abs() < 1e-9) || (within - l).abs() < 1e-9
    };
    for k in car.start + 1..car.end() {
        let (Some(a), Some(b)) = (car.at(k - 1), car.at(k)) else {
            last = None;
            continue;
        };
        if last.is_none() && on_boundary(a) {
            last = Some((a, (k - 1) as f64 * dt, k - 1));
        }
        if b <= a {
            continue;
        }
        let lap0 = (a / l).floor();
        for lap in [lap0, lap0 + 1.0] {
            for st in starts {
                let bnd = lap * l + st;
                if bnd > a && bnd <= b {
                    let t = (k as f64 - 1.0 + (bnd - a) / (b - a)) * dt;
                    if let Some((prev, t_prev, k_prev)) = last {
                        let lap_n = (prev / l + 1e-9).floor() as u32 + 1;
                        let within = prev - (lap_n as f64 - 1.0) * l;
                        let sector = starts.iter().rposition(|x| *x <= within + 1e-9).unwrap();
                        let k_out = if (bnd - b).abs() < 1e-12 { k } else { k - 1 };
                        out.push(Traversal {
                            lap: lap_n,
                            sector,
                            t_in: t_prev,
                            t_out: t,
                            k_in: k_prev,
                            k_out,
                        });
                    }
                    last = Some((bnd, t, k));
                }
            }
        }
    }
    out
}

/// Free sector times of one car; `times[i]` holds sector `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarFreeTimes {
    pub class: Class,
    pub times: [Vec<f64>; 3],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FreeSectorTimes {
    pub cars: BTreeMap<u32, CarFreeTimes>,
    /// (car, 1-based sector) pairs without any free traversal.
    pub flagged: Vec<(u32, usize)>,
}

impl FreeSectorTimes {
    pub fn write<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "car,class,sector,time_s")?;
        for (car, c) in &self.cars {
            for (i, ts) in c.times.iter().enumerate() {
                for t in ts {
                    writeln!(sink, "{car},{},{},{t}", c.class, i + 1)?;
                }
            }
        }
        Ok(())
    }

    pub fn parse<R: Read>(source: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let mut out = FreeSectorTimes::default();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let bad = |msg: &str| Error::Parse {
                row: i + 1,
                msg: msg.to_string(),
            };
            let car: u32 = row.get(0).and_then(|x| x.parse().ok()).ok_or_else(|| bad("car"))?;
            let class: Class = row.get(1).ok_or_else(|| bad("class"))?.parse()?;
            let sector: usize = row
                .get(2)
                .and_then(|x| x.parse().ok())
                .filter(|s| (1..=3).contains(s))
                .ok_or_else(|| bad("sector must be 1, 2 or 3"))?;
            let t: f64 = row
                .get(3)
                .and_then(|x| x.parse().ok())
                .filter(|t: &f64| *t > 0.0)
                .ok_or_else(|| bad("time must be a positive number"))?;
            out.cars
                .entry(car)
                .or_insert_with(|| CarFreeTimes {
                    class,
                    times: Default::default(),
                })
                .times[sector - 1]
                .push(t);
        }
        out.flag_empty();
        Ok(out)
    }

    fn flag_empty(&mut self) {
        self.flagged = self
            .cars
            .iter()
            .flat_map(|(car, c)| {
                (0..3)
                    .filter(|i| c.times[*i].is_empty())
                    .map(move |i| (*car, i + 1))
            })
            .collect();
    }
}

/// Collects, per car and sector, the durations of traversals during which
/// the nearest car ahead stayed at least `gap_threshold` away at every
/// sample. Only laps accepted by `retained` contribute.
pub fn extract_free_sector_times<F>(
    positions: &RacePositions,
    gap_threshold: f64,
    retained: F,
) -> FreeSectorTimes
where
    F: Fn(u32, u32) -> bool + Sync,
{
    let per_car: Vec<(u32, CarFreeTimes)> = (0..positions.cars.len())
        .into_par_iter()
        .map(|i| {
            let car = &positions.cars[i];
            let mut times: [Vec<f64>; 3] = Default::default();
            for tr in traversals(positions, car) {
                if !retained(car.car, tr.lap) {
                    continue;
                }
                let free = (tr.k_in..=tr.k_out)
                    .all(|k| positions.gap_ahead(i, k).map_or(true, |g| g >= gap_threshold));
                if free {
                    times[tr.sector].push(tr.duration());
                }
            }
            (
                car.car,
                CarFreeTimes {
                    class: car.class,
                    times,
                },
            )
        })
        .collect();
    let mut out = FreeSectorTimes {
        cars: per_car.into_iter().collect(),
        flagged: Vec::new(),
    };
    out.flag_empty();
    for (car, sector) in &out.flagged {
        log::warn!("car {car} has no free traversal of sector {sector}");
    }
    out
}

/// Class-pair overtaking counts per section.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OvertakingTable {
    pub n_sections: usize,
    /// (A, B, section) -> (passes of A on B, opportunities with A behind B).
    pub counts: BTreeMap<(Class, Class, usize), (u32, u32)>,
}

impl OvertakingTable {
    pub fn new(n_sections: usize) -> Self {
        OvertakingTable {
            n_sections,
            counts: BTreeMap::new(),
        }
    }

    /// Probability that `a` passes `b` in `section`; `None` without data.
    pub fn p(&self, a: Class, b: Class, section: usize) -> Option<f64> {
        match self.counts.get(&(a, b, section)) {
            Some(&(xi, phi)) if phi > 0 => Some(xi as f64 / phi as f64),
            _ => None,
        }
    }

    pub fn add(&mut self, a: Class, b: Class, section: usize, xi: u32, phi: u32) {
        let e = self.counts.entry((a, b, section)).or_insert((0, 0));
        e.0 += xi;
        e.1 += phi;
    }

    /// Full table including "no-data" rows, which have an empty `p`.
    pub fn write<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "class_a,class_b,section,xi,phi,p")?;
        for a in Class::ALL {
            for b in Class::ALL {
                for i in 1..=self.n_sections {
                    let (xi, phi) = self.counts.get(&(a, b, i)).copied().unwrap_or((0, 0));
                    let p = self.p(a, b, i).map(|p| p.to_string()).unwrap_or_default();
                    writeln!(sink, "{a},{b},{i},{xi},{phi},{p}")?;
                }
            }
        }
        Ok(())
    }

    pub fn parse<R: Read>(source: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let mut out = OvertakingTable::default();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let bad = |msg: &str| Error::Parse {
                row: i + 1,
                msg: msg.to_string(),
            };
            let a: Class = row.get(0).ok_or_else(|| bad("class_a"))?.parse()?;
            let b: Class = row.get(1).ok_or_else(|| bad("class_b"))?.parse()?;
            let num = |j: usize, what: &str| -> Result<u32> {
                row.get(j).and_then(|x| x.parse().ok()).ok_or_else(|| bad(what))
            };
            let section = num(2, "section")? as usize;
            let (xi, phi) = (num(3, "xi")?, num(4, "phi")?);
            if section == 0 || xi > phi {
                return Err(bad("need section >= 1 and xi <= phi"));
            }
            out.n_sections = out.n_sections.max(section);
            if phi > 0 {
                out.add(a, b, section, xi, phi);
            }
        }
        Ok(out)
    }
}

/// Signed distance from `a` to `b` along the lap, wrapped to `(-L/2, L/2]`.
fn rel_wrapped(a: f64, b: f64, l: f64) -> f64 {
    let d = (b - a).rem_euclid(l);
    if d > 0.5 * l {
        d - l
    } else {
        d
    }
}

type Key = (u32, usize);

/// Opportunities and passes of car `a` on car `b`, as sets of (lap of `a`, section).
fn scan_pair(
    pos: &RacePositions,
    a: &CarPositions,
    b: &CarPositions,
    proximity: f64,
    sections: &SectionMap,
    retained: &(dyn Fn(u32, u32) -> bool + Sync),
) -> (BTreeSet<Key>, BTreeSet<Key>) {
    let l = pos.length;
    let lap_of = |s: f64| (s / l).floor() as u32 + 1;
    let counted = |sa: f64, sb: f64| retained(a.car, lap_of(sa)) && retained(b.car, lap_of(sb));
    let mut opp = BTreeSet::new();
    let mut pass = BTreeSet::new();
    let lo = a.start.max(b.start);
    let hi = a.end().min(b.end());
    let mut prev: Option<(f64, f64, f64)> = None;
    for k in lo..hi {
        let (Some(sa), Some(sb)) = (a.at(k), b.at(k)) else {
            prev = None;
            continue;
        };
        let rel = rel_wrapped(sa, sb, l);
        if rel.abs() > proximity {
            prev = None;
            continue;
        }
        if rel > 0.0 && counted(sa, sb) {
            opp.insert((lap_of(sa), sections.id_of(sa)));
        }
        if let Some((pa, pb, prel)) = prev {
            if prel > 0.0 && rel <= 0.0 {
                let f = prel / (prel - rel);
                let xa = pa + f * (sa - pa);
                let xb = pb + f * (sb - pb);
                if counted(xa, xb) {
                    let key = (lap_of(xa), sections.id_of(xa));
                    opp.insert(key);
                    pass.insert(key);
                }
            }
        }
        prev = Some((sa, sb, rel));
    }
    (opp, pass)
}

/// Counts, for each ordered class pair and section, the (car pair, lap,
/// section) combinations in which A was within `proximity` behind B, and
/// those in which A passed B. A pass is credited to the section holding the
/// crossing point.
pub fn compute_overtaking_probabilities<F>(
    positions: &RacePositions,
    proximity: f64,
    sections: &SectionMap,
    retained: F,
) -> OvertakingTable
where
    F: Fn(u32, u32) -> bool + Sync,
{
    let n = positions.cars.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
        .collect();
    let partial: Vec<_> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (&positions.cars[i], &positions.cars[j]);
            let (opp, pass) = scan_pair(positions, a, b, proximity, sections, &retained);
            let mut local: BTreeMap<usize, (u32, u32)> = BTreeMap::new();
            for (_, sec) in &opp {
                local.entry(*sec).or_default().1 += 1;
            }
            for (_, sec) in &pass {
                local.entry(*sec).or_default().0 += 1;
            }
            (a.class, b.class, local)
        })
        .collect();
    let mut table = OvertakingTable::new(sections.len());
    for (ca, cb, local) in partial {
        for (sec, (xi, phi)) in local {
            table.add(ca, cb, sec, xi, phi);
        }
    }
    table
}
