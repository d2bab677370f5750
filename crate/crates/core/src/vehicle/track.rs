use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::table::{fmt_f, split_comment_header};
use crate::{Error, Result};

/// One grid point of the circuit. The point stands for the interval
/// `[s, s + delta_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub s: f64,
    /// Ground slope (rad).
    pub slope: f64,
    /// Curve radius (m); `f64::INFINITY` on straights.
    pub radius: f64,
    pub section: usize,
    pub sector: usize,
    pub region: usize,
    pub is_straight: bool,
    pub low_speed_curve: bool,
    pub high_speed_curve: bool,
}

/// Spatially discretised circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackGeometry {
    pub delta_s: f64,
    pub length: f64,
    pub points: Vec<TrackPoint>,
}

/// Start positions of a set of contiguous labelled blocks (sections, sectors).
#[derive(Debug, Clone, PartialEq)]
pub struct SectionMap {
    /// `starts[i]` is the first position of block `i + 1`.
    pub starts: Vec<f64>,
    pub length: f64,
}

impl SectionMap {
    pub fn new(starts: Vec<f64>, length: f64) -> Result<Self> {
        if starts.is_empty() || starts[0] != 0.0 {
            return Err(Error::invalid("section map must start at 0"));
        }
        if starts.windows(2).any(|w| w[1] <= w[0]) || *starts.last().unwrap() >= length {
            return Err(Error::invalid("section starts must increase within the lap"));
        }
        Ok(SectionMap { starts, length })
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// 1-based id of the block containing lap position `s` (taken modulo the lap).
    pub fn id_of(&self, s: f64) -> usize {
        let s = s.rem_euclid(self.length);
        self.starts.partition_point(|&b| b <= s).max(1)
    }

    /// End position of block `id` (1-based).
    pub fn end_of(&self, id: usize) -> f64 {
        self.starts.get(id).copied().unwrap_or(self.length)
    }

    pub fn start_of(&self, id: usize) -> f64 {
        self.starts[id - 1]
    }
}

/// A straight of the circuit, numbered in lap order from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Straight {
    pub id: usize,
    pub first: usize,
    /// One past the last point.
    pub end: usize,
}

impl TrackGeometry {
    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if n == 0 {
            return Err(Error::invalid("track geometry has no points"));
        }
        if !(self.delta_s > 0.0) {
            return Err(Error::invalid("delta_s must be positive"));
        }
        let tol = 1e-6 * self.delta_s;
        for (k, p) in self.points.iter().enumerate() {
            if (p.s - k as f64 * self.delta_s).abs() > tol.max(1e-9 * p.s.abs()) {
                return Err(Error::GridMismatch(format!(
                    "point {k} at s = {} breaks the uniform {} m grid",
                    p.s, self.delta_s
                )));
            }
            if !(p.radius > 0.0) {
                return Err(Error::invalid(format!("point {k}: radius must be positive")));
            }
        }
        if (n as f64 * self.delta_s - self.length).abs() > tol {
            return Err(Error::GridMismatch(format!(
                "length {} differs from {} points x {} m",
                self.length, n, self.delta_s
            )));
        }
        check_blocks(self.points.iter().map(|p| p.section), "section")?;
        check_blocks(self.points.iter().map(|p| p.sector), "sector")?;
        check_blocks(self.points.iter().map(|p| p.region), "region")?;
        if self.n_sectors() != 3 {
            return Err(Error::invalid("a lap has exactly three sectors"));
        }
        for k in 0..n {
            let starts_region = k == 0 || self.points[k].region != self.points[k - 1].region;
            if starts_region {
                let p = &self.points[k];
                let prev_straight = k > 0 && self.points[k - 1].is_straight;
                if !p.is_straight || prev_straight {
                    return Err(Error::invalid(format!(
                        "region {} must begin at the first point of a straight",
                        p.region
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_sections(&self) -> usize {
        self.points.last().map(|p| p.section).unwrap_or(0)
    }

    pub fn n_sectors(&self) -> usize {
        self.points.last().map(|p| p.sector).unwrap_or(0)
    }

    pub fn n_regions(&self) -> usize {
        self.points.last().map(|p| p.region).unwrap_or(0)
    }

    fn block_starts(&self, key: impl Fn(&TrackPoint) -> usize) -> Vec<f64> {
        let mut starts = Vec::new();
        let mut last = 0;
        for p in &self.points {
            if key(p) != last {
                starts.push(p.s);
                last = key(p);
            }
        }
        starts
    }

    pub fn section_map(&self) -> SectionMap {
        SectionMap {
            starts: self.block_starts(|p| p.section),
            length: self.length,
        }
    }

    pub fn sector_map(&self) -> SectionMap {
        SectionMap {
            starts: self.block_starts(|p| p.sector),
            length: self.length,
        }
    }

    /// Index of the first point of each region.
    pub fn region_starts(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut last = 0;
        for (k, p) in self.points.iter().enumerate() {
            if p.region != last {
                out.push(k);
                last = p.region;
            }
        }
        out
    }

    pub fn straights(&self) -> Vec<Straight> {
        let mut out = Vec::new();
        let n = self.points.len();
        let mut k = 0;
        while k < n {
            if self.points[k].is_straight {
                let first = k;
                while k < n && self.points[k].is_straight {
                    k += 1;
                }
                out.push(Straight {
                    id: out.len() + 1,
                    first,
                    end: k,
                });
            } else {
                k += 1;
            }
        }
        out
    }

    /// Grid index holding lap position `s`.
    pub fn index_of(&self, s: f64) -> usize {
        let s = s.rem_euclid(self.length);
        ((s / self.delta_s).floor() as usize).min(self.points.len() - 1)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (meta, body) = split_comment_header(text);
        let get = |key: &str| -> Result<f64> {
            meta.iter()
                .find(|(k, _)| k == key)
                .ok_or_else(|| Error::invalid(format!("geometry header lacks {key}")))?
                .1
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("geometry header {key} is not a number")))
        };
        let delta_s = get("delta_s")?;
        let length = get("length")?;
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(body.as_bytes());
        let mut points = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| Error::Parse {
                row,
                msg: e.to_string(),
            })?;
            let f = |j: usize| -> Result<f64> {
                let raw = rec.get(j).unwrap_or("");
                match raw {
                    "inf" | "Inf" | "INF" => Ok(f64::INFINITY),
                    _ => raw.parse::<f64>().map_err(|_| Error::Parse {
                        row,
                        msg: format!("column {j} = {raw:?} is not a number"),
                    }),
                }
            };
            let u = |j: usize| -> Result<usize> {
                rec.get(j).unwrap_or("").parse::<usize>().map_err(|_| Error::Parse {
                    row,
                    msg: format!("column {j} is not an integer"),
                })
            };
            let b = |j: usize| -> Result<bool> {
                match rec.get(j).unwrap_or("") {
                    "1" | "true" => Ok(true),
                    "0" | "false" => Ok(false),
                    other => Err(Error::Parse {
                        row,
                        msg: format!("column {j} = {other:?} is not a boolean"),
                    }),
                }
            };
            points.push(TrackPoint {
                s: f(0)?,
                slope: f(1)?,
                radius: f(2)?,
                section: u(3)?,
                sector: u(4)?,
                region: u(5)?,
                is_straight: b(6)?,
                low_speed_curve: b(7)?,
                high_speed_curve: b(8)?,
            });
        }
        let g = TrackGeometry {
            delta_s,
            length,
            points,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn write<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "# delta_s={}", self.delta_s)?;
        writeln!(sink, "# length={}", self.length)?;
        writeln!(
            sink,
            "s,alpha,r,section,sector,region,is_straight,low_speed,high_speed"
        )?;
        for p in &self.points {
            let r = if p.radius.is_finite() {
                fmt_f(p.radius, 3)
            } else {
                "inf".to_string()
            };
            writeln!(
                sink,
                "{},{},{},{},{},{},{},{},{}",
                fmt_f(p.s, 3),
                fmt_f(p.slope, 6),
                r,
                p.section,
                p.sector,
                p.region,
                p.is_straight as u8,
                p.low_speed_curve as u8,
                p.high_speed_curve as u8
            )?;
        }
        Ok(())
    }

    /// Re-grids the circuit at `delta_s`. Labels and radius come from the
    /// source point containing each new cell's midpoint; slope is averaged.
    pub fn resample(&self, delta_s: f64) -> Result<TrackGeometry> {
        let n = (self.length / delta_s).round() as usize;
        if n == 0 || ((n as f64) * delta_s - self.length).abs() > 1e-6 * delta_s {
            return Err(Error::GridMismatch(format!(
                "length {} is not a multiple of {delta_s} m",
                self.length
            )));
        }
        let mut points = Vec::with_capacity(n);
        for k in 0..n {
            let a = k as f64 * delta_s;
            let b = a + delta_s;
            let mid = self.points[self.index_of(a + 0.5 * delta_s)];
            let i0 = self.index_of(a);
            let i1 = (((b / self.delta_s).ceil() as usize).min(self.points.len())).max(i0 + 1);
            let mut slope = 0.0;
            for i in i0..i1 {
                let lo = (i as f64 * self.delta_s).max(a);
                let hi = ((i + 1) as f64 * self.delta_s).min(b);
                if hi > lo {
                    slope += self.points[i].slope * (hi - lo);
                }
            }
            points.push(TrackPoint {
                s: a,
                slope: slope / delta_s,
                ..mid
            });
        }
        // keep the region-starts-on-straights rule at block boundaries
        let mut out = TrackGeometry {
            delta_s,
            length: self.length,
            points,
        };
        fix_region_starts(&mut out);
        Ok(out)
    }
}

fn fix_region_starts(g: &mut TrackGeometry) {
    for k in 1..g.points.len() {
        if g.points[k].region != g.points[k - 1].region {
            let straight_start = g.points[k].is_straight && !g.points[k - 1].is_straight;
            if !straight_start && g.points[k].is_straight {
                // the straight began one coarse cell earlier; move the boundary
                let mut j = k;
                while j > 0 && g.points[j - 1].is_straight {
                    g.points[j - 1].region = g.points[k].region;
                    j -= 1;
                }
            }
        }
    }
}

fn check_blocks(ids: impl Iterator<Item = usize>, what: &str) -> Result<()> {
    let mut expected = 1;
    let mut current = 0;
    for id in ids {
        if id == current {
            continue;
        }
        if id != expected {
            return Err(Error::invalid(format!(
                "{what} ids must form contiguous blocks 1..n in lap order (found {id}, expected {expected})"
            )));
        }
        current = id;
        expected += 1;
    }
    Ok(())
}

/// Piece of a circuit layout used by [`TrackBuilder`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    Straight { length: f64 },
    Curve { length: f64, radius: f64 },
}

impl Segment {
    pub fn length(&self) -> f64 {
        match *self {
            Segment::Straight { length } | Segment::Curve { length, .. } => length,
        }
    }
}

/// Builds a [`TrackGeometry`] from a list of straights and constant-radius curves.
///
/// Regions start at every straight; sections split straights longer than
/// `max_section` into equal pieces and give each curve its own section.
/// Sectors break at the segment boundaries closest to one and two thirds
/// of the lap.
#[derive(Debug, Clone)]
pub struct TrackBuilder {
    pub segments: Vec<Segment>,
    pub delta_s: f64,
    pub max_section: f64,
    /// Slope as a function of lap position.
    pub slope: fn(f64, f64) -> f64,
}

fn flat(_s: f64, _length: f64) -> f64 {
    0.0
}

impl TrackBuilder {
    pub fn new(segments: Vec<Segment>, delta_s: f64) -> Self {
        TrackBuilder {
            segments,
            delta_s,
            max_section: 250.0,
            slope: flat,
        }
    }

    pub fn build(&self) -> Result<TrackGeometry> {
        if !matches!(self.segments.first(), Some(Segment::Straight { .. })) {
            return Err(Error::invalid("a layout must start with a straight"));
        }
        let total: f64 = self.segments.iter().map(Segment::length).sum();
        let n = (total / self.delta_s).round() as usize;
        if ((n as f64) * self.delta_s - total).abs() > 1e-6 {
            return Err(Error::GridMismatch(format!(
                "layout length {total} is not a multiple of {}",
                self.delta_s
            )));
        }
        // segment boundaries and sector cut positions
        let mut bounds = vec![0.0];
        for seg in &self.segments {
            bounds.push(bounds.last().unwrap() + seg.length());
        }
        let inner = &bounds[1..bounds.len() - 1];
        let cut = |frac: f64| -> f64 {
            let target = frac * total;
            if inner.len() < 2 {
                return (target / self.delta_s).round() * self.delta_s;
            }
            *inner
                .iter()
                .min_by(|a, b| (*a - target).abs().total_cmp(&(*b - target).abs()))
                .unwrap()
        };
        let (c1, c2) = (cut(1.0 / 3.0), cut(2.0 / 3.0));

        let mut points = Vec::with_capacity(n);
        let mut section = 0;
        let mut region = 0;
        for (i, seg) in self.segments.iter().enumerate() {
            let start = bounds[i];
            let (pieces, radius, straight) = match *seg {
                Segment::Straight { length } => {
                    region += 1;
                    ((length / self.max_section).ceil().max(1.0) as usize, f64::INFINITY, true)
                }
                Segment::Curve { radius, .. } => (1, radius, false),
            };
            let piece_len = seg.length() / pieces as f64;
            let first = (start / self.delta_s).round() as usize;
            let last = (bounds[i + 1] / self.delta_s).round() as usize;
            let base_section = section;
            section += pieces;
            for k in first..last {
                let s = k as f64 * self.delta_s;
                let piece = (((s - start) / piece_len).floor() as usize).min(pieces - 1);
                let sector = if s < c1 {
                    1
                } else if s < c2 {
                    2
                } else {
                    3
                };
                points.push(TrackPoint {
                    s,
                    slope: (self.slope)(s, total),
                    radius,
                    section: base_section + piece + 1,
                    sector,
                    region,
                    is_straight: straight,
                    low_speed_curve: false,
                    high_speed_curve: false,
                });
            }
        }
        let g = TrackGeometry {
            delta_s: self.delta_s,
            length: n as f64 * self.delta_s,
            points,
        };
        g.validate()?;
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrackGeometry {
        TrackBuilder::new(
            vec![
                Segment::Straight { length: 300.0 },
                Segment::Curve {
                    length: 100.0,
                    radius: 80.0,
                },
                Segment::Straight { length: 200.0 },
                Segment::Curve {
                    length: 100.0,
                    radius: 60.0,
                },
                Segment::Straight { length: 100.0 },
                Segment::Curve {
                    length: 200.0,
                    radius: 150.0,
                },
            ],
            2.0,
        )
        .build()
        .unwrap()
    }

    #[test]
    fn builder_labels_blocks() {
        let g = small();
        assert_eq!(g.n_points(), 500);
        assert_eq!(g.length, 1000.0);
        assert_eq!(g.n_regions(), 3);
        assert_eq!(g.n_sectors(), 3);
        // 300 m straight -> 2 sections, then curve, 200 m straight, curve, 100 m, curve
        assert_eq!(g.n_sections(), 7);
        let st = g.straights();
        assert_eq!(st.len(), 3);
        assert_eq!(st[1].first, 200);
        assert_eq!(g.region_starts(), vec![0, 200, 350]);
    }

    #[test]
    fn text_round_trip() {
        let g = small();
        let mut buf = Vec::new();
        g.write(&mut buf).unwrap();
        let back = TrackGeometry::parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn non_uniform_grid_is_rejected() {
        let mut g = small();
        g.points[10].s += 0.5;
        assert!(matches!(g.validate(), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn region_must_start_on_straight() {
        let mut g = small();
        for p in g.points.iter_mut().skip(150).take(50) {
            p.region = 2;
        }
        assert!(g.validate().is_err());
    }

    #[test]
    fn section_lookup() {
        let g = small();
        let m = g.section_map();
        assert_eq!(m.id_of(0.0), 1);
        assert_eq!(m.id_of(149.9), 1);
        assert_eq!(m.id_of(150.0), 2);
        assert_eq!(m.id_of(1000.0), 1);
        assert_eq!(m.end_of(7), 1000.0);
    }

    #[test]
    fn resample_to_five_metres() {
        let g = small();
        let r = g.resample(5.0).unwrap();
        assert_eq!(r.n_points(), 200);
        r.validate().unwrap();
        assert_eq!(r.n_regions(), 3);
        assert!(g.resample(7.0).is_err());
    }
}
