//! Sector-time tables and spurious-lap removal.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufReader, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::table::{first_line, Delimiter};
use crate::{Error, Result};

/// Default DBSCAN radius in seconds.
pub const DEFAULT_EPS: f64 = 2.0;
/// Default DBSCAN density threshold.
pub const DEFAULT_MIN_PTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Class {
    #[serde(rename = "LMP1")]
    Lmp1,
    #[serde(rename = "LMP2")]
    Lmp2,
    #[serde(rename = "LMGTE Pro")]
    LmgtePro,
    #[serde(rename = "LMGTE Am")]
    LmgteAm,
}

impl Class {
    pub const ALL: [Class; 4] = [Class::Lmp1, Class::Lmp2, Class::LmgtePro, Class::LmgteAm];

    pub fn as_str(self) -> &'static str {
        match self {
            Class::Lmp1 => "LMP1",
            Class::Lmp2 => "LMP2",
            Class::LmgtePro => "LMGTE Pro",
            Class::LmgteAm => "LMGTE Am",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Class {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_uppercase())
            .collect();
        match norm.as_str() {
            "LMP1" => Ok(Class::Lmp1),
            "LMP2" => Ok(Class::Lmp2),
            "LMGTEPRO" => Ok(Class::LmgtePro),
            "LMGTEAM" => Ok(Class::LmgteAm),
            _ => Err(Error::invalid(format!("unknown class label {s:?}"))),
        }
    }
}

/// One row of a sector-time table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorTimeRecord {
    pub car_number: u32,
    pub lap: u32,
    pub stop_flag: Option<String>,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub elapsed: f64,
    pub class: Class,
    pub group: String,
    pub team: String,
}

impl SectorTimeRecord {
    pub fn sectors(&self) -> [f64; 3] {
        [self.s1, self.s2, self.s3]
    }

    pub fn lap_time(&self) -> f64 {
        self.s1 + self.s2 + self.s3
    }

    /// Race time at which this lap started.
    pub fn start_time(&self) -> f64 {
        self.elapsed - self.lap_time()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Column {
    Car,
    Lap,
    Stop,
    S1,
    S2,
    S3,
    Elapsed,
    Class,
    Group,
    Team,
}

fn column_for(name: &str) -> Option<Column> {
    let norm: String = name
        .trim()
        .chars()
        .filter(|c| c.is_ascii_alphanumeric() || *c == '#')
        .map(|c| c.to_ascii_lowercase())
        .collect();
    Some(match norm.as_str() {
        "#" | "car" | "carnumber" | "number" | "no" => Column::Car,
        "lap" => Column::Lap,
        "stop" => Column::Stop,
        "s1" => Column::S1,
        "s2" => Column::S2,
        "s3" => Column::S3,
        "elapsed" => Column::Elapsed,
        "class" => Column::Class,
        "group" => Column::Group,
        "team" => Column::Team,
        _ => return None,
    })
}

/// Parses a header-bearing sector-time table.
///
/// Data rows are numbered from 1 in parse errors.
pub fn parse_sector_times<R: Read>(source: R, delimiter: Delimiter) -> Result<Vec<SectorTimeRecord>> {
    let mut reader = BufReader::new(source);
    let header = first_line(&mut reader)?;
    if header.trim().is_empty() {
        return Ok(Vec::new());
    }
    let delim = delimiter.resolve(&header);
    let chained = std::io::Cursor::new(header.into_bytes()).chain(reader);
    let mut csv_reader = csv::ReaderBuilder::new()
        .delimiter(delim)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(chained);

    let headers = csv_reader.headers()?.clone();
    let mut index: BTreeMap<usize, Column> = BTreeMap::new();
    for (i, h) in headers.iter().enumerate() {
        if let Some(c) = column_for(h) {
            index.insert(i, c);
        }
    }
    let find = |c: Column| index.iter().find(|(_, v)| **v == c).map(|(k, _)| *k);
    let required = [
        Column::Car,
        Column::Lap,
        Column::S1,
        Column::S2,
        Column::S3,
        Column::Elapsed,
        Column::Class,
    ];
    for c in required {
        if find(c).is_none() {
            return Err(Error::Parse {
                row: 0,
                msg: format!("header lacks column {c:?}"),
            });
        }
    }
    let col = |c: Column| find(c);

    let mut out = Vec::new();
    for (i, rec) in csv_reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let field = |c: Column| -> &str { col(c).and_then(|k| rec.get(k)).unwrap_or("") };
        let num = |c: Column| -> Result<f64> {
            field(c).parse::<f64>().map_err(|_| Error::Parse {
                row,
                msg: format!("field {c:?} = {:?} is not a number", field(c)),
            })
        };
        let int = |c: Column| -> Result<u32> {
            field(c).parse::<u32>().map_err(|_| Error::Parse {
                row,
                msg: format!("field {c:?} = {:?} is not an integer", field(c)),
            })
        };
        let stop = field(Column::Stop);
        let record = SectorTimeRecord {
            car_number: int(Column::Car)?,
            lap: int(Column::Lap)?,
            stop_flag: (!stop.is_empty()).then(|| stop.to_string()),
            s1: num(Column::S1)?,
            s2: num(Column::S2)?,
            s3: num(Column::S3)?,
            elapsed: num(Column::Elapsed)?,
            class: field(Column::Class)
                .parse()
                .map_err(|e: Error| Error::invalid(format!("row {row}: {e}")))?,
            group: field(Column::Group).to_string(),
            team: field(Column::Team).to_string(),
        };
        if record.lap < 1 {
            return Err(Error::invalid(format!("row {row}: lap must be >= 1")));
        }
        if record.sectors().iter().any(|&s| !(s > 0.0)) || !(record.elapsed > 0.0) {
            return Err(Error::invalid(format!(
                "row {row}: sector and elapsed times must be positive"
            )));
        }
        out.push(record);
    }
    check_elapsed_monotone(&out)?;
    Ok(out)
}

fn check_elapsed_monotone(records: &[SectorTimeRecord]) -> Result<()> {
    let mut by_car: BTreeMap<u32, Vec<&SectorTimeRecord>> = BTreeMap::new();
    for r in records {
        by_car.entry(r.car_number).or_default().push(r);
    }
    for (car, mut laps) in by_car {
        laps.sort_by_key(|r| r.lap);
        for w in laps.windows(2) {
            if w[1].elapsed < w[0].elapsed {
                return Err(Error::invalid(format!(
                    "car {car}: elapsed time decreases between laps {} and {}",
                    w[0].lap, w[1].lap
                )));
            }
        }
    }
    Ok(())
}

pub const SECTOR_HEADER: &str = "#,Lap,Stop,S1,S2,S3,Elapsed,Class,Group,Team";

/// Writes records in the same comma-delimited layout that [`parse_sector_times`] reads.
pub fn write_sector_times<W: Write>(records: &[SectorTimeRecord], sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(sink);
    w.write_record(SECTOR_HEADER.split(','))?;
    for r in records {
        w.write_record([
            r.car_number.to_string(),
            r.lap.to_string(),
            r.stop_flag.clone().unwrap_or_default(),
            r.s1.to_string(),
            r.s2.to_string(),
            r.s3.to_string(),
            r.elapsed.to_string(),
            r.class.to_string(),
            r.group.clone(),
            r.team.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// DBSCAN label of a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Noise,
    Cluster(usize),
}

impl Label {
    pub fn cluster(self) -> Option<usize> {
        match self {
            Label::Cluster(c) => Some(c),
            Label::Noise => None,
        }
    }
}

/// One-dimensional DBSCAN.
///
/// A point is core when at least `min_pts` points (itself included) lie
/// within `eps`. Border points join the cluster of their nearest core point;
/// clusters are numbered by increasing value, so the result does not depend
/// on input order.
pub fn dbscan(points: &[f64], eps: f64, min_pts: usize) -> Vec<Label> {
    let n = points.len();
    let mut labels = vec![Label::Noise; n];
    if n == 0 {
        return labels;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| points[a].total_cmp(&points[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| points[i]).collect();

    // neighbourhood sizes by a sliding window over the sorted values
    let mut is_core = vec![false; n];
    let (mut lo, mut hi) = (0usize, 0usize);
    for k in 0..n {
        while sorted[k] - sorted[lo] > eps {
            lo += 1;
        }
        if hi < k {
            hi = k;
        }
        while hi + 1 < n && sorted[hi + 1] - sorted[k] <= eps {
            hi += 1;
        }
        is_core[k] = hi - lo + 1 >= min_pts;
    }

    // consecutive core points closer than eps are density-connected
    let mut core_cluster = vec![usize::MAX; n];
    let mut next_id = 0usize;
    let mut last_core: Option<usize> = None;
    for k in 0..n {
        if !is_core[k] {
            continue;
        }
        match last_core {
            Some(p) if sorted[k] - sorted[p] <= eps => core_cluster[k] = core_cluster[p],
            _ => {
                core_cluster[k] = next_id;
                next_id += 1;
            }
        }
        last_core = Some(k);
    }

    // nearest core on each side for border assignment
    let mut prev_core = vec![None; n];
    let mut last = None;
    for k in 0..n {
        if is_core[k] {
            last = Some(k);
        }
        prev_core[k] = last;
    }
    let mut next_core = vec![None; n];
    let mut last = None;
    for k in (0..n).rev() {
        if is_core[k] {
            last = Some(k);
        }
        next_core[k] = last;
    }

    for k in 0..n {
        let label = if is_core[k] {
            Label::Cluster(core_cluster[k])
        } else {
            let left = prev_core[k].map(|p| (sorted[k] - sorted[p], p));
            let right = next_core[k].map(|p| (sorted[p] - sorted[k], p));
            let pick = match (left, right) {
                (Some(l), Some(r)) => Some(if r.0 < l.0 { r } else { l }),
                (l, r) => l.or(r),
            };
            match pick {
                Some((d, p)) if d <= eps => Label::Cluster(core_cluster[p]),
                _ => Label::Noise,
            }
        };
        labels[order[k]] = label;
    }
    labels
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Outlier,
    NonFastestCluster,
    StopLap,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Outlier => "outlier",
            RejectReason::NonFastestCluster => "non-fastest-cluster",
            RejectReason::StopLap => "stop-lap",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejected {
    pub record: SectorTimeRecord,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CarLaps {
    pub retained: Vec<SectorTimeRecord>,
    pub rejected: Vec<Rejected>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CleanedLapSet {
    pub cars: BTreeMap<u32, CarLaps>,
    pub warnings: Vec<String>,
}

impl CleanedLapSet {
    pub fn retained(&self) -> impl Iterator<Item = &SectorTimeRecord> {
        self.cars.values().flat_map(|c| c.retained.iter())
    }

    pub fn is_retained(&self, car: u32, lap: u32) -> bool {
        self.cars
            .get(&car)
            .map(|c| c.retained.iter().any(|r| r.lap == lap))
            .unwrap_or(false)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Keeps, per car, the laps whose three sector times all fall in the fastest
/// DBSCAN cluster of their sector. Laps carrying a stop flag are dropped first.
pub fn clean_laps(records: &[SectorTimeRecord], eps: f64, min_pts: usize) -> Result<CleanedLapSet> {
    if records.is_empty() {
        return Err(Error::invalid("no sector-time records to clean"));
    }
    if !(eps > 0.0) || min_pts < 1 {
        return Err(Error::invalid("dbscan needs eps > 0 and min_pts >= 1"));
    }
    let mut by_car: BTreeMap<u32, Vec<SectorTimeRecord>> = BTreeMap::new();
    for r in records {
        by_car.entry(r.car_number).or_default().push(r.clone());
    }
    let mut out = CleanedLapSet::default();
    for (car, mut laps) in by_car {
        laps.sort_by_key(|r| r.lap);
        let mut car_laps = CarLaps::default();
        let (stops, running): (Vec<_>, Vec<_>) =
            laps.into_iter().partition(|r| r.stop_flag.is_some());
        car_laps.rejected.extend(stops.into_iter().map(|record| Rejected {
            record,
            reason: RejectReason::StopLap,
        }));

        // per-sector labels and the id of the fastest cluster
        let mut labels: Vec<Vec<Label>> = Vec::with_capacity(3);
        let mut fastest: Vec<Option<usize>> = Vec::with_capacity(3);
        for sector in 0..3 {
            let pts: Vec<f64> = running.iter().map(|r| r.sectors()[sector]).collect();
            let lab = dbscan(&pts, eps, min_pts);
            let n_clusters = lab.iter().filter_map(|l| l.cluster()).max().map(|m| m + 1);
            let best = n_clusters.and_then(|nc| {
                (0..nc)
                    .map(|c| {
                        let m = mean(
                            pts.iter()
                                .zip(&lab)
                                .filter(|(_, l)| **l == Label::Cluster(c))
                                .map(|(p, _)| *p),
                        );
                        (c, m)
                    })
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(c, _)| c)
            });
            labels.push(lab);
            fastest.push(best);
        }
        for (i, record) in running.into_iter().enumerate() {
            let mut reason = None;
            for sector in 0..3 {
                match labels[sector][i] {
                    Label::Noise => {
                        reason = Some(RejectReason::Outlier);
                        break;
                    }
                    Label::Cluster(c) if Some(c) != fastest[sector] => {
                        reason.get_or_insert(RejectReason::NonFastestCluster);
                    }
                    _ => {}
                }
            }
            match reason {
                None => car_laps.retained.push(record),
                Some(reason) => car_laps.rejected.push(Rejected { record, reason }),
            }
        }
        car_laps.rejected.sort_by_key(|r| r.record.lap);
        if car_laps.retained.is_empty() {
            out.warnings
                .push(format!("car {car}: no lap survived cleaning"));
        }
        out.cars.insert(car, car_laps);
    }
    Ok(out)
}

/// Writes the `car,lap,reason` rejection report.
pub fn write_rejection_report<W: Write>(set: &CleanedLapSet, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["car", "lap", "reason"])?;
    for (car, laps) in &set.cars {
        for r in &laps.rejected {
            w.write_record([car.to_string(), r.record.lap.to_string(), r.reason.as_str().to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}


#[cfg(test)]
mod tests {
    use super::*;

    const TABLE: &str = "#,Lap,Stop,S1,S2,S3,Elapsed,Class,Group,Team\n\
        1,1,,33.978,38.779,32.358,105.115,LMP1,H,Porsche\n\
        1,2,,33.846,37.727,31.753,208.441,LMP1,H,Porsche\n\
        77,31,B,40.622,47.265,45.367,3966.652,LMGTE Am,,Porsche\n";

    #[test]
    fn parses_reference_row() {
        let recs = parse_sector_times(TABLE.as_bytes(), Delimiter::Auto).unwrap();
        assert_eq!(recs.len(), 3);
        let r = &recs[0];
        assert_eq!(r.car_number, 1);
        assert_eq!(r.s1, 33.978);
        assert_eq!(r.s2, 38.779);
        assert_eq!(r.s3, 32.358);
        assert_eq!(r.elapsed, 105.115);
        assert_eq!(r.class, Class::Lmp1);
        assert_eq!(r.team, "Porsche");
        assert_eq!(recs[2].stop_flag.as_deref(), Some("B"));
        assert_eq!(recs[2].class, Class::LmgteAm);
    }

    #[test]
    fn semicolon_tables_are_detected() {
        let t = TABLE.replace(',', ";");
        let recs = parse_sector_times(t.as_bytes(), Delimiter::Auto).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[1].s3, 31.753);
    }

    #[test]
    fn empty_data_section() {
        let recs = parse_sector_times(SECTOR_HEADER.as_bytes(), Delimiter::Auto).unwrap();
        assert!(recs.is_empty());
        assert!(parse_sector_times("".as_bytes(), Delimiter::Auto).unwrap().is_empty());
    }

    #[test]
    fn malformed_field_reports_row() {
        let t = "#,Lap,Stop,S1,S2,S3,Elapsed,Class,Group,Team\n\
            1,1,,33.978,38.779,32.358,105.115,LMP1,H,Porsche\n\
            1,2,,33.8,abc,31.7,208.4,LMP1,H,Porsche\n";
        match parse_sector_times(t.as_bytes(), Delimiter::Auto) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_class_is_rejected() {
        let t = "#,Lap,Stop,S1,S2,S3,Elapsed,Class,Group,Team\n\
            1,1,,33.978,38.779,32.358,105.115,GT3,H,Porsche\n";
        assert!(matches!(
            parse_sector_times(t.as_bytes(), Delimiter::Auto),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn write_then_parse_is_identity() {
        let recs = parse_sector_times(TABLE.as_bytes(), Delimiter::Auto).unwrap();
        let mut buf = Vec::new();
        write_sector_times(&recs, &mut buf).unwrap();
        let again = parse_sector_times(buf.as_slice(), Delimiter::Auto).unwrap();
        assert_eq!(recs, again);
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let labels = dbscan(&[10.0; 8], 0.1, 4);
        assert!(labels.iter().all(|l| *l == Label::Cluster(0)));
    }

    #[test]
    fn far_point_is_noise() {
        let labels = dbscan(&[33.9, 34.0, 34.1, 34.0, 120.0], 0.5, 3);
        assert_eq!(&labels[..4], &[Label::Cluster(0); 4]);
        assert_eq!(labels[4], Label::Noise);
    }

    #[test]
    fn empty_input_gives_empty_labeling() {
        assert!(dbscan(&[], 1.0, 3).is_empty());
    }

    #[test]
    fn border_point_goes_to_nearest_core() {
        // cores at 0 and 2.1 (each with two duplicates), border at 1.2
        let pts = [0.0, 0.0, 0.0, 2.1, 2.1, 2.1, 1.2];
        let labels = dbscan(&pts, 1.0, 3);
        assert_eq!(labels[6], Label::Cluster(1));
    }

    fn rec(car: u32, lap: u32, s: [f64; 3], stop: Option<&str>) -> SectorTimeRecord {
        SectorTimeRecord {
            car_number: car,
            lap,
            stop_flag: stop.map(str::to_string),
            s1: s[0],
            s2: s[1],
            s3: s[2],
            elapsed: lap as f64 * 110.0,
            class: Class::LmgteAm,
            group: String::new(),
            team: "T".into(),
        }
    }

    #[test]
    fn box_exit_sector_is_an_outlier() {
        let mut records: Vec<_> = (1..=30)
            .map(|lap| {
                let d = ((lap * 7) % 7) as f64 * 0.1 - 0.3;
                rec(77, lap, [40.3 + d, 46.6 - d, 40.2 + d * 0.5], None)
            })
            .collect();
        records.push(rec(77, 31, [121.453, 45.261, 38.340], None));
        let set = clean_laps(&records, DEFAULT_EPS, DEFAULT_MIN_PTS).unwrap();
        let car = &set.cars[&77];
        assert_eq!(car.retained.len(), 30);
        assert_eq!(car.rejected.len(), 1);
        assert_eq!(car.rejected[0].reason, RejectReason::Outlier);
        assert_eq!(car.rejected[0].record.lap, 31);
    }

    #[test]
    fn stop_flag_lap_is_rejected() {
        let mut records: Vec<_> = (1..=10).map(|lap| rec(5, lap, [40.0, 46.0, 40.0], None)).collect();
        records.push(rec(5, 11, [40.0, 46.0, 40.0], Some("B")));
        let set = clean_laps(&records, DEFAULT_EPS, DEFAULT_MIN_PTS).unwrap();
        let car = &set.cars[&5];
        assert_eq!(car.retained.len(), 10);
        assert_eq!(car.rejected[0].reason, RejectReason::StopLap);
    }

    #[test]
    fn all_noise_car_is_flagged() {
        let records: Vec<_> = (1..=3)
            .map(|lap| rec(9, lap, [40.0 + lap as f64 * 10.0, 46.0, 40.0], None))
            .collect();
        let set = clean_laps(&records, DEFAULT_EPS, DEFAULT_MIN_PTS).unwrap();
        assert!(set.cars[&9].retained.is_empty());
        assert_eq!(set.warnings.len(), 1);
    }

    #[test]
    fn slower_cluster_is_dropped() {
        // ten racing laps and six safety-car laps
        let mut records: Vec<_> = (1..=10).map(|lap| rec(3, lap, [34.0, 38.0, 32.0], None)).collect();
        records.extend((11..=16).map(|lap| rec(3, lap, [50.0, 55.0, 48.0], None)));
        let set = clean_laps(&records, DEFAULT_EPS, DEFAULT_MIN_PTS).unwrap();
        let car = &set.cars[&3];
        assert_eq!(car.retained.len(), 10);
        assert!(car
            .rejected
            .iter()
            .all(|r| r.reason == RejectReason::NonFastestCluster));
    }
}
