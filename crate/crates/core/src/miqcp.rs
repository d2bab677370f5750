//! Convexified minimum-lap-time problem: construction, verification of
//! simulated trajectories, and a portable text export.
//!
//! Text grammar, one statement per line, tokens separated by spaces:
//!
//! ```text
//! LAPSTRAT-SOCP 1
//! N <cells> DS <delta_s>
//! VAR <name> <lower> <upper> <C|B>
//! OBJ <k> (<coef> <var>){k}
//! ROW <family> <name> <LE|EQ|GE> <rhs> <k> (<coef> <var>){k}
//! SOC <family> <name> A <expr> B <expr> C <expr>
//! END
//! ```
//!
//! where `<expr>` is `<constant> <k> (<coef> <var>){k}` and a SOC row means
//! `||(2A, B - C)||_2 <= B + C`. Numbers use the shortest round-trip decimal
//! form; infinite bounds are written `inf` / `-inf`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::vehicle::{LapResult, PowertrainMode, TrackGeometry, VehicleParams};
use crate::{Error, Result};

/// Grid spacing of the convexified problem (m).
pub const DELTA_S: f64 = 5.0;
/// Speed bound used for the variable boxes (m/s).
pub const V_MAX: f64 = 120.0;

/// Per-lap regulation limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Caps {
    /// Electric energy released per lap (kJ).
    pub el_used_max: f64,
    /// Fuel per lap (kg).
    pub fuel_max: f64,
    /// Electric energy recovered from exhaust heat per lap (kJ); synthetic.
    pub hers: f64,
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            el_used_max: 4924.0,
            fuel_max: 1.381,
            hers: 800.0,
        }
    }
}

impl Caps {
    /// Amounts by which a lap ledger exceeds the limits (0 when compliant):
    /// electric (kJ), fuel (kg) and recovery balance (kJ).
    pub fn violations(&self, lap: &LapResult) -> [f64; 3] {
        [
            (lap.e_el_used - self.el_used_max).max(0.0),
            (lap.fuel_used - self.fuel_max).max(0.0),
            (lap.e_el_used - self.hers - lap.e_el_rec_kers).max(0.0),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Var {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl Sense {
    fn token(self) -> &'static str {
        match self {
            Sense::Le => "LE",
            Sense::Eq => "EQ",
            Sense::Ge => "GE",
        }
    }
}

/// Sparse affine expression `constant + sum(coef * x[var])`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Affine {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl Affine {
    pub fn var(i: usize) -> Self {
        Affine {
            constant: 0.0,
            terms: vec![(i, 1.0)],
        }
    }

    pub fn constant(c: f64) -> Self {
        Affine {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(i, c)| c * x[*i]).sum::<f64>()
    }

    fn magnitude(&self, x: &[f64]) -> f64 {
        self.constant.abs() + self.terms.iter().map(|(i, c)| (c * x[*i]).abs()).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub family: String,
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `||(2a, b - c)||_2 <= b + c`, which for `b, c >= 0` is `a^2 <= b * c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocRow {
    pub family: String,
    pub name: String,
    pub a: Affine,
    pub b: Affine,
    pub c: Affine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedProblem {
    pub n: usize,
    pub delta_s: f64,
    pub vars: Vec<Var>,
    pub objective: Vec<(usize, f64)>,
    pub rows: Vec<LinearRow>,
    pub socs: Vec<SocRow>,
}

/// Index layout of the variables of an `n`-cell problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
}

impl Layout {
    /// Kinetic energy at node `k` (0..=n).
    pub fn e(&self, k: usize) -> usize {
        k
    }
    fn cell(&self, k: usize, field: usize) -> usize {
        self.n + 1 + k * CELL_VARS + field
    }
    pub fn v(&self, k: usize) -> usize {
        self.cell(k, 0)
    }
    pub fn lethargy(&self, k: usize) -> usize {
        self.cell(k, 1)
    }
    pub fn fnet(&self, k: usize) -> usize {
        self.cell(k, 2)
    }
    pub fn fuel(&self, k: usize) -> usize {
        self.cell(k, 3)
    }
    pub fn e_used(&self, k: usize) -> usize {
        self.cell(k, 4)
    }
    pub fn e_rec(&self, k: usize) -> usize {
        self.cell(k, 5)
    }
    /// Mode indicator `m` (1..=4) of cell `k`.
    pub fn u(&self, k: usize, m: usize) -> usize {
        self.cell(k, 5 + m)
    }
    pub fn n_vars(&self) -> usize {
        self.n + 1 + self.n * CELL_VARS
    }
}

const CELL_VARS: usize = 10;

pub const FAMILIES: [&str; 10] = [
    "kinetic",
    "one_hot",
    "speed_energy",
    "lethargy",
    "fuel_point",
    "el_point",
    "rec_point",
    "fuel_total",
    "el_total",
    "rec_balance",
];

impl DiscretizedProblem {
    pub fn layout(&self) -> Layout {
        Layout { n: self.n }
    }

    /// Number of linear and cone rows per family.
    pub fn family_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for r in &self.rows {
            *out.entry(r.family.clone()).or_default() += 1;
        }
        for r in &self.socs {
            *out.entry(r.family.clone()).or_default() += 1;
        }
        out
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|(i, c)| c * x[*i]).sum()
    }
}

/// Builds the convexified system on a 5 m geometry.
pub fn build_problem(
    geometry: &TrackGeometry,
    params: &VehicleParams,
    caps: &Caps,
) -> Result<DiscretizedProblem> {
    if geometry.points.is_empty() {
        return Err(Error::invalid("empty geometry"));
    }
    geometry.validate()?;
    if (geometry.delta_s - DELTA_S).abs() > 1e-9 {
        return Err(Error::GridMismatch(format!(
            "problem grid must be {DELTA_S} m, geometry has {} m",
            geometry.delta_s
        )));
    }
    params.validate()?;
    let n = geometry.points.len();
    let ds = geometry.delta_s;
    let m = params.mass;
    let lay = Layout { n };
    let inf = f64::INFINITY;

    let e_max = 0.5 * m * V_MAX * V_MAX;
    let down_max = 0.5 * params.rho * params.area * params.cz * params.coeff_downforce.max(1.0) * V_MAX * V_MAX;
    let drag_max = 0.5 * params.rho * params.area * params.cx * V_MAX * V_MAX;
    let normal_max = m * params.g + down_max;
    let mu_max = params.mu * params.coeff_adherence.max(1.0);
    let grade = geometry
        .points
        .iter()
        .map(|p| p.slope.sin().abs())
        .fold(0.0, f64::max)
        * m
        * params.g;
    let f_lo = -(mu_max * normal_max + drag_max + params.c_res * normal_max + grade);
    let f_hi = params.max_comb_thrust() + params.max_el_thrust() + grade;

    let mut vars = Vec::with_capacity(lay.n_vars());
    let cont = |name: String, lo: f64, hi: f64| Var {
        name,
        lo,
        hi,
        kind: VarKind::Continuous,
    };
    for k in 0..=n {
        vars.push(cont(format!("E_{k}"), 0.0, e_max));
    }
    for k in 0..n {
        vars.push(cont(format!("v_{k}"), 0.0, V_MAX));
        vars.push(cont(format!("lth_{k}"), 1.0 / V_MAX, inf));
        vars.push(cont(format!("fnet_{k}"), f_lo, f_hi));
        vars.push(cont(format!("fuel_{k}"), 0.0, inf));
        vars.push(cont(format!("eused_{k}"), 0.0, inf));
        vars.push(cont(format!("erec_{k}"), 0.0, inf));
        for mode in 1..=4 {
            vars.push(Var {
                name: format!("u{mode}_{k}"),
                lo: 0.0,
                hi: 1.0,
                kind: VarKind::Binary,
            });
        }
    }
    debug_assert_eq!(vars.len(), lay.n_vars());

    let objective = (0..n).map(|k| (lay.lethargy(k), ds)).collect();
    let mut rows = Vec::new();
    let mut row = |family: &str, name: String, terms: Vec<(usize, f64)>, sense, rhs| {
        rows.push(LinearRow {
            family: family.to_string(),
            name,
            terms,
            sense,
            rhs,
        })
    };
    for k in 0..n {
        row(
            "kinetic",
            format!("kin_{k}"),
            vec![(lay.e(k + 1), 1.0), (lay.e(k), -1.0), (lay.fnet(k), -ds)],
            Sense::Eq,
            0.0,
        );
    }
    for k in 0..n {
        row(
            "one_hot",
            format!("mode_{k}"),
            (1..=4).map(|mo| (lay.u(k, mo), 1.0)).collect(),
            Sense::Eq,
            1.0,
        );
    }
    let el_point = params.max_el_thrust() * ds / params.eta_el_traction / 1000.0;
    let rec_point = params.f_sail.abs().max(params.f_dec_max.abs()) * ds * params.eta_el_rec / 1000.0;
    for k in 0..n {
        row(
            "fuel_point",
            format!("fuel_{k}"),
            vec![(lay.fuel(k), 1.0), (lay.lethargy(k), -params.p_max_per_s * ds)],
            Sense::Le,
            0.0,
        );
    }
    for k in 0..n {
        row("el_point", format!("el_{k}"), vec![(lay.e_used(k), 1.0)], Sense::Le, el_point);
    }
    for k in 0..n {
        row("rec_point", format!("rec_{k}"), vec![(lay.e_rec(k), 1.0)], Sense::Le, rec_point);
    }
    row(
        "fuel_total",
        "fuel_total".into(),
        (0..n).map(|k| (lay.fuel(k), 1.0)).collect(),
        Sense::Le,
        caps.fuel_max,
    );
    row(
        "el_total",
        "el_total".into(),
        (0..n).map(|k| (lay.e_used(k), 1.0)).collect(),
        Sense::Le,
        caps.el_used_max,
    );
    row(
        "rec_balance",
        "rec_balance".into(),
        (0..n)
            .flat_map(|k| [(lay.e_used(k), 1.0), (lay.e_rec(k), -1.0)])
            .collect(),
        Sense::Le,
        caps.hers,
    );

    let mut socs = Vec::with_capacity(2 * n);
    for k in 0..n {
        socs.push(SocRow {
            family: "speed_energy".into(),
            name: format!("se_{k}"),
            a: Affine::var(lay.v(k)),
            b: Affine {
                constant: 0.0,
                terms: vec![(lay.e(k), 2.0 / m)],
            },
            c: Affine::constant(1.0),
        });
    }
    for k in 0..n {
        socs.push(SocRow {
            family: "lethargy".into(),
            name: format!("lth_{k}"),
            a: Affine::constant(1.0),
            b: Affine::var(lay.lethargy(k)),
            c: Affine::var(lay.v(k)),
        });
    }

    Ok(DiscretizedProblem {
        n,
        delta_s: ds,
        vars,
        objective,
        rows,
        socs,
    })
}

/// A lap trajectory mapped onto the problem grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTrajectory {
    pub speed: Vec<f64>,
    pub lethargy: Vec<f64>,
    pub fuel: Vec<f64>,
    pub e_used: Vec<f64>,
    pub e_rec: Vec<f64>,
    pub mode: Vec<PowertrainMode>,
}

/// Maps a simulated lap onto cells of `delta_s`: each cell's lethargy is the
/// time spent in it divided by its length, ledgers are split by overlap and
/// the mode is the one held for the longest time.
pub fn resample_trajectory(
    lap: &LapResult,
    source: &TrackGeometry,
    delta_s: f64,
) -> Result<GridTrajectory> {
    let n_src = source.points.len();
    if lap.speed.len() != n_src {
        return Err(Error::GridMismatch(format!(
            "trajectory has {} points, geometry {}",
            lap.speed.len(),
            n_src
        )));
    }
    let n = (source.length / delta_s).round() as usize;
    if n == 0 || ((n as f64) * delta_s - source.length).abs() > 1e-6 {
        return Err(Error::GridMismatch(format!(
            "lap length {} is not a multiple of {delta_s} m",
            source.length
        )));
    }
    let ds = source.delta_s;
    let mut out = GridTrajectory {
        speed: vec![0.0; n],
        lethargy: vec![0.0; n],
        fuel: vec![0.0; n],
        e_used: vec![0.0; n],
        e_rec: vec![0.0; n],
        mode: vec![PowertrainMode::Sailing; n],
    };
    let mut mode_time = vec![[0.0_f64; 4]; n];
    let mut time = vec![0.0; n];
    for i in 0..n_src {
        let (a, b) = (i as f64 * ds, (i + 1) as f64 * ds);
        let first = ((a / delta_s).floor() as usize).min(n - 1);
        let mut c = first;
        while c < n && (c as f64) * delta_s < b - 1e-12 {
            let lo = a.max(c as f64 * delta_s);
            let hi = b.min((c + 1) as f64 * delta_s);
            if hi > lo {
                let w = (hi - lo) / ds;
                let t = (hi - lo) / lap.speed[i];
                time[c] += t;
                out.fuel[c] += w * lap.fuel[i];
                out.e_used[c] += w * lap.e_used[i];
                out.e_rec[c] += w * lap.e_rec[i];
                mode_time[c][lap.mode[i] as usize - 1] += t;
            }
            c += 1;
        }
    }
    for c in 0..n {
        out.lethargy[c] = time[c] / delta_s;
        out.speed[c] = delta_s / time[c];
        let best = (0..4)
            .max_by(|x, y| mode_time[c][*x].total_cmp(&mode_time[c][*y]))
            .unwrap();
        out.mode[c] = PowertrainMode::from_code(best as u8 + 1).unwrap();
    }
    Ok(out)
}

impl GridTrajectory {
    /// Variable vector for `problem`. Kinetic energies are `m v^2 / 2` of the
    /// cell speeds (the closing node repeats the first cell) and the net force
    /// follows from their differences.
    pub fn to_point(&self, problem: &DiscretizedProblem, mass: f64) -> Result<Vec<f64>> {
        let n = problem.n;
        if self.speed.len() != n {
            return Err(Error::GridMismatch(format!(
                "trajectory has {} cells, problem {n}",
                self.speed.len()
            )));
        }
        let lay = problem.layout();
        let mut x = vec![0.0; lay.n_vars()];
        for k in 0..=n {
            let v = self.speed[k % n];
            x[lay.e(k)] = 0.5 * mass * v * v;
        }
        for k in 0..n {
            x[lay.v(k)] = self.speed[k];
            x[lay.lethargy(k)] = self.lethargy[k];
            x[lay.fnet(k)] = (x[lay.e(k + 1)] - x[lay.e(k)]) / problem.delta_s;
            x[lay.fuel(k)] = self.fuel[k];
            x[lay.e_used(k)] = self.e_used[k];
            x[lay.e_rec(k)] = self.e_rec[k];
            x[lay.u(k, self.mode[k] as usize)] = 1.0;
        }
        Ok(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Worst signed violation per family (≤ 0 means satisfied), in the
    /// family's own units.
    pub worst: BTreeMap<String, f64>,
    /// Worst violation per family relative to the row's magnitude.
    pub worst_relative: BTreeMap<String, f64>,
    pub objective: f64,
    pub feasible: bool,
}

impl FeasibilityReport {
    pub fn violated(&self) -> Vec<&str> {
        self.worst_relative
            .iter()
            .filter(|(_, v)| **v > VERIFY_TOL)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn write<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "family,worst,worst_relative")?;
        for (k, v) in &self.worst {
            writeln!(sink, "{k},{v},{}", self.worst_relative[k])?;
        }
        writeln!(sink, "# objective={}", self.objective)?;
        writeln!(sink, "# feasible={}", self.feasible)?;
        Ok(())
    }
}

pub const VERIFY_TOL: f64 = 1e-6;

/// Evaluates every family of `problem` at point `x`.
pub fn check_point(problem: &DiscretizedProblem, x: &[f64]) -> Result<FeasibilityReport> {
    if x.len() != problem.vars.len() {
        return Err(Error::GridMismatch(format!(
            "point has {} entries, problem {} variables",
            x.len(),
            problem.vars.len()
        )));
    }
    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    let mut rel: BTreeMap<String, f64> = BTreeMap::new();
    let mut note = |family: &str, v: f64, scale: f64| {
        let w = worst.entry(family.to_string()).or_insert(f64::NEG_INFINITY);
        *w = w.max(v);
        let r = rel.entry(family.to_string()).or_insert(f64::NEG_INFINITY);
        *r = r.max(v / scale.max(1.0));
    };
    for (i, var) in problem.vars.iter().enumerate() {
        let v = (var.lo - x[i]).max(x[i] - var.hi);
        let scale = x[i].abs().max(if var.hi.is_finite() { var.hi.abs() } else { 0.0 });
        note("bounds", v, scale);
        if var.kind == VarKind::Binary {
            note("integrality", x[i].min(1.0 - x[i]).abs(), 1.0);
        }
    }
    for r in &problem.rows {
        let lhs: f64 = r.terms.iter().map(|(i, c)| c * x[*i]).sum();
        let mag: f64 = r.terms.iter().map(|(i, c)| (c * x[*i]).abs()).sum::<f64>() + r.rhs.abs();
        let v = match r.sense {
            Sense::Le => lhs - r.rhs,
            Sense::Ge => r.rhs - lhs,
            Sense::Eq => (lhs - r.rhs).abs(),
        };
        note(&r.family, v, mag);
    }
    for s in &problem.socs {
        let (a, b, c) = (s.a.eval(x), s.b.eval(x), s.c.eval(x));
        let lhs = (4.0 * a * a + (b - c) * (b - c)).sqrt();
        let mag = s.a.magnitude(x) + s.b.magnitude(x) + s.c.magnitude(x);
        note(&s.family, lhs - (b + c), mag);
        note(&s.family, -b.min(c), mag);
    }
    let feasible = rel.values().all(|v| *v <= VERIFY_TOL);
    Ok(FeasibilityReport {
        worst,
        worst_relative: rel,
        objective: problem.objective_value(x),
        feasible,
    })
}

/// Maps a simulated lap onto the problem grid and checks every family.
pub fn verify(
    lap: &LapResult,
    source: &TrackGeometry,
    problem: &DiscretizedProblem,
    params: &VehicleParams,
) -> Result<FeasibilityReport> {
    let traj = resample_trajectory(lap, source, problem.delta_s)?;
    if traj.speed.len() != problem.n {
        return Err(Error::GridMismatch(format!(
            "trajectory covers {} cells, problem {}",
            traj.speed.len(),
            problem.n
        )));
    }
    let x = traj.to_point(problem, params.mass)?;
    check_point(problem, &x)
}

fn num(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x}")
    }
}

fn terms_text(out: &mut String, names: &[Var], terms: &[(usize, f64)]) {
    write!(out, "{}", terms.len()).unwrap();
    for (i, c) in terms {
        write!(out, " {} {}", num(*c), names[*i].name).unwrap();
    }
}

/// Serialises `problem` in the text grammar described in the module docs.
pub fn export<W: Write>(problem: &DiscretizedProblem, mut sink: W) -> Result<()> {
    let mut out = String::new();
    out.push_str("LAPSTRAT-SOCP 1\n");
    writeln!(out, "N {} DS {}", problem.n, num(problem.delta_s)).unwrap();
    for v in &problem.vars {
        let kind = match v.kind {
            VarKind::Continuous => "C",
            VarKind::Binary => "B",
        };
        writeln!(out, "VAR {} {} {} {kind}", v.name, num(v.lo), num(v.hi)).unwrap();
    }
    out.push_str("OBJ ");
    terms_text(&mut out, &problem.vars, &problem.objective);
    out.push('\n');
    for r in &problem.rows {
        write!(out, "ROW {} {} {} {} ", r.family, r.name, r.sense.token(), num(r.rhs)).unwrap();
        terms_text(&mut out, &problem.vars, &r.terms);
        out.push('\n');
    }
    for s in &problem.socs {
        write!(out, "SOC {} {}", s.family, s.name).unwrap();
        for (tag, e) in [("A", &s.a), ("B", &s.b), ("C", &s.c)] {
            write!(out, " {tag} {} ", num(e.constant)).unwrap();
            terms_text(&mut out, &problem.vars, &e.terms);
        }
        out.push('\n');
    }
    out.push_str("END\n");
    sink.write_all(out.as_bytes())?;
    Ok(())
}

struct Tokens<'a> {
    it: std::str::SplitWhitespace<'a>,
    line: usize,
}

impl<'a> Tokens<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            row: self.line,
            msg: msg.into(),
        }
    }

    fn word(&mut self) -> Result<&'a str> {
        self.it.next().ok_or_else(|| self.err("unexpected end of line"))
    }

    fn expect(&mut self, w: &str) -> Result<()> {
        let got = self.word()?;
        if got != w {
            return Err(self.err(format!("expected {w}, found {got}")));
        }
        Ok(())
    }

    fn float(&mut self) -> Result<f64> {
        let w = self.word()?;
        match w {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            _ => w.parse().map_err(|_| self.err(format!("bad number {w}"))),
        }
    }

    fn count(&mut self) -> Result<usize> {
        let w = self.word()?;
        w.parse().map_err(|_| self.err(format!("bad count {w}")))
    }

    fn terms(&mut self, index: &HashMap<String, usize>) -> Result<Vec<(usize, f64)>> {
        let k = self.count()?;
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let c = self.float()?;
            let name = self.word()?;
            let i = *index
                .get(name)
                .ok_or_else(|| self.err(format!("unknown variable {name}")))?;
            out.push((i, c));
        }
        Ok(out)
    }

    fn affine(&mut self, index: &HashMap<String, usize>) -> Result<Affine> {
        let constant = self.float()?;
        let terms = self.terms(index)?;
        Ok(Affine { constant, terms })
    }

    fn done(&mut self) -> Result<()> {
        match self.it.next() {
            None => Ok(()),
            Some(w) => Err(self.err(format!("trailing token {w}"))),
        }
    }
}

/// Reads a problem written by [`export`].
pub fn parse(text: &str) -> Result<DiscretizedProblem> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut next = || lines.next().map(|(i, l)| Tokens {
        it: l.split_whitespace(),
        line: i + 1,
    });
    let mut head = next().ok_or_else(|| Error::Parse {
        row: 1,
        msg: "empty problem file".into(),
    })?;
    head.expect("LAPSTRAT-SOCP")?;
    head.expect("1")?;
    let mut dims = next().ok_or_else(|| Error::Parse {
        row: 2,
        msg: "missing dimension line".into(),
    })?;
    dims.expect("N")?;
    let n = dims.count()?;
    dims.expect("DS")?;
    let delta_s = dims.float()?;
    dims.done()?;

    let mut p = DiscretizedProblem {
        n,
        delta_s,
        vars: Vec::new(),
        objective: Vec::new(),
        rows: Vec::new(),
        socs: Vec::new(),
    };
    let mut index = HashMap::new();
    let mut ended = false;
    while let Some(mut t) = next() {
        match t.word()? {
            "VAR" => {
                let name = t.word()?.to_string();
                let lo = t.float()?;
                let hi = t.float()?;
                let kind = match t.word()? {
                    "C" => VarKind::Continuous,
                    "B" => VarKind::Binary,
                    k => return Err(t.err(format!("bad variable kind {k}"))),
                };
                t.done()?;
                if index.insert(name.clone(), p.vars.len()).is_some() {
                    return Err(t.err(format!("duplicate variable {name}")));
                }
                p.vars.push(Var { name, lo, hi, kind });
            }
            "OBJ" => {
                p.objective = t.terms(&index)?;
                t.done()?;
            }
            "ROW" => {
                let family = t.word()?.to_string();
                let name = t.word()?.to_string();
                let sense = match t.word()? {
                    "LE" => Sense::Le,
                    "EQ" => Sense::Eq,
                    "GE" => Sense::Ge,
                    s => return Err(t.err(format!("bad sense {s}"))),
                };
                let rhs = t.float()?;
                let terms = t.terms(&index)?;
                t.done()?;
                p.rows.push(LinearRow {
                    family,
                    name,
                    terms,
                    sense,
                    rhs,
                });
            }
            "SOC" => {
                let family = t.word()?.to_string();
                let name = t.word()?.to_string();
                t.expect("A")?;
                let a = t.affine(&index)?;
                t.expect("B")?;
                let b = t.affine(&index)?;
                t.expect("C")?;
                let c = t.affine(&index)?;
                t.done()?;
                p.socs.push(SocRow {
                    family,
                    name,
                    a,
                    b,
                    c,
                });
            }
            "END" => {
                t.done()?;
                ended = true;
                break;
            }
            w => return Err(t.err(format!("unknown statement {w}"))),
        }
    }
    if !ended {
        return Err(Error::Parse {
            row: text.lines().count(),
            msg: "missing END".into(),
        });
    }
    Ok(p)
}
