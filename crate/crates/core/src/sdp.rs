//! Strategy scoring under traffic with probability/cost decision trees.
//!
//! A tree is built for one ego lap against one Monte Carlo trace. Its stages
//! are the circuit sections; the state is minus the number of passes still
//! to be made. The value of the root is the expected time lost to traffic.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ga_opt::EnergyStrategy;
use crate::ingest::Class;
use crate::mc_sim::{McModel, Outcome, RaceState, SimTrace};
use crate::stats::OvertakingTable;
use crate::table::fmt_f;
use crate::vehicle::{LapResult, LapSimulator};
use crate::{Error, Result};

/// Tolerance on the sum of sibling probabilities.
pub const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdpConfig {
    pub ego_class: Class,
    /// Distance at which the ego has caught a competitor (m).
    pub proximity: f64,
    /// Distance kept behind a followed competitor (m).
    pub following_gap: f64,
    pub alpha: f64,
    /// Node budget per tree; past it, encounters resolve as certain follows.
    pub max_nodes: usize,
}

impl Default for SdpConfig {
    fn default() -> Self {
        SdpConfig {
            ego_class: Class::Lmp1,
            proximity: 10.0,
            following_gap: 5.0,
            alpha: 1.0,
            max_nodes: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub competitor: u32,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionNode {
    /// Sections completed when this node is reached (0 at the root).
    pub stage: usize,
    /// Minus the number of passes still to be made.
    pub state: i32,
    pub prob: f64,
    /// Time lost on the branch into this node (s).
    pub cost: f64,
    /// Encounter outcome leading here; `None` for the root and for stages
    /// without an encounter.
    pub branch: Option<Branch>,
    pub children: Vec<DecisionNode>,
}

impl DecisionNode {
    pub fn leaf(stage: usize, state: i32, prob: f64, cost: f64) -> Self {
        DecisionNode {
            stage,
            state,
            prob,
            cost,
            branch: None,
            children: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(DecisionNode::node_count).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        self.children.iter().map(|c| 1 + c.depth()).max().unwrap_or(0)
    }

    /// Indented text dump, one node per line.
    pub fn dump<W: Write>(&self, mut sink: W) -> Result<()> {
        self.dump_into(&mut sink, 0)
    }

    fn dump_into<W: Write>(&self, sink: &mut W, indent: usize) -> Result<()> {
        let what = match self.branch {
            Some(Branch {
                competitor,
                outcome: Outcome::Overtake,
            }) => format!(" pass #{competitor}"),
            Some(Branch {
                competitor,
                outcome: Outcome::Follow,
            }) => format!(" follow #{competitor}"),
            None => String::new(),
        };
        writeln!(
            sink,
            "{:indent$}[{}] state {} p={} cost={}{}",
            "",
            self.stage,
            self.state,
            fmt_f(self.prob, 4),
            fmt_f(self.cost, 4),
            what,
            indent = 2 * indent
        )?;
        for c in &self.children {
            c.dump_into(sink, indent + 1)?;
        }
        Ok(())
    }
}

/// Expected cost of the tree: `f(node) = cost + alpha * sum p_c f(c)`.
pub fn backward_pass(root: &DecisionNode, alpha: f64) -> Result<f64> {
    fn go(n: &DecisionNode, alpha: f64) -> Result<f64> {
        if n.children.is_empty() {
            return Ok(n.cost);
        }
        let mut sum_p = 0.0;
        let mut acc = 0.0;
        for c in &n.children {
            if !(0.0..=1.0).contains(&c.prob) {
                return Err(Error::Structure(format!(
                    "probability {} at stage {} is outside [0, 1]",
                    c.prob, c.stage
                )));
            }
            sum_p += c.prob;
            acc += c.prob * go(c, alpha)?;
        }
        if (sum_p - 1.0).abs() > PROB_TOL {
            return Err(Error::Structure(format!(
                "children of a stage-{} node sum to {sum_p}",
                n.stage
            )));
        }
        Ok(n.cost + alpha * acc)
    }
    go(root, alpha)
}

/// Shared inputs for tree construction.
#[derive(Debug)]
pub struct SdpContext<'a> {
    pub sim: &'a LapSimulator,
    pub table: &'a OvertakingTable,
    pub config: SdpConfig,
    missing: AtomicUsize,
    truncated: AtomicUsize,
}

impl<'a> SdpContext<'a> {
    pub fn new(sim: &'a LapSimulator, table: &'a OvertakingTable, config: SdpConfig) -> Self {
        SdpContext {
            sim,
            table,
            config,
            missing: AtomicUsize::new(0),
            truncated: AtomicUsize::new(0),
        }
    }

    /// Encounters so far that found no probability data.
    pub fn missing_p(&self) -> usize {
        self.missing.load(Ordering::Relaxed)
    }

    /// Trees that hit the node budget.
    pub fn truncated(&self) -> usize {
        self.truncated.load(Ordering::Relaxed)
    }

    fn p(&self, class: Class, section: usize) -> f64 {
        match self.table.p(self.config.ego_class, class, section) {
            Some(p) => p,
            None => {
                self.missing.fetch_add(1, Ordering::Relaxed);
                0.0
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Walk {
    delay: f64,
    /// Re-acceleration loss already charged but not yet in `delay`.
    pending: f64,
    /// Competitor being followed and the ego speed at the section end.
    following: Option<(usize, f64)>,
    passed: Vec<bool>,
}

struct Builder<'c, 'a> {
    ctx: &'c SdpContext<'a>,
    lap: &'c LapResult,
    trace: &'c SimTrace,
    times: Vec<f64>,
    /// Grid index range of each section, 0-based by section.
    sections: Vec<(usize, usize)>,
    /// Lap position of each competitor at the start of the trace.
    offset: Vec<f64>,
    nodes: usize,
    truncated: bool,
}

impl Builder<'_, '_> {
    fn x(&self, k: usize) -> f64 {
        k as f64 * self.ctx.sim.geometry.delta_s
    }

    /// Competitor position in the ego's lap frame.
    fn rel(&self, j: usize, t: f64) -> f64 {
        self.trace.position(j, t) - self.trace.positions[j][0] + self.offset[j]
    }

    /// First time competitor `j` reaches frame position `x`.
    fn time_at(&self, j: usize, x: f64) -> f64 {
        let p = &self.trace.positions[j];
        let target = x - self.offset[j] + p[0];
        let i = p.partition_point(|&q| q < target);
        if i == 0 {
            return 0.0;
        }
        if i >= p.len() {
            return self.trace.duration();
        }
        let f = (target - p[i - 1]) / (p[i] - p[i - 1]);
        (i as f64 - 1.0 + f) * self.trace.dt
    }

    fn speed_at(&self, k: usize) -> f64 {
        self.lap.speed.get(k).copied().unwrap_or(self.lap.v_end)
    }

    fn catch(&self, range: (usize, usize), delay: f64, passed: &[bool]) -> Option<usize> {
        let prox = self.ctx.config.proximity;
        for k in range.0..range.1 {
            let x = self.x(k);
            let t = self.times[k] + delay;
            let hit = (0..self.offset.len())
                .filter(|j| !passed[*j])
                .map(|j| (j, self.rel(j, t) - x))
                .filter(|(_, g)| *g <= prox)
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            if let Some((j, _)) = hit {
                return Some(j);
            }
        }
        None
    }

    /// Delay added by trailing competitor `j` to the end of a section, and
    /// the ego speed there.
    fn follow(&self, j: usize, end: usize, delay: f64) -> (f64, f64) {
        let free = self.times[end] + delay;
        let t_j = self.time_at(j, self.x(end) + self.ctx.config.following_gap);
        let loss = (t_j - free).max(0.0);
        let own = self.speed_at(end);
        if loss <= 0.0 {
            return (0.0, own);
        }
        let dt = self.trace.dt;
        let v = (self.trace.position(j, t_j + dt) - self.trace.position(j, (t_j - dt).max(0.0)))
            / (t_j + dt - (t_j - dt).max(0.0));
        (loss, v.min(own).max(0.5))
    }

    fn push(&mut self) {
        self.nodes += 1;
        if self.nodes > self.ctx.config.max_nodes && !self.truncated {
            self.truncated = true;
            self.ctx.truncated.fetch_add(1, Ordering::Relaxed);
        }
    }

    fn expand(&mut self, node: &mut DecisionNode, walk: Walk) -> Result<()> {
        if node.state >= 0 || node.stage >= self.sections.len() {
            return Ok(());
        }
        let stage = node.stage + 1;
        let range = self.sections[stage - 1];
        let section = stage;
        let encounter = match walk.following {
            Some((j, _)) => Some(j),
            None => self.catch(range, walk.delay, &walk.passed),
        };
        let Some(j) = encounter else {
            let mut child = DecisionNode::leaf(stage, node.state, 1.0, 0.0);
            self.push();
            self.expand(&mut child, walk)?;
            node.children.push(child);
            return Ok(());
        };
        let car = self.trace.cars[j];
        let p = if self.truncated { 0.0 } else { self.ctx.p(car.class, section) };
        if p > 0.0 {
            let mut w = walk.clone();
            w.delay += w.pending;
            w.pending = 0.0;
            w.following = None;
            w.passed[j] = true;
            let mut child = DecisionNode::leaf(stage, node.state + 1, p, 0.0);
            child.branch = Some(Branch {
                competitor: car.car,
                outcome: Outcome::Overtake,
            });
            self.push();
            self.expand(&mut child, w)?;
            node.children.push(child);
        }
        if p < 1.0 {
            let (block, v) = self.follow(j, range.1, walk.delay);
            let recovery = if block > 0.0 {
                self.ctx.sim.recovery_loss(self.lap, range.1 % self.lap.speed.len(), v)?
            } else {
                walk.pending
            };
            let cost = (block + recovery - walk.pending).max(0.0);
            let mut w = walk;
            w.delay += block;
            w.pending += cost - block;
            w.following = (block > 0.0).then_some((j, v));
            let mut child = DecisionNode::leaf(stage, node.state, 1.0 - p, cost);
            child.branch = Some(Branch {
                competitor: car.car,
                outcome: Outcome::Follow,
            });
            self.push();
            self.expand(&mut child, w)?;
            node.children.push(child);
        }
        Ok(())
    }
}

/// Tree of the ego lap `lap` against the competitors of `trace`. The ego
/// crosses the line at the start of the trace; competitor positions are
/// read modulo the lap.
pub fn build_tree(ctx: &SdpContext, lap: &LapResult, trace: &SimTrace) -> Result<DecisionNode> {
    let g = &ctx.sim.geometry;
    if lap.speed.len() != g.points.len() {
        return Err(Error::GridMismatch(format!(
            "ego lap has {} points, circuit has {}",
            lap.speed.len(),
            g.points.len()
        )));
    }
    if (trace.length - g.length).abs() > 1e-6 {
        return Err(Error::GridMismatch(format!(
            "trace lap length {} differs from circuit length {}",
            trace.length, g.length
        )));
    }
    let mut sections: Vec<(usize, usize)> = Vec::new();
    for (k, p) in g.points.iter().enumerate() {
        if p.section > sections.len() {
            sections.push((k, k + 1));
        } else {
            sections.last_mut().unwrap().1 = k + 1;
        }
    }
    let offset = trace
        .positions
        .iter()
        .map(|p| p[0].rem_euclid(g.length))
        .collect();
    let mut b = Builder {
        ctx,
        lap,
        trace,
        times: lap.timeline(),
        sections,
        offset,
        nodes: 1,
        truncated: false,
    };
    let n = trace.cars.len();
    let encounters = (0..n)
        .filter(|&j| {
            let mut only = vec![true; n];
            only[j] = false;
            b.catch((0, g.points.len()), 0.0, &only).is_some()
        })
        .count();
    let mut root = DecisionNode::leaf(0, -(encounters as i32), 1.0, 0.0);
    b.expand(
        &mut root,
        Walk {
            delay: 0.0,
            pending: 0.0,
            following: None,
            passed: vec![false; n],
        },
    )?;
    Ok(root)
}

/// `f0` of every strategy against one trace.
pub fn evaluate_trace(
    ctx: &SdpContext,
    strategies: &[EnergyStrategy],
    trace: &SimTrace,
) -> Vec<Option<f64>> {
    strategies
        .iter()
        .map(|s| {
            let f = build_tree(ctx, &s.lap, trace).and_then(|t| backward_pass(&t, ctx.config.alpha));
            match f {
                Ok(f) => Some(f),
                Err(e) => {
                    log::debug!("strategy {} failed on trace {}: {e}", s.id, trace.seed);
                    None
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyEvaluation {
    pub id: usize,
    pub label: String,
    pub lap_time: f64,
    pub f0: f64,
    pub std_error: f64,
    /// Per-trace values; `None` where the evaluation failed.
    pub per_trace: Vec<Option<f64>>,
    pub win_rate: f64,
    pub coverage: f64,
}

impl StrategyEvaluation {
    /// Traffic-free lap time plus expected traffic loss.
    pub fn expected_lap(&self) -> f64 {
        self.lap_time + self.f0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub evaluations: Vec<StrategyEvaluation>,
    pub best: usize,
}

impl EvaluationReport {
    pub fn get(&self, id: usize) -> Option<&StrategyEvaluation> {
        self.evaluations.iter().find(|e| e.id == id)
    }

    pub fn best(&self) -> &StrategyEvaluation {
        self.get(self.best).expect("best strategy is evaluated")
    }

    /// Strategy with the shortest expected lap including traffic.
    pub fn fastest_expected(&self) -> &StrategyEvaluation {
        self.evaluations
            .iter()
            .filter(|e| e.coverage > 0.0)
            .min_by(|a, b| {
                a.expected_lap()
                    .total_cmp(&b.expected_lap())
                    .then(a.lap_time.total_cmp(&b.lap_time))
                    .then(a.id.cmp(&b.id))
            })
            .expect("at least one strategy is scored")
    }

    pub fn write<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(
            sink,
            "strategy,label,lap_time_s,f0_s,std_error_s,expected_lap_s,win_rate,coverage"
        )?;
        for e in &self.evaluations {
            writeln!(
                sink,
                "{},{},{},{},{},{},{},{}",
                e.id,
                e.label,
                fmt_f(e.lap_time, 4),
                fmt_f(e.f0, 4),
                fmt_f(e.std_error, 4),
                fmt_f(e.expected_lap(), 4),
                fmt_f(e.win_rate, 4),
                fmt_f(e.coverage, 4)
            )?;
        }
        writeln!(sink, "# best={}", self.best)?;
        Ok(())
    }
}

fn better(a: (f64, f64, usize), b: (f64, f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && (a.1 < b.1 || (a.1 == b.1 && a.2 < b.2)))
}

/// Means, win rates and the argmin of mean `f0`, ties going to the faster
/// traffic-free lap. `per_trace[t][i]` is strategy `i` on trace `t`.
pub fn aggregate(strategies: &[EnergyStrategy], per_trace: &[Vec<Option<f64>>]) -> Result<EvaluationReport> {
    if strategies.is_empty() || per_trace.is_empty() {
        return Err(Error::invalid("evaluation needs at least one strategy and one trace"));
    }
    let n_t = per_trace.len();
    let mut wins = vec![0usize; strategies.len()];
    for row in per_trace {
        let mut best: Option<usize> = None;
        for (i, f) in row.iter().enumerate() {
            let Some(f) = *f else { continue };
            let key = (f, strategies[i].lap_time, strategies[i].id);
            if best.map_or(true, |b| {
                better(key, (row[b].unwrap(), strategies[b].lap_time, strategies[b].id))
            }) {
                best = Some(i);
            }
        }
        if let Some(b) = best {
            wins[b] += 1;
        }
    }
    let mut evaluations = Vec::with_capacity(strategies.len());
    for (i, s) in strategies.iter().enumerate() {
        let column: Vec<Option<f64>> = per_trace.iter().map(|r| r[i]).collect();
        let ok: Vec<f64> = column.iter().flatten().copied().collect();
        let coverage = ok.len() as f64 / n_t as f64;
        if ok.len() < n_t {
            log::warn!(
                "strategy {} scored on {} of {n_t} traces",
                s.id,
                ok.len()
            );
        }
        let (f0, std_error) = mean_se(&ok);
        evaluations.push(StrategyEvaluation {
            id: s.id,
            label: s.constraint.to_string(),
            lap_time: s.lap_time,
            f0,
            std_error,
            per_trace: column,
            win_rate: wins[i] as f64 / n_t as f64,
            coverage,
        });
    }
    let best = evaluations
        .iter()
        .filter(|e| e.coverage > 0.0)
        .min_by(|a, b| {
            a.f0
                .total_cmp(&b.f0)
                .then(a.lap_time.total_cmp(&b.lap_time))
                .then(a.id.cmp(&b.id))
        })
        .ok_or_else(|| Error::NoFeasible("no strategy could be scored on any trace".into()))?
        .id;
    Ok(EvaluationReport { evaluations, best })
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, 0.0);
    }
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn evaluate_strategies(
    ctx: &SdpContext,
    strategies: &[EnergyStrategy],
    traces: &[SimTrace],
) -> Result<EvaluationReport> {
    let per_trace: Vec<Vec<Option<f64>>> = traces
        .par_iter()
        .map(|t| evaluate_trace(ctx, strategies, t))
        .collect();
    aggregate(strategies, &per_trace)
}

/// Runs `n_sims` traces and scores them as they are produced, without
/// keeping the traces.
pub fn evaluate_batch(
    ctx: &SdpContext,
    strategies: &[EnergyStrategy],
    model: &McModel,
    initial: &RaceState,
    n_sims: usize,
    seed: u64,
) -> Result<EvaluationReport> {
    let per_trace = model
        .run_batch_with(initial, n_sims, seed, |_, t| evaluate_trace(ctx, strategies, &t))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    aggregate(strategies, &per_trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StintConfig {
    pub n_laps: usize,
    pub n_sims: usize,
    pub repeats: usize,
    /// Strategy id the gains are measured against.
    pub baseline: usize,
    pub confidence: f64,
}

impl Default for StintConfig {
    fn default() -> Self {
        StintConfig {
            n_laps: 5,
            n_sims: 100,
            repeats: 20,
            baseline: 1,
            confidence: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StintLap {
    pub lap: usize,
    pub chosen: usize,
    pub f0_chosen: f64,
    pub f0_baseline: f64,
    /// Expected lap time saved against the baseline (s).
    pub gain: f64,
    /// Expected ego lap time including traffic (s).
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StintRun {
    pub seed: u64,
    pub laps: Vec<StintLap>,
    pub cumulative_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StintReport {
    pub runs: Vec<StintRun>,
    pub mean_gain: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence: f64,
}

impl StintReport {
    pub fn write<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(
            sink,
            "run,lap,chosen,f0_chosen_s,f0_baseline_s,gain_s,cumulative_gain_s"
        )?;
        for (r, run) in self.runs.iter().enumerate() {
            let mut cum = 0.0;
            for l in &run.laps {
                cum += l.gain;
                writeln!(
                    sink,
                    "{r},{},{},{},{},{},{}",
                    l.lap,
                    l.chosen,
                    fmt_f(l.f0_chosen, 4),
                    fmt_f(l.f0_baseline, 4),
                    fmt_f(l.gain, 4),
                    fmt_f(cum, 4)
                )?;
            }
        }
        writeln!(sink, "# mean_gain={}", fmt_f(self.mean_gain, 4))?;
        writeln!(sink, "# ci_low={}", fmt_f(self.ci_low, 4))?;
        writeln!(sink, "# ci_high={}", fmt_f(self.ci_high, 4))?;
        writeln!(sink, "# confidence={}", self.confidence)?;
        Ok(())
    }
}

/// Seed of lap `lap` within a stint seeded with `seed`.
pub fn lap_seed(seed: u64, lap: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((lap as u64) << 40)
}

/// One stint: each lap picks the strategy with the shortest expected lap
/// on a fresh batch from the current positions, the ego advances by its expected lap time and the
/// competitors follow the first trace of the batch.
pub fn run_stint(
    ctx: &SdpContext,
    strategies: &[EnergyStrategy],
    model: &McModel,
    initial: &RaceState,
    cfg: &StintConfig,
    seed: u64,
) -> Result<StintRun> {
    if cfg.n_laps == 0 || cfg.n_sims == 0 {
        return Err(Error::invalid("a stint needs at least one lap and one trace"));
    }
    let base = strategies
        .iter()
        .position(|s| s.id == cfg.baseline)
        .ok_or_else(|| Error::invalid(format!("baseline strategy {} is not in the set", cfg.baseline)))?;
    let mut state = initial.clone();
    let mut laps = Vec::with_capacity(cfg.n_laps);
    for lap in 1..=cfg.n_laps {
        let rows = model
            .run_batch_with(&state, cfg.n_sims, lap_seed(seed, lap), |i, t| {
                let f = evaluate_trace(ctx, strategies, &t);
                (f, (i == 0).then_some(t))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let mut first = None;
        let mut per_trace = Vec::with_capacity(rows.len());
        for (f, t) in rows {
            per_trace.push(f);
            if t.is_some() {
                first = t;
            }
        }
        let report = aggregate(strategies, &per_trace)?;
        let chosen = report.fastest_expected();
        let baseline = &report.evaluations[base];
        if baseline.coverage == 0.0 {
            return Err(Error::NoFeasible(format!(
                "baseline strategy {} failed on every trace",
                cfg.baseline
            )));
        }
        let duration = chosen.lap_time + chosen.f0;
        laps.push(StintLap {
            lap,
            chosen: chosen.id,
            f0_chosen: chosen.f0,
            f0_baseline: baseline.f0,
            gain: baseline.lap_time + baseline.f0 - duration,
            duration,
        });
        let trace = first.expect("first trace kept");
        state = RaceState {
            t: state.t + duration,
            cars: state
                .cars
                .iter()
                .enumerate()
                .map(|(i, c)| crate::mc_sim::CarState {
                    s: trace.position(i, duration),
                    ..*c
                })
                .collect(),
        };
    }
    let cumulative_gain = laps.iter().map(|l| l.gain).sum();
    Ok(StintRun {
        seed,
        laps,
        cumulative_gain,
    })
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `cfg.repeats` independent stints seeded `seed + r`; the interval is the
/// central `confidence` percentile range of their cumulative gains.
pub fn evaluate_stint(
    ctx: &SdpContext,
    strategies: &[EnergyStrategy],
    model: &McModel,
    initial: &RaceState,
    cfg: &StintConfig,
    seed: u64,
) -> Result<StintReport> {
    if cfg.repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    let runs = (0..cfg.repeats)
        .map(|r| run_stint(ctx, strategies, model, initial, cfg, seed.wrapping_add(r as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut gains: Vec<f64> = runs.iter().map(|r| r.cumulative_gain).collect();
    gains.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - cfg.confidence);
    Ok(StintReport {
        mean_gain: gains.iter().sum::<f64>() / gains.len() as f64,
        ci_low: quantile(&gains, tail),
        ci_high: quantile(&gains, 1.0 - tail),
        confidence: cfg.confidence,
        runs,
    })
}
