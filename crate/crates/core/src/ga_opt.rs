//! Genetic search over per-region electric and fuel budgets.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::miqcp::Caps;
use crate::vehicle::{BudgetPlan, Control, LapResult, LapSimulator, PowertrainMode, TrackGeometry};
use crate::{Error, Result};

/// Smallest accepted ban length (m); shorter bans are configuration errors.
pub const MIN_BAN: f64 = 50.0;
/// Bans shorter than this are accepted with a warning (m).
pub const NOMINAL_BAN: f64 = 100.0;
/// Recommended lower bound on the population (23 per gene).
pub const MIN_POPULATION: usize = 184;

/// Per-region budgets: electric energy in kJ, fuel in g.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Genome {
    pub el: Vec<u32>,
    pub fuel: Vec<u32>,
}

impl Genome {
    pub fn regions(&self) -> usize {
        self.el.len()
    }

    pub fn el_total(&self) -> u64 {
        self.el.iter().map(|x| *x as u64).sum()
    }

    pub fn fuel_total(&self) -> u64 {
        self.fuel.iter().map(|x| *x as u64).sum()
    }

    fn gene(&self, i: usize) -> u32 {
        let m = self.el.len();
        if i < m {
            self.el[i]
        } else {
            self.fuel[i - m]
        }
    }

    fn set_gene(&mut self, i: usize, x: u32) {
        let m = self.el.len();
        if i < m {
            self.el[i] = x;
        } else {
            self.fuel[i - m] = x;
        }
    }
}

/// Electric drive forbidden over the first `meters` of a straight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ban {
    /// 1-based straight number in lap order.
    pub straight: usize,
    pub meters: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConstraint {
    #[serde(default)]
    pub bans: Vec<Ban>,
}

impl StrategyConstraint {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn ban(straight: usize, meters: f64) -> Self {
        StrategyConstraint {
            bans: vec![Ban { straight, meters }],
        }
    }

    pub fn validate(&self, geometry: &TrackGeometry) -> Result<()> {
        let n = geometry.straights().len();
        for b in &self.bans {
            if b.straight == 0 || b.straight > n {
                return Err(Error::invalid(format!(
                    "ban on straight {} but the circuit has {n} straights",
                    b.straight
                )));
            }
            if !(b.meters >= MIN_BAN) {
                return Err(Error::invalid(format!(
                    "ban on straight {} is {} m, below the {MIN_BAN} m minimum",
                    b.straight, b.meters
                )));
            }
            if b.meters < NOMINAL_BAN {
                log::warn!(
                    "ban on straight {} is {} m, shorter than {NOMINAL_BAN} m",
                    b.straight,
                    b.meters
                );
            }
        }
        Ok(())
    }

    /// Grid points where electric drive is forbidden.
    pub fn banned_points(&self, geometry: &TrackGeometry) -> Vec<bool> {
        let straights = geometry.straights();
        let mut out = vec![false; geometry.points.len()];
        for b in &self.bans {
            if let Some(st) = straights.get(b.straight.wrapping_sub(1)) {
                let count = (b.meters / geometry.delta_s).round() as usize;
                let end = (st.first + count).min(st.end);
                for x in &mut out[st.first..end] {
                    *x = true;
                }
            }
        }
        out
    }
}

impl fmt::Display for StrategyConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.bans.is_empty() {
            return f.write_str("No constraints");
        }
        for (i, b) in self.bans.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "No KERS first {} m straight {}", b.meters, b.straight)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    /// Stop after this many generations without improvement.
    pub patience: usize,
    pub crossover_rate: f64,
    /// Per-gene mutation probability.
    pub mutation_rate: f64,
    pub elitism: usize,
    pub tournament: usize,
    pub seed: u64,
    /// Upper bound of each electric gene (kJ).
    pub el_gene_max: u32,
    /// Upper bound of each fuel gene (g).
    pub fuel_gene_max: u32,
    pub caps: Caps,
    pub penalty_base: f64,
    pub penalty_per_unit: f64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 2000,
            generations: 60,
            patience: 15,
            crossover_rate: 0.9,
            mutation_rate: 1.0 / 16.0,
            elitism: 20,
            tournament: 4,
            seed: 0,
            el_gene_max: 2300,
            fuel_gene_max: 1381,
            caps: Caps::default(),
            penalty_base: 1000.0,
            penalty_per_unit: 10.0,
        }
    }
}

impl GaConfig {
    fn validate(&self) -> Result<()> {
        if self.population < 2 || self.tournament == 0 || self.elitism >= self.population {
            return Err(Error::invalid(
                "need population >= 2, tournament >= 1 and elitism < population",
            ));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) || !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::invalid("rates must lie in [0, 1]"));
        }
        if self.population < MIN_POPULATION {
            log::warn!(
                "population {} is below the recommended {MIN_POPULATION}",
                self.population
            );
        }
        Ok(())
    }

    fn el_cap(&self) -> u64 {
        self.caps.el_used_max.floor() as u64
    }

    fn fuel_cap(&self) -> u64 {
        (self.caps.fuel_max * 1000.0 + 1e-9).floor() as u64
    }

    /// Linear budget screening on the genome alone.
    pub fn within_caps(&self, g: &Genome) -> bool {
        g.el_total() <= self.el_cap() && g.fuel_total() <= self.fuel_cap()
    }
}

/// Budget plan of a genome: each region's budgets are spent from the start
/// of the region, skipping banned points, until exhausted.
pub fn decode(genome: &Genome, constraint: &StrategyConstraint, geometry: &TrackGeometry) -> BudgetPlan {
    BudgetPlan {
        el: genome.el.iter().map(|x| *x as f64).collect(),
        fuel: genome.fuel.iter().map(|x| *x as f64 / 1000.0).collect(),
        banned: constraint.banned_points(geometry),
    }
}

/// One optimisation problem: a lap simulator with a fixed flying start.
#[derive(Debug, Clone)]
pub struct GaProblem<'a> {
    pub sim: &'a LapSimulator,
    pub v_start: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub fitness: f64,
    pub lap: Option<LapResult>,
    /// Total constraint excess in kJ and g.
    pub violation: f64,
}

impl<'a> GaProblem<'a> {
    pub fn new(sim: &'a LapSimulator, v_start: f64) -> Self {
        GaProblem { sim, v_start }
    }

    pub fn simulate(&self, genome: &Genome, constraint: &StrategyConstraint) -> Result<LapResult> {
        let plan = decode(genome, constraint, &self.sim.geometry);
        self.sim.simulate(Control::Budgets(&plan), self.v_start)
    }

    /// Lap time plus penalties; `INFINITY` when the lap cannot be completed.
    pub fn evaluate(&self, genome: &Genome, constraint: &StrategyConstraint, cfg: &GaConfig) -> Evaluation {
        let genome_excess = genome.el_total().saturating_sub(cfg.el_cap()) as f64
            + genome.fuel_total().saturating_sub(cfg.fuel_cap()) as f64;
        match self.simulate(genome, constraint) {
            Err(_) => Evaluation {
                fitness: f64::INFINITY,
                lap: None,
                violation: genome_excess,
            },
            Ok(lap) => {
                let [e, f, r] = cfg.caps.violations(&lap);
                let violation = genome_excess.max(e + f * 1000.0) + r;
                let fitness = if violation > 1e-9 {
                    lap.lap_time + cfg.penalty_base + cfg.penalty_per_unit * violation
                } else {
                    lap.lap_time
                };
                Evaluation {
                    fitness,
                    lap: Some(lap),
                    violation,
                }
            }
        }
    }

    pub fn fitness(&self, genome: &Genome, constraint: &StrategyConstraint, cfg: &GaConfig) -> f64 {
        self.evaluate(genome, constraint, cfg).fitness
    }
}

/// Result of one optimisation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyStrategy {
    pub id: usize,
    pub constraint: StrategyConstraint,
    pub genome: Genome,
    pub lap_time: f64,
    pub lap: LapResult,
    pub generations: usize,
    pub evaluations: usize,
}

impl EnergyStrategy {
    pub fn mode_trace(&self) -> &[PowertrainMode] {
        &self.lap.mode
    }

    pub fn label(&self) -> String {
        self.constraint.to_string()
    }
}

fn random_genome(rng: &mut ChaCha8Rng, m: usize, cfg: &GaConfig) -> Genome {
    let mut share = |cap: u64, gene_max: u32| -> Vec<u32> {
        let w: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
        let sum: f64 = w.iter().sum::<f64>().max(1e-12);
        let total = cap as f64 * rng.gen_range(0.5..=1.0);
        w.iter()
            .map(|x| ((total * x / sum).floor() as u32).min(gene_max))
            .collect()
    };
    let el = share(cfg.el_cap(), cfg.el_gene_max);
    let fuel = share(cfg.fuel_cap(), cfg.fuel_gene_max);
    Genome { el, fuel }
}

fn clamp_genome(mut g: Genome, m: usize, cfg: &GaConfig) -> Genome {
    g.el.resize(m, 0);
    g.fuel.resize(m, 0);
    for x in &mut g.el {
        *x = (*x).min(cfg.el_gene_max);
    }
    for x in &mut g.fuel {
        *x = (*x).min(cfg.fuel_gene_max);
    }
    g
}

fn tournament<'p>(rng: &mut ChaCha8Rng, pop: &'p [(Genome, f64)], k: usize) -> &'p Genome {
    let mut best = rng.gen_range(0..pop.len());
    for _ in 1..k {
        let c = rng.gen_range(0..pop.len());
        if pop[c].1 < pop[best].1 || (pop[c].1 == pop[best].1 && c < best) {
            best = c;
        }
    }
    &pop[best].0
}

fn breed(rng: &mut ChaCha8Rng, pop: &[(Genome, f64)], cfg: &GaConfig, sigma: [f64; 2]) -> Genome {
    let a = tournament(rng, pop, cfg.tournament);
    let b = tournament(rng, pop, cfg.tournament);
    let mut child = a.clone();
    let genes = 2 * a.regions();
    if rng.gen::<f64>() < cfg.crossover_rate {
        for i in 0..genes {
            if rng.gen::<bool>() {
                child.set_gene(i, b.gene(i));
            }
        }
    }
    let m = a.regions();
    for i in 0..genes {
        if rng.gen::<f64>() < cfg.mutation_rate {
            let (s, hi) = if i < m {
                (sigma[0], cfg.el_gene_max)
            } else {
                (sigma[1], cfg.fuel_gene_max)
            };
            let step = Normal::new(0.0, s.max(1.0)).unwrap().sample(rng).round();
            let x = (child.gene(i) as f64 + step).clamp(0.0, hi as f64) as u32;
            child.set_gene(i, x);
        }
    }
    child
}

fn sort_population(pop: &mut [(Genome, f64)]) {
    pop.sort_by(|x, y| x.1.total_cmp(&y.1).then_with(|| x.0.cmp(&y.0)));
}

/// Generational GA with tournament selection, uniform crossover, Gaussian
/// integer mutation and elitism. Deterministic for a given seed: all random
/// draws happen on the calling thread, fitness evaluations run in parallel.
pub fn run_ga(
    problem: &GaProblem,
    cfg: &GaConfig,
    constraint: &StrategyConstraint,
    hot_starts: &[Genome],
) -> Result<EnergyStrategy> {
    cfg.validate()?;
    constraint.validate(&problem.sim.geometry)?;
    let m = problem.sim.geometry.n_regions();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cache: HashMap<Genome, f64> = HashMap::new();
    let sigma = [0.05 * cfg.el_gene_max as f64, 0.05 * cfg.fuel_gene_max as f64];

    let evaluate_all = |genomes: Vec<Genome>, cache: &mut HashMap<Genome, f64>| -> Vec<(Genome, f64)> {
        let mut fresh: Vec<Genome> = genomes
            .iter()
            .filter(|g| !cache.contains_key(*g))
            .cloned()
            .collect();
        fresh.sort();
        fresh.dedup();
        let scores: Vec<f64> = fresh
            .par_iter()
            .map(|g| problem.fitness(g, constraint, cfg))
            .collect();
        for (g, f) in fresh.into_iter().zip(scores) {
            cache.insert(g, f);
        }
        genomes
            .into_iter()
            .map(|g| {
                let f = cache[&g];
                (g, f)
            })
            .collect()
    };

    let mut initial: Vec<Genome> = hot_starts
        .iter()
        .take(cfg.population)
        .map(|g| clamp_genome(g.clone(), m, cfg))
        .collect();
    while initial.len() < cfg.population {
        initial.push(random_genome(&mut rng, m, cfg));
    }
    let mut pop = evaluate_all(initial, &mut cache);
    sort_population(&mut pop);
    let mut best = pop[0].1;
    let mut idle = 0;
    let mut generation = 0;
    while generation < cfg.generations && idle < cfg.patience {
        generation += 1;
        let mut next: Vec<Genome> = pop.iter().take(cfg.elitism).map(|p| p.0.clone()).collect();
        while next.len() < cfg.population {
            let mut child = breed(&mut rng, &pop, cfg, sigma);
            for _ in 0..10 {
                if cfg.within_caps(&child) {
                    break;
                }
                child = breed(&mut rng, &pop, cfg, sigma);
            }
            next.push(child);
        }
        pop = evaluate_all(next, &mut cache);
        sort_population(&mut pop);
        if pop[0].1 < best - 1e-12 {
            best = pop[0].1;
            idle = 0;
        } else {
            idle += 1;
        }
    }

    let evaluations = cache.len();
    let winner = pop[0].0.clone();
    let eval = problem.evaluate(&winner, constraint, cfg);
    match eval.lap {
        Some(lap) if eval.violation <= 1e-9 => Ok(EnergyStrategy {
            id: 0,
            constraint: constraint.clone(),
            genome: winner,
            lap_time: lap.lap_time,
            lap,
            generations: generation,
            evaluations,
        }),
        _ => Err(Error::NoFeasible(format!(
            "{constraint}: best genome {:?} has fitness {} and violation {}",
            winner, eval.fitness, eval.violation
        ))),
    }
}

/// Genome reproducing the per-region consumption of a reference lap,
/// scaled down if needed so it respects the caps and gene bounds.
pub fn hot_start_from_lap(lap: &LapResult, geometry: &TrackGeometry, cfg: &GaConfig) -> Genome {
    let (el, fuel) = lap.region_consumption(geometry);
    let fit = |xs: Vec<f64>, cap: u64, gene_max: u32| -> Vec<u32> {
        let total: f64 = xs.iter().sum();
        let scale = if total > cap as f64 { cap as f64 / total } else { 1.0 };
        xs.iter()
            .map(|x| ((x * scale).floor() as u32).min(gene_max))
            .collect()
    };
    Genome {
        el: fit(el, cfg.el_cap(), cfg.el_gene_max),
        fuel: fit(fuel.iter().map(|f| f * 1000.0).collect(), cfg.fuel_cap(), cfg.fuel_gene_max),
    }
}

#[derive(Debug)]
pub struct StrategySet {
    /// Successful runs sorted by lap time; `id` is the position of its constraint.
    pub strategies: Vec<EnergyStrategy>,
    pub failures: Vec<(usize, StrategyConstraint, Error)>,
}

/// One GA run per constraint. Constrained runs go first; their
/// winners then hot-start every unconstrained run, whose feasible set
/// contains theirs.
pub fn generate_strategy_set(
    problem: &GaProblem,
    specs: &[StrategyConstraint],
    cfg: &GaConfig,
    hot_starts: &[Genome],
) -> Result<StrategySet> {
    if specs.is_empty() {
        return Err(Error::invalid("no strategy constraints given"));
    }
    let mut done: Vec<Option<Result<EnergyStrategy>>> = specs.iter().map(|_| None).collect();
    let order: Vec<usize> = (0..specs.len())
        .filter(|i| !specs[*i].bans.is_empty())
        .chain((0..specs.len()).filter(|i| specs[*i].bans.is_empty()))
        .collect();
    for i in order {
        let mut seeds = hot_starts.to_vec();
        if specs[i].bans.is_empty() {
            seeds.extend(done.iter().flatten().filter_map(|r| r.as_ref().ok()).map(|s| s.genome.clone()));
        }
        let run_cfg = GaConfig {
            seed: cfg.seed.wrapping_add(i as u64),
            ..cfg.clone()
        };
        let r = run_ga(problem, &run_cfg, &specs[i], &seeds).map(|mut s| {
            s.id = i + 1;
            s
        });
        if let Err(e) = &r {
            log::warn!("strategy {} ({}) failed: {e}", i + 1, specs[i]);
        }
        done[i] = Some(r);
    }
    let mut strategies = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in done.into_iter().enumerate() {
        match r.unwrap() {
            Ok(s) => strategies.push(s),
            Err(e) => failures.push((i + 1, specs[i].clone(), e)),
        }
    }
    strategies.sort_by(|a, b| a.lap_time.total_cmp(&b.lap_time).then(a.id.cmp(&b.id)));
    Ok(StrategySet {
        strategies,
        failures,
    })
}

/// Stored form of a strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRecord {
    pub id: usize,
    pub label: String,
    pub constraint: StrategyConstraint,
    pub genome: Genome,
    pub lap_time: f64,
    pub fuel_kg: f64,
    pub e_used_kj: f64,
    pub e_rec_kj: f64,
    /// One digit per grid point.
    pub modes: String,
}

impl From<&EnergyStrategy> for StrategyRecord {
    fn from(s: &EnergyStrategy) -> Self {
        StrategyRecord {
            id: s.id,
            label: s.label(),
            constraint: s.constraint.clone(),
            genome: s.genome.clone(),
            lap_time: s.lap_time,
            fuel_kg: s.lap.fuel_used,
            e_used_kj: s.lap.e_el_used,
            e_rec_kj: s.lap.e_el_rec_kers,
            modes: s.lap.mode.iter().map(|m| char::from(b'0' + m.code())).collect(),
        }
    }
}

/// Index table: one row per strategy, fastest first.
pub fn write_index<W: Write>(set: &[StrategyRecord], mut sink: W) -> Result<()> {
    writeln!(sink, "id,constraint,lap_time_s,fuel_kg,e_used_kj,e_rec_kj")?;
    for s in set {
        writeln!(
            sink,
            "{},\"{}\",{:.3},{:.4},{:.1},{:.1}",
            s.id, s.label, s.lap_time, s.fuel_kg, s.e_used_kj, s.e_rec_kj
        )?;
    }
    Ok(())
}
