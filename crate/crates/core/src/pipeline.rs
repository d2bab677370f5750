//! Stage orchestration behind the command-line tool.
//!
//! Every stage reads its inputs from the configured paths or from upstream
//! stage directories under `out_dir`, and writes its artifacts plus a
//! `manifest.json` (input/output SHA-256 hashes, seed, tool version and the
//! stage configuration) into its own directory.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ga_opt::{
    generate_strategy_set, write_index, EnergyStrategy, GaConfig, GaProblem, StrategyConstraint, StrategyRecord,
};
use crate::ingest::{clean_laps, parse_sector_times, write_rejection_report, write_sector_times, DEFAULT_EPS, DEFAULT_MIN_PTS};
use crate::mc_sim::{trace_seed, CarState, McConfig, McModel, RaceState, EVENTS_HEADER, POSITIONS_HEADER};
use crate::sdp::{build_tree, evaluate_batch, evaluate_stint, SdpConfig, SdpContext, StintConfig};
use crate::stats::{
    compute_overtaking_probabilities, extract_free_sector_times, FreeSectorTimes, OvertakingTable, RacePositions,
    ReferenceProfile, DEFAULT_DT, DEFAULT_GAP_THRESHOLD, DEFAULT_PROXIMITY,
};
use crate::synth::{generate, SynthConfig};
use crate::table::{read_to_string, write_file, Delimiter};
use crate::vehicle::{LapSimulator, TrackGeometry, VehicleParams};
use crate::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Sector-time table; defaults to the `synth` output.
    pub sector_times: Option<PathBuf>,
    pub geometry: Option<PathBuf>,
    pub vehicle: Option<PathBuf>,
    /// Reference speed profile; its sector sidecar sits next to it with a
    /// `.toml` extension.
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub eps: f64,
    pub min_pts: usize,
    pub delimiter: Delimiter,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            eps: DEFAULT_EPS,
            min_pts: DEFAULT_MIN_PTS,
            delimiter: Delimiter::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub gap_threshold: f64,
    pub proximity: f64,
    pub dt: f64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            gap_threshold: DEFAULT_GAP_THRESHOLD,
            proximity: DEFAULT_PROXIMITY,
            dt: DEFAULT_DT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub ga: GaConfig,
    /// Explicit constraint list; when empty, `n_strategies` specs are derived
    /// from the circuit's straights.
    pub strategies: Vec<StrategyConstraint>,
    pub n_strategies: usize,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            ga: GaConfig::default(),
            strategies: Vec::new(),
            n_strategies: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub mc: McConfig,
    pub n_sims: usize,
    /// Traces whose full position series is written out.
    pub export_traces: usize,
    /// Write every n-th time sample of the exported traces.
    pub export_every: usize,
    /// Race time of the initial state; defaults to the first sample at which
    /// every competitor is on track.
    pub start_time: Option<f64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            mc: McConfig::default(),
            n_sims: 1000,
            export_traces: 5,
            export_every: 5,
            start_time: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub sdp: SdpConfig,
    /// Decision trees of the best strategy dumped for the first traces.
    pub dump_trees: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Mandatory for every randomised stage.
    pub seed: Option<u64>,
    pub paths: Paths,
    pub ingest: IngestConfig,
    pub stats: StatsConfig,
    pub optimize: OptimizeConfig,
    pub simulate: SimulateConfig,
    pub evaluate: EvaluateConfig,
    pub stint: StintConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read_to_string(path)?)
    }

    fn out(&self) -> PathBuf {
        if self.out_dir.as_os_str().is_empty() {
            PathBuf::from("out")
        } else {
            self.out_dir.clone()
        }
    }

    fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out().join(stage.name())
    }

    fn seed_for(&self, stage: Stage) -> Result<u64> {
        self.seed.ok_or_else(|| {
            Error::invalid(format!(
                "stage {} is randomised and needs a seed (set `seed` or pass --seed)",
                stage.name()
            ))
        })
    }

    fn input(&self, given: &Option<PathBuf>, synth_name: &str) -> (PathBuf, bool) {
        match given {
            Some(p) => (p.clone(), false),
            None => (self.stage_dir(Stage::Synth).join(synth_name), true),
        }
    }

    /// Checks that configured input files exist.
    pub fn validate(&self) -> Result<()> {
        for p in [
            &self.paths.sector_times,
            &self.paths.geometry,
            &self.paths.vehicle,
            &self.paths.reference,
        ]
        .into_iter()
        .flatten()
        {
            if !p.exists() {
                return Err(Error::invalid(format!("configured input {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Ingest,
    Stats,
    Optimize,
    Simulate,
    Evaluate,
    Stint,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::Stats,
        Stage::Optimize,
        Stage::Simulate,
        Stage::Evaluate,
        Stage::Stint,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Stats => "stats",
            Stage::Optimize => "optimize",
            Stage::Simulate => "simulate",
            Stage::Evaluate => "evaluate",
            Stage::Stint => "stint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Holds `<out_dir>/.lock` for the lifetime of one invocation.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let path = out_dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(out_dir.to_path_buf())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Collects the files a stage reads and writes.
struct StageRun<'c> {
    cfg: &'c RunConfig,
    stage: Stage,
    dir: PathBuf,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
}

impl<'c> StageRun<'c> {
    fn new(cfg: &'c RunConfig, stage: Stage) -> Result<Self> {
        let dir = cfg.stage_dir(stage);
        Ok(StageRun {
            cfg,
            stage,
            dir,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn label(&self, path: &Path) -> String {
        let out = self.cfg.out();
        path.strip_prefix(&out)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }

    /// Reads an input, reporting the upstream command when it is missing.
    fn read(&mut self, path: &Path, producer: Option<Stage>) -> Result<String> {
        if !path.exists() {
            return Err(match producer {
                Some(stage) => Error::MissingArtifact {
                    path: path.to_path_buf(),
                    command: stage.name().to_string(),
                },
                None => Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "file not found")),
            });
        }
        let text = read_to_string(path)?;
        self.inputs.push(FileHash {
            path: self.label(path),
            sha256: sha256_hex(text.as_bytes()),
        });
        Ok(text)
    }

    fn upstream(&mut self, stage: Stage, name: &str) -> Result<String> {
        let path = self.cfg.stage_dir(stage).join(name);
        self.read(&path, Some(stage))
    }

    fn configured(&mut self, given: &Option<PathBuf>, synth_name: &str) -> Result<String> {
        let (path, from_synth) = self.cfg.input(given, synth_name);
        self.read(&path, from_synth.then_some(Stage::Synth))
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_file(&path, bytes)?;
        self.outputs.push(FileHash {
            path: self.label(&path),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    fn finish<T: Serialize>(self, seed: Option<u64>, config: &T) -> Result<Manifest> {
        let m = Manifest {
            stage: self.stage.name().to_string(),
            tool_version: TOOL_VERSION.to_string(),
            seed,
            config: serde_json::to_value(config)?,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let text = serde_json::to_string_pretty(&m)? + "\n";
        write_file(&self.dir.join("manifest.json"), text.as_bytes())?;
        Ok(m)
    }
}

fn sidecar_path(reference: &Path) -> PathBuf {
    reference.with_extension("toml")
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<Manifest> {
    let seed = cfg.seed_for(Stage::Synth)?;
    let scfg = SynthConfig {
        seed,
        ..cfg.synth.clone()
    };
    let mut run = StageRun::new(cfg, Stage::Synth)?;
    let ds = generate(&scfg)?;
    run.write("sector_times.csv", &csv_bytes(|b| write_sector_times(&ds.records, b))?)?;
    run.write("track.csv", &csv_bytes(|b| ds.geometry.write(b))?)?;
    run.write("vehicle.toml", ds.params.to_toml_string()?.as_bytes())?;
    let (profile, sidecar) = ds.reference.write()?;
    run.write("reference.csv", profile.as_bytes())?;
    run.write("reference.toml", sidecar.as_bytes())?;
    run.write("truth_overtaking.csv", &csv_bytes(|b| ds.truth.write(b))?)?;
    let mut planted = String::from("car,lap\n");
    for (car, lap) in &ds.outliers {
        planted.push_str(&format!("{car},{lap}\n"));
    }
    run.write("planted_outliers.csv", planted.as_bytes())?;
    run.finish(Some(seed), &scfg)
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<Manifest> {
    let mut run = StageRun::new(cfg, Stage::Ingest)?;
    let text = run.configured(&cfg.paths.sector_times, "sector_times.csv")?;
    let records = parse_sector_times(text.as_bytes(), cfg.ingest.delimiter)?;
    let set = clean_laps(&records, cfg.ingest.eps, cfg.ingest.min_pts)?;
    for w in &set.warnings {
        log::warn!("{w}");
    }
    let retained: Vec<_> = set.retained().cloned().collect();
    run.write("cleaned.csv", &csv_bytes(|b| write_sector_times(&retained, b))?)?;
    run.write("rejected.csv", &csv_bytes(|b| write_rejection_report(&set, b))?)?;
    log::info!(
        "ingest: {} laps kept, {} rejected",
        retained.len(),
        records.len() - retained.len()
    );
    run.finish(None, &cfg.ingest)
}

struct Inputs {
    geometry: TrackGeometry,
    params: VehicleParams,
    reference: ReferenceProfile,
}

fn load_track(run: &mut StageRun, cfg: &RunConfig) -> Result<Inputs> {
    let geometry = TrackGeometry::parse(&run.configured(&cfg.paths.geometry, "track.csv")?)?;
    let params = VehicleParams::from_toml_str(&run.configured(&cfg.paths.vehicle, "vehicle.toml")?)?;
    let (ref_path, from_synth) = cfg.input(&cfg.paths.reference, "reference.csv");
    let producer = from_synth.then_some(Stage::Synth);
    let profile = run.read(&ref_path, producer)?;
    let sidecar = run.read(&sidecar_path(&ref_path), producer)?;
    let reference = ReferenceProfile::parse(&profile, &sidecar)?;
    if (reference.length() - geometry.length).abs() > 1e-6 {
        return Err(Error::GridMismatch(format!(
            "reference profile covers {} m, circuit is {} m",
            reference.length(),
            geometry.length
        )));
    }
    Ok(Inputs {
        geometry,
        params,
        reference,
    })
}

fn load_positions(run: &mut StageRun, cfg: &RunConfig, reference: &ReferenceProfile) -> Result<(RacePositions, Vec<(u32, u32)>)> {
    let raw = run.configured(&cfg.paths.sector_times, "sector_times.csv")?;
    let records = parse_sector_times(raw.as_bytes(), cfg.ingest.delimiter)?;
    let cleaned = run.upstream(Stage::Ingest, "cleaned.csv")?;
    let kept: Vec<(u32, u32)> = parse_sector_times(cleaned.as_bytes(), Delimiter::Comma)?
        .iter()
        .map(|r| (r.car_number, r.lap))
        .collect();
    let positions = RacePositions::from_records(&records, reference, cfg.stats.dt)?;
    Ok((positions, kept))
}

pub fn cmd_stats(cfg: &RunConfig) -> Result<Manifest> {
    let mut run = StageRun::new(cfg, Stage::Stats)?;
    let inputs = load_track(&mut run, cfg)?;
    let (positions, kept) = load_positions(&mut run, cfg, &inputs.reference)?;
    let kept: std::collections::BTreeSet<(u32, u32)> = kept.into_iter().collect();
    let retained = |car: u32, lap: u32| kept.contains(&(car, lap));
    let free = extract_free_sector_times(&positions, cfg.stats.gap_threshold, retained);
    for (car, sector) in &free.flagged {
        log::warn!("car {car} has no free traversal of sector {sector}");
    }
    let sections = inputs.geometry.section_map();
    let table = compute_overtaking_probabilities(&positions, cfg.stats.proximity, &sections, retained);
    run.write("free_sector_times.csv", &csv_bytes(|b| free.write(b))?)?;
    run.write("overtaking.csv", &csv_bytes(|b| table.write(b))?)?;
    run.finish(None, &cfg.stats)
}

/// Constraint specs derived from the circuit: no constraint, then bans of
/// growing length on each straight, then the same ban on every straight.
pub fn default_strategy_specs(geometry: &TrackGeometry, n: usize) -> Vec<StrategyConstraint> {
    let straights = geometry.straights();
    let lengths: Vec<f64> = straights
        .iter()
        .map(|s| (s.end - s.first) as f64 * geometry.delta_s)
        .collect();
    let longest = lengths.iter().cloned().fold(0.0, f64::max);
    let mut specs = vec![StrategyConstraint::none()];
    let mut order = Vec::new();
    let mut m = 100.0;
    while m <= longest {
        order.push(m);
        m += 100.0;
    }
    let mut m = 50.0;
    while m <= longest {
        order.push(m);
        m += 100.0;
    }
    for &meters in &order {
        for (i, len) in lengths.iter().enumerate() {
            if meters <= *len {
                specs.push(StrategyConstraint::ban(i + 1, meters));
            }
        }
    }
    for &meters in &order {
        let bans: Vec<_> = lengths
            .iter()
            .enumerate()
            .filter(|(_, len)| meters <= **len)
            .map(|(i, _)| crate::ga_opt::Ban {
                straight: i + 1,
                meters,
            })
            .collect();
        if bans.len() > 1 {
            specs.push(StrategyConstraint { bans });
        }
    }
    specs.truncate(n.max(1));
    specs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyFile {
    pub v_start: f64,
    pub strategies: Vec<StrategyRecord>,
    pub failures: Vec<String>,
}

pub fn cmd_optimize(cfg: &RunConfig) -> Result<Manifest> {
    let seed = cfg.seed_for(Stage::Optimize)?;
    let mut run = StageRun::new(cfg, Stage::Optimize)?;
    let inputs = load_track(&mut run, cfg)?;
    let sim = LapSimulator::new(inputs.geometry.clone(), inputs.params.clone())?;
    let v_start = sim.flying_start()?;
    let problem = GaProblem::new(&sim, v_start);
    let specs = if cfg.optimize.strategies.is_empty() {
        default_strategy_specs(&inputs.geometry, cfg.optimize.n_strategies)
    } else {
        cfg.optimize.strategies.clone()
    };
    let ga = GaConfig {
        seed,
        ..cfg.optimize.ga.clone()
    };
    let set = generate_strategy_set(&problem, &specs, &ga, &[])?;
    if set.strategies.is_empty() {
        return Err(Error::NoFeasible("every strategy run failed".into()));
    }
    let records: Vec<StrategyRecord> = set.strategies.iter().map(StrategyRecord::from).collect();
    let file = StrategyFile {
        v_start,
        strategies: records.clone(),
        failures: set
            .failures
            .iter()
            .map(|(id, c, e)| format!("{id} ({c}): {e}"))
            .collect(),
    };
    run.write("strategies.json", (serde_json::to_string_pretty(&file)? + "\n").as_bytes())?;
    run.write("strategies.csv", &csv_bytes(|b| write_index(&records, b))?)?;
    for s in &set.strategies {
        let name = format!("laps/strategy_{:02}.csv", s.id);
        run.write(&name, &csv_bytes(|b| s.lap.write(&inputs.geometry, b))?)?;
    }
    run.finish(Some(seed), &(&specs, &ga))
}

/// Rebuilds the strategies of the optimize stage by replaying their genomes.
pub fn load_strategies(file: &StrategyFile, sim: &LapSimulator) -> Result<Vec<EnergyStrategy>> {
    let problem = GaProblem::new(sim, file.v_start);
    file.strategies
        .iter()
        .map(|r| {
            let lap = problem.simulate(&r.genome, &r.constraint)?;
            if (lap.lap_time - r.lap_time).abs() > 1e-6 * r.lap_time.max(1.0) {
                return Err(Error::invalid(format!(
                    "strategy {} replays to {} s instead of {} s",
                    r.id, lap.lap_time, r.lap_time
                )));
            }
            Ok(EnergyStrategy {
                id: r.id,
                constraint: r.constraint.clone(),
                genome: r.genome.clone(),
                lap_time: lap.lap_time,
                lap,
                generations: 0,
                evaluations: 0,
            })
        })
        .collect()
}

/// Competitor positions at `start_time` (or at the first sample where every
/// car with a complete free distribution is on track).
pub fn initial_state(positions: &RacePositions, free: &FreeSectorTimes, start_time: Option<f64>) -> Result<RaceState> {
    let usable: Vec<usize> = positions
        .cars
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            let ok = free
                .cars
                .get(&c.car)
                .map_or(false, |f| f.times.iter().all(|t| !t.is_empty()));
            if !ok {
                log::warn!("car {} has no complete free-time distribution and is left out", c.car);
            }
            ok
        })
        .map(|(i, _)| i)
        .collect();
    if usable.is_empty() {
        return Err(Error::invalid("no competitor has a complete free-time distribution"));
    }
    let k = match start_time {
        Some(t) => (t / positions.dt).round().max(0.0) as usize,
        None => {
            let first = usable.iter().map(|&i| positions.cars[i].start).max().unwrap();
            (first..positions.n_samples())
                .find(|&k| usable.iter().all(|&i| positions.cars[i].at(k).is_some()))
                .ok_or_else(|| Error::invalid("competitors are never on track together"))?
        }
    };
    let cars = usable
        .iter()
        .filter_map(|&i| {
            let c = &positions.cars[i];
            c.at(k).map(|s| CarState {
                car: c.car,
                class: c.class,
                s,
            })
        })
        .collect();
    let state = RaceState {
        t: k as f64 * positions.dt,
        cars,
    };
    state.validate(positions.length)?;
    Ok(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchFile {
    pub base_seed: u64,
    pub n_sims: usize,
    pub horizon_s: f64,
    pub seeds: Vec<u64>,
    pub initial: RaceState,
    pub events: usize,
    pub missing_p: usize,
}

struct Stats {
    free: FreeSectorTimes,
    table: OvertakingTable,
}

fn load_stats(run: &mut StageRun) -> Result<Stats> {
    let free = FreeSectorTimes::parse(run.upstream(Stage::Stats, "free_sector_times.csv")?.as_bytes())?;
    let table = OvertakingTable::parse(run.upstream(Stage::Stats, "overtaking.csv")?.as_bytes())?;
    Ok(Stats { free, table })
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Manifest> {
    let seed = cfg.seed_for(Stage::Simulate)?;
    if cfg.simulate.n_sims == 0 {
        return Err(Error::invalid("n_sims must be at least 1"));
    }
    let mut run = StageRun::new(cfg, Stage::Simulate)?;
    let inputs = load_track(&mut run, cfg)?;
    let stats = load_stats(&mut run)?;
    let (positions, _) = load_positions(&mut run, cfg, &inputs.reference)?;
    let initial = initial_state(&positions, &stats.free, cfg.simulate.start_time)?;
    let model = McModel {
        reference: &inputs.reference,
        free: &stats.free,
        table: &stats.table,
        sections: inputs.geometry.section_map(),
        config: cfg.simulate.mc.clone(),
    };
    let export = cfg.simulate.export_traces;
    let every = cfg.simulate.export_every;
    let chunks = model
        .run_batch_with(&initial, cfg.simulate.n_sims, seed, |i, t| -> Result<(Vec<u8>, Vec<u8>, usize, usize)> {
            let mut ev = Vec::new();
            t.write_events(i, &mut ev)?;
            let mut pos = Vec::new();
            if i < export {
                t.write_positions(i, every, &mut pos)?;
            }
            Ok((ev, pos, t.events.len(), t.missing_p))
        })
        .into_iter()
        .map(|r| r.and_then(|x| x))
        .collect::<Result<Vec<_>>>()?;
    let mut events = format!("{EVENTS_HEADER}\n").into_bytes();
    let mut pos = format!("{POSITIONS_HEADER}\n").into_bytes();
    let (mut n_events, mut missing) = (0, 0);
    for (e, p, ne, m) in chunks {
        events.extend(e);
        pos.extend(p);
        n_events += ne;
        missing += m;
    }
    if missing > 0 {
        log::warn!("{missing} overtaking decisions had no probability data and used p = 0");
    }
    let batch = BatchFile {
        base_seed: seed,
        n_sims: cfg.simulate.n_sims,
        horizon_s: model.horizon(),
        seeds: (0..cfg.simulate.n_sims).map(|i| trace_seed(seed, i)).collect(),
        initial,
        events: n_events,
        missing_p: missing,
    };
    run.write("batch.json", (serde_json::to_string_pretty(&batch)? + "\n").as_bytes())?;
    run.write("events.csv", &events)?;
    run.write("positions.csv", &pos)?;
    run.finish(Some(seed), &cfg.simulate)
}

struct Prepared {
    inputs: Inputs,
    stats: Stats,
    batch: BatchFile,
    file: StrategyFile,
}

fn prepare(run: &mut StageRun, cfg: &RunConfig) -> Result<Prepared> {
    let batch: BatchFile = serde_json::from_str(&run.upstream(Stage::Simulate, "batch.json")?)?;
    let file: StrategyFile = serde_json::from_str(&run.upstream(Stage::Optimize, "strategies.json")?)?;
    let inputs = load_track(run, cfg)?;
    let stats = load_stats(run)?;
    Ok(Prepared {
        inputs,
        stats,
        batch,
        file,
    })
}

/// Everything the evaluation stages read, loaded from a finished run.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub geometry: TrackGeometry,
    pub params: VehicleParams,
    pub reference: ReferenceProfile,
    pub free: FreeSectorTimes,
    pub table: OvertakingTable,
    pub batch: BatchFile,
    pub strategies: StrategyFile,
}

impl Artifacts {
    pub fn simulator(&self) -> Result<LapSimulator> {
        LapSimulator::new(self.geometry.clone(), self.params.clone())
    }

    pub fn model(&self, config: McConfig) -> McModel<'_> {
        McModel {
            reference: &self.reference,
            free: &self.free,
            table: &self.table,
            sections: self.geometry.section_map(),
            config,
        }
    }
}

/// Loads the outputs of synth (or the configured inputs) through simulate.
pub fn load_artifacts(cfg: &RunConfig) -> Result<Artifacts> {
    let mut run = StageRun::new(cfg, Stage::Evaluate)?;
    let p = prepare(&mut run, cfg)?;
    Ok(Artifacts {
        geometry: p.inputs.geometry,
        params: p.inputs.params,
        reference: p.inputs.reference,
        free: p.stats.free,
        table: p.stats.table,
        batch: p.batch,
        strategies: p.file,
    })
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Manifest> {
    let mut run = StageRun::new(cfg, Stage::Evaluate)?;
    let p = prepare(&mut run, cfg)?;
    let sim = LapSimulator::new(p.inputs.geometry.clone(), p.inputs.params.clone())?;
    let strategies = load_strategies(&p.file, &sim)?;
    let model = McModel {
        reference: &p.inputs.reference,
        free: &p.stats.free,
        table: &p.stats.table,
        sections: p.inputs.geometry.section_map(),
        config: cfg.simulate.mc.clone(),
    };
    let ctx = SdpContext::new(&sim, &p.stats.table, cfg.evaluate.sdp.clone());
    let report = evaluate_batch(&ctx, &strategies, &model, &p.batch.initial, p.batch.n_sims, p.batch.base_seed)?;
    if ctx.missing_p() > 0 {
        log::warn!("{} encounters had no probability data and used p = 0", ctx.missing_p());
    }
    if ctx.truncated() > 0 {
        log::warn!("{} decision trees hit the node budget", ctx.truncated());
    }
    run.write("evaluation.csv", &csv_bytes(|b| report.write(b))?)?;
    let mut per = String::from("trace,strategy,f0_s\n");
    for e in &report.evaluations {
        for (t, f) in e.per_trace.iter().enumerate() {
            let v = f.map(|x| format!("{x:.6}")).unwrap_or_default();
            per.push_str(&format!("{t},{},{v}\n", e.id));
        }
    }
    run.write("per_trace.csv", per.as_bytes())?;
    let best = strategies.iter().find(|s| s.id == report.best).expect("best strategy loaded");
    for i in 0..cfg.evaluate.dump_trees.min(p.batch.n_sims) {
        let trace = model.simulate(&p.batch.initial, trace_seed(p.batch.base_seed, i))?;
        let tree = build_tree(&ctx, &best.lap, &trace)?;
        run.write(&format!("trees/trace_{i:04}.txt"), &csv_bytes(|b| tree.dump(b))?)?;
    }
    log::info!(
        "best strategy {} ({}) with f0 = {:.3} s",
        report.best,
        report.best().label,
        report.best().f0
    );
    run.finish(Some(p.batch.base_seed), &cfg.evaluate)
}

pub fn cmd_stint(cfg: &RunConfig) -> Result<Manifest> {
    let seed = cfg.seed_for(Stage::Stint)?;
    let mut run = StageRun::new(cfg, Stage::Stint)?;
    let p = prepare(&mut run, cfg)?;
    let sim = LapSimulator::new(p.inputs.geometry.clone(), p.inputs.params.clone())?;
    let strategies = load_strategies(&p.file, &sim)?;
    let model = McModel {
        reference: &p.inputs.reference,
        free: &p.stats.free,
        table: &p.stats.table,
        sections: p.inputs.geometry.section_map(),
        config: cfg.simulate.mc.clone(),
    };
    let ctx = SdpContext::new(&sim, &p.stats.table, cfg.evaluate.sdp.clone());
    let report = evaluate_stint(&ctx, &strategies, &model, &p.batch.initial, &cfg.stint, seed)?;
    run.write("stint.csv", &csv_bytes(|b| report.write(b))?)?;
    log::info!(
        "stint gain {:.3} s, {:.0}% interval [{:.3}, {:.3}]",
        report.mean_gain,
        100.0 * report.confidence,
        report.ci_low,
        report.ci_high
    );
    run.finish(Some(seed), &cfg.stint)
}

pub fn run_stage(cfg: &RunConfig, stage: Stage) -> Result<Manifest> {
    match stage {
        Stage::Synth => cmd_synth(cfg),
        Stage::Ingest => cmd_ingest(cfg),
        Stage::Stats => cmd_stats(cfg),
        Stage::Optimize => cmd_optimize(cfg),
        Stage::Simulate => cmd_simulate(cfg),
        Stage::Evaluate => cmd_evaluate(cfg),
        Stage::Stint => cmd_stint(cfg),
    }
}

/// Runs `stages` in order under one output lock.
pub fn run_stages(cfg: &RunConfig, stages: &[Stage]) -> Result<Vec<Manifest>> {
    cfg.validate()?;
    let _lock = OutputLock::acquire(&cfg.out())?;
    stages.iter().map(|s| run_stage(cfg, *s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_upstream_names_the_command() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            out_dir: dir.path().to_path_buf(),
            seed: Some(1),
            ..RunConfig::default()
        };
        let err = run_stages(&cfg, &[Stage::Evaluate]).unwrap_err();
        assert!(err.to_string().contains("run simulate first"), "{err}");
        let err = run_stages(&cfg, &[Stage::Ingest]).unwrap_err();
        assert!(err.to_string().contains("run synth first"), "{err}");
    }

    #[test]
    fn lock_rejects_second_holder() {
        let dir = tempfile::tempdir().unwrap();
        let a = OutputLock::acquire(dir.path()).unwrap();
        assert!(matches!(OutputLock::acquire(dir.path()), Err(Error::Locked(_))));
        drop(a);
        OutputLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn stochastic_stages_need_a_seed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            out_dir: dir.path().to_path_buf(),
            ..RunConfig::default()
        };
        let err = run_stages(&cfg, &[Stage::Synth]).unwrap_err();
        assert!(err.to_string().contains("needs a seed"));
    }

    #[test]
    fn default_specs_on_the_oval() {
        let g = crate::synth::Preset::Oval1km
            .geometry(2.0, &VehicleParams::default())
            .unwrap();
        let specs = default_strategy_specs(&g, 15);
        assert_eq!(specs.len(), 15);
        assert!(specs[0].bans.is_empty());
        assert_eq!(specs[1], StrategyConstraint::ban(1, 100.0));
        let mut uniq = specs.clone();
        uniq.dedup();
        assert_eq!(uniq.len(), 15);
    }
}
