use lapstrat::ga_opt::{EnergyStrategy, Genome, StrategyConstraint};
use lapstrat::ingest::Class;
use lapstrat::mc_sim::{CarState, McConfig, McModel, Outcome, RaceState, SimTrace};
use lapstrat::sdp::{
    aggregate, backward_pass, build_tree, evaluate_batch, run_stint, DecisionNode, SdpConfig, SdpContext, StintConfig,
};
use lapstrat::stats::{CarFreeTimes, FreeSectorTimes, OvertakingTable, ReferenceProfile};
use lapstrat::synth::Preset;
use lapstrat::vehicle::{Control, LapResult, LapSimulator, VehicleParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const L: f64 = 1000.0;
const N_SECTIONS: usize = 10;

fn oval() -> LapSimulator {
    let params = VehicleParams::default();
    LapSimulator::new(Preset::Oval1km.geometry(2.0, &params).unwrap(), params).unwrap()
}

fn lap(sim: &LapSimulator, control: Control) -> LapResult {
    sim.simulate(control, sim.flying_start_with(control).unwrap()).unwrap()
}

fn flat_table(a: Class, b: Class, p: f64) -> OvertakingTable {
    let mut t = OvertakingTable::new(N_SECTIONS);
    for s in 1..=N_SECTIONS {
        t.add(a, b, s, (p * 100.0).round() as u32, 100);
    }
    t
}

/// Competitors at constant speed `(start, speed)`, sampled every 0.1 s.
fn scripted(cars: &[(f64, f64)], duration: f64) -> SimTrace {
    let dt = 0.1;
    let steps = (duration / dt).ceil() as usize + 1;
    SimTrace {
        seed: 0,
        dt,
        length: L,
        cars: cars
            .iter()
            .enumerate()
            .map(|(i, (s, _))| CarState {
                car: 50 + i as u32,
                class: Class::LmgteAm,
                s: *s,
            })
            .collect(),
        positions: cars
            .iter()
            .map(|(s, v)| (0..steps).map(|k| s + v * k as f64 * dt).collect())
            .collect(),
        drawn: vec![Vec::new(); cars.len()],
        events: Vec::new(),
        missing_p: 0,
    }
}

/// Section in which the unobstructed ego first comes within `prox` of a
/// constant-speed competitor.
fn catch_section(sim: &LapSimulator, ego: &LapResult, start: f64, speed: f64, prox: f64) -> Option<usize> {
    let t = ego.timeline();
    (0..sim.geometry.n_points())
        .find(|k| start + speed * t[*k] - *k as f64 * sim.geometry.delta_s <= prox)
        .map(|k| sim.geometry.points[k].section)
}

fn chain(root: &DecisionNode) -> Vec<&DecisionNode> {
    let mut out = vec![root];
    let mut n = root;
    while let Some(c) = n.children.first() {
        assert_eq!(n.children.len(), 1, "stage {} branches", n.stage);
        out.push(c);
        n = c;
    }
    out
}

#[test]
fn no_competitor_in_reach_gives_a_free_lap() {
    let sim = oval();
    let ego = lap(&sim, Control::Unlimited);
    let table = flat_table(Class::Lmp1, Class::LmgteAm, 0.5);
    let ctx = SdpContext::new(&sim, &table, SdpConfig::default());
    // faster than the ego and far ahead
    let tr = scripted(&[(400.0, 90.0)], 60.0);
    let root = build_tree(&ctx, &ego, &tr).unwrap();
    assert_eq!(root.state, 0);
    assert!(chain(&root).iter().all(|n| n.prob == 1.0 && n.cost == 0.0 && n.branch.is_none()));
    assert_eq!(backward_pass(&root, 1.0).unwrap(), 0.0);
}

fn three_slow_cars() -> Vec<(f64, f64)> {
    vec![(80.0, 20.0), (260.0, 20.0), (420.0, 20.0)]
}

#[test]
fn three_certain_passes_form_a_chain() {
    let sim = oval();
    let ego = lap(&sim, Control::Unlimited);
    let table = flat_table(Class::Lmp1, Class::LmgteAm, 1.0);
    let ctx = SdpContext::new(&sim, &table, SdpConfig::default());
    let cars = three_slow_cars();
    let expected: Vec<usize> = cars
        .iter()
        .map(|(s, v)| catch_section(&sim, &ego, *s, *v, 10.0).unwrap())
        .collect();
    assert!(expected.windows(2).all(|w| w[0] < w[1]), "{expected:?}");
    let root = build_tree(&ctx, &ego, &scripted(&cars, 80.0)).unwrap();
    assert_eq!(root.state, -3);
    let nodes = chain(&root);
    assert_eq!(root.depth(), expected[2]);
    for n in &nodes[1..] {
        assert_eq!(n.prob, 1.0);
        assert_eq!(n.cost, 0.0);
        match expected.iter().position(|s| *s == n.stage) {
            Some(i) => {
                let b = n.branch.unwrap();
                assert_eq!((b.competitor, b.outcome), (50 + i as u32, Outcome::Overtake));
                assert_eq!(n.state, -3 + i as i32 + 1);
            }
            None => assert!(n.branch.is_none(), "stage {}", n.stage),
        }
    }
    assert_eq!(nodes.last().unwrap().state, 0);
    assert_eq!(backward_pass(&root, 1.0).unwrap(), 0.0);
}

#[test]
fn never_passing_costs_the_whole_blocked_lap() {
    let sim = oval();
    let ego = lap(&sim, Control::Unlimited);
    let table = flat_table(Class::Lmp1, Class::LmgteAm, 0.0);
    let ctx = SdpContext::new(&sim, &table, SdpConfig::default());
    let cars = three_slow_cars();
    let first = catch_section(&sim, &ego, cars[0].0, cars[0].1, 10.0).unwrap();
    let root = build_tree(&ctx, &ego, &scripted(&cars, 80.0)).unwrap();
    assert_eq!(root.state, -3);
    let nodes = chain(&root);
    assert_eq!(nodes.len(), N_SECTIONS + 1);
    for n in &nodes[1..] {
        assert_eq!(n.state, -3);
        if n.stage < first {
            assert!(n.branch.is_none());
        } else {
            let b = n.branch.unwrap();
            assert_eq!((b.competitor, b.outcome), (50, Outcome::Follow));
        }
    }
    // the ego crosses the line following_gap behind the first car, then
    // needs to recover from that car's speed
    let fg = SdpConfig::default().following_gap;
    let t_line = (L + fg - cars[0].0) / cars[0].1;
    let recovery = sim.recovery_loss(&ego, 0, cars[0].1).unwrap();
    let f0 = backward_pass(&root, 1.0).unwrap();
    let want = t_line - ego.lap_time + recovery;
    assert!((f0 - want).abs() < 1e-6, "{f0} vs {want}");
}

fn random_tree(rng: &mut ChaCha8Rng, stage: usize, state: i32, prob: f64, cost: f64) -> DecisionNode {
    let mut node = DecisionNode::leaf(stage, state, prob, cost);
    if stage >= 8 || state >= 0 {
        return node;
    }
    if rng.gen_bool(0.4) {
        node.children.push(random_tree(rng, stage + 1, state, 1.0, 0.0));
    } else {
        let p = if rng.gen_bool(0.1) { 1.0 } else { rng.gen_range(0.0..1.0) };
        let mut pass = random_tree(rng, stage + 1, state + 1, p, 0.0);
        pass.branch = Some(lapstrat::sdp::Branch { competitor: 1, outcome: Outcome::Overtake });
        node.children.push(pass);
        if p < 1.0 {
            let c = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..3.0) };
            let mut follow = random_tree(rng, stage + 1, state, 1.0 - p, c);
            follow.branch = Some(lapstrat::sdp::Branch { competitor: 1, outcome: Outcome::Follow });
            node.children.push(follow);
        }
    }
    node
}

fn tree(seed: u64) -> DecisionNode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = -rng.gen_range(1..5);
    random_tree(&mut rng, 0, state, 1.0, 0.0)
}

fn map_costs(n: &DecisionNode, f: &mut impl FnMut(&DecisionNode) -> f64) -> DecisionNode {
    DecisionNode {
        cost: f(n),
        children: n.children.iter().map(|c| map_costs(c, f)).collect(),
        ..n.clone()
    }
}

/// Whether some node reached with positive probability has a positive cost.
fn reachable_cost(n: &DecisionNode, p: f64) -> bool {
    (p > 0.0 && n.cost > 0.0) || n.children.iter().any(|c| reachable_cost(c, p * c.prob))
}

fn leaf_mass(n: &DecisionNode, p: f64) -> f64 {
    if n.children.is_empty() {
        p
    } else {
        n.children.iter().map(|c| leaf_mass(c, p * c.prob)).sum()
    }
}

fn check_structure(n: &DecisionNode) -> Result<(), TestCaseError> {
    prop_assert!(n.state <= 0);
    if !n.children.is_empty() {
        let s: f64 = n.children.iter().map(|c| c.prob).sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(n.state < 0, "terminal state expanded");
    }
    for c in &n.children {
        prop_assert_eq!(c.stage, n.stage + 1);
        match c.branch.map(|b| b.outcome) {
            Some(Outcome::Overtake) => prop_assert_eq!(c.state, n.state + 1),
            _ => prop_assert_eq!(c.state, n.state),
        }
        if c.branch.is_none() {
            prop_assert_eq!(n.children.len(), 1);
            prop_assert_eq!((c.prob, c.cost), (1.0, 0.0));
        }
        check_structure(c)?;
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn cost_scaling_and_positivity(seed in any::<u64>(), k in 0.01f64..50.0) {
        let t = tree(seed);
        let f = backward_pass(&t, 1.0).unwrap();
        prop_assert!(f >= 0.0);
        prop_assert_eq!(f == 0.0, !reachable_cost(&t, 1.0));
        let scaled = map_costs(&t, &mut |n| n.cost * k);
        let g = backward_pass(&scaled, 1.0).unwrap();
        prop_assert!((g - k * f).abs() <= 1e-9 * (1.0 + k * f));
        prop_assert!((leaf_mass(&t, 1.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn raising_a_cost_never_lowers_f0(seed in any::<u64>(), pick in any::<prop::sample::Index>(), extra in 0.0f64..5.0) {
        let t = tree(seed);
        let n = t.node_count();
        let target = pick.index(n);
        let mut i = 0;
        let raised = map_costs(&t, &mut |node| {
            let c = if i == target { node.cost + extra } else { node.cost };
            i += 1;
            c
        });
        prop_assert!(backward_pass(&raised, 1.0).unwrap() >= backward_pass(&t, 1.0).unwrap() - 1e-12);
    }

    #[test]
    fn shifting_mass_to_the_cheaper_branch_lowers_f0(seed in any::<u64>(), shift in 0.0f64..1.0) {
        let t = tree(seed);
        let base = backward_pass(&t, 1.0).unwrap();
        // at the root's first two-way split, move mass toward the cheaper child
        let mut moved = t.clone();
        let mut node = &mut moved;
        loop {
            if node.children.len() == 2 {
                let f: Vec<f64> = node.children.iter().map(|c| backward_pass(c, 1.0).unwrap()).collect();
                let (lo, hi) = if f[0] <= f[1] { (0, 1) } else { (1, 0) };
                let d = shift * node.children[hi].prob;
                node.children[hi].prob -= d;
                node.children[lo].prob += d;
                break;
            }
            match node.children.first_mut() {
                Some(c) => node = c,
                None => break,
            }
        }
        prop_assert!(backward_pass(&moved, 1.0).unwrap() <= base + 1e-9);
    }
}

// Random constant-speed traffic on the oval against a real ego lap.
proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn built_trees_conserve_probability(
        cars in prop::collection::vec((0.0f64..990.0, 10.0f64..60.0), 1..5),
        p in prop::collection::vec(0.0f64..1.0, N_SECTIONS),
        budget in any::<bool>(),
    ) {
        let sim = oval();
        let ego = lap(&sim, if budget { Control::CombOnly } else { Control::Unlimited });
        let mut table = OvertakingTable::new(N_SECTIONS);
        for (s, p) in p.iter().enumerate() {
            table.add(Class::Lmp1, Class::LmgteAm, s + 1, (p * 20.0).round() as u32, 20);
        }
        let ctx = SdpContext::new(&sim, &table, SdpConfig::default());
        let root = build_tree(&ctx, &ego, &scripted(&cars, 120.0)).unwrap();
        prop_assert!(root.state <= 0 && root.state >= -(cars.len() as i32));
        check_structure(&root)?;
        prop_assert!((leaf_mass(&root, 1.0) - 1.0).abs() < 1e-9);
        let f0 = backward_pass(&root, 1.0).unwrap();
        prop_assert!(f0 >= 0.0);
        prop_assert_eq!(ctx.missing_p(), 0);
    }
}

struct Desk {
    sim: LapSimulator,
    strategies: Vec<EnergyStrategy>,
    reference: ReferenceProfile,
    free: FreeSectorTimes,
    table: OvertakingTable,
    initial: RaceState,
}

fn strategy(id: usize, lap: LapResult) -> EnergyStrategy {
    EnergyStrategy {
        id,
        constraint: StrategyConstraint::none(),
        genome: Genome { el: vec![0, 0], fuel: vec![0, 0] },
        lap_time: lap.lap_time,
        lap,
        generations: 0,
        evaluations: 0,
    }
}

fn desk() -> Desk {
    let sim = oval();
    let fast = lap(&sim, Control::Unlimited);
    let slow = lap(&sim, Control::CombOnly);
    let reference = ReferenceProfile::from_lap(&slow, &sim.geometry).unwrap();
    let strategies = vec![strategy(1, fast), strategy(2, slow)];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut free = FreeSectorTimes::default();
    let mut cars = Vec::new();
    for (i, class) in [Class::Lmp2, Class::LmgteAm, Class::LmgteAm].into_iter().enumerate() {
        let car = 10 + i as u32;
        let pace = [1.08, 1.12, 1.15][i];
        let times = std::array::from_fn(|s| {
            (0..6).map(|_| reference.sector_times[s] * pace * rng.gen_range(0.99..1.01)).collect()
        });
        free.cars.insert(car, CarFreeTimes { class, times });
        cars.push(CarState { car, class, s: 60.0 + 110.0 * i as f64 });
    }
    let classes = [Class::Lmp1, Class::Lmp2, Class::LmgteAm];
    let mut table = OvertakingTable::new(N_SECTIONS);
    for a in classes {
        for b in classes {
            for s in 1..=N_SECTIONS {
                let phi = 40;
                let straight = sim.geometry.points[sim.geometry.section_map().starts[s - 1] as usize / 2].is_straight;
                let p = if straight { rng.gen_range(0.5..0.9) } else { rng.gen_range(0.05..0.3) };
                table.add(a, b, s, (p * phi as f64).round() as u32, phi);
            }
        }
    }
    Desk {
        sim,
        strategies,
        reference,
        free,
        table,
        initial: RaceState { t: 0.0, cars },
    }
}

impl Desk {
    fn model(&self) -> McModel<'_> {
        McModel {
            reference: &self.reference,
            free: &self.free,
            table: &self.table,
            sections: self.sim.geometry.section_map(),
            config: McConfig::default(),
        }
    }
}

#[test]
fn doubling_the_batch_keeps_mean_f0_within_two_standard_errors() {
    let d = desk();
    let ctx = SdpContext::new(&d.sim, &d.table, SdpConfig::default());
    let m = d.model();
    let small = evaluate_batch(&ctx, &d.strategies, &m, &d.initial, 150, 31_337).unwrap();
    let large = evaluate_batch(&ctx, &d.strategies, &m, &d.initial, 300, 31_337).unwrap();
    for (a, b) in small.evaluations.iter().zip(&large.evaluations) {
        assert!(a.f0 > 0.0);
        assert!((a.f0 - b.f0).abs() < 2.0 * a.std_error, "strategy {}: {} vs {} (se {})", a.id, a.f0, b.f0, a.std_error);
    }
}

#[test]
fn scaling_every_cost_keeps_the_argmin() {
    let d = desk();
    let ctx = SdpContext::new(&d.sim, &d.table, SdpConfig::default());
    let r = evaluate_batch(&ctx, &d.strategies, &d.model(), &d.initial, 60, 5).unwrap();
    let rows: Vec<Vec<Option<f64>>> = (0..60)
        .map(|t| r.evaluations.iter().map(|e| e.per_trace[t]).collect())
        .collect();
    for k in [0.1, 3.0, 250.0] {
        let scaled: Vec<Vec<Option<f64>>> = rows.iter().map(|row| row.iter().map(|f| f.map(|x| x * k)).collect()).collect();
        assert_eq!(aggregate(&d.strategies, &scaled).unwrap().best, r.best);
    }
    let single = aggregate(&d.strategies[1..], &rows.iter().map(|row| row[1..].to_vec()).collect::<Vec<_>>()).unwrap();
    assert_eq!(single.best, 2);
}

#[test]
fn one_lap_stint_is_one_evaluation() {
    let d = desk();
    let ctx = SdpContext::new(&d.sim, &d.table, SdpConfig::default());
    let m = d.model();
    let cfg = StintConfig {
        n_laps: 1,
        n_sims: 40,
        repeats: 1,
        baseline: 2,
        confidence: 0.9,
    };
    let run = run_stint(&ctx, &d.strategies, &m, &d.initial, &cfg, 8).unwrap();
    let report = evaluate_batch(&ctx, &d.strategies, &m, &d.initial, 40, lapstrat::sdp::lap_seed(8, 1)).unwrap();
    let chosen = report.fastest_expected();
    let base = report.get(2).unwrap();
    assert_eq!(run.laps.len(), 1);
    assert_eq!(run.laps[0].chosen, chosen.id);
    let gain = base.expected_lap() - chosen.expected_lap();
    assert!((run.laps[0].gain - gain).abs() < 1e-12);
    assert!((run.cumulative_gain - gain).abs() < 1e-12);
    assert!(gain >= 0.0);
}

#[test]
fn baseline_equal_to_choice_gains_nothing() {
    let d = desk();
    let ctx = SdpContext::new(&d.sim, &d.table, SdpConfig::default());
    let cfg = StintConfig {
        n_laps: 3,
        n_sims: 20,
        repeats: 1,
        baseline: 1,
        confidence: 0.9,
    };
    let only = &d.strategies[..1];
    let run = run_stint(&ctx, only, &d.model(), &d.initial, &cfg, 3).unwrap();
    assert!(run.laps.iter().all(|l| l.chosen == 1 && l.gain == 0.0));
    assert_eq!(run.cumulative_gain, 0.0);
}
