use lapstrat::ga_opt::{
    decode, generate_strategy_set, run_ga, Caps, GaConfig, GaProblem, Genome, StrategyConstraint, NOMINAL_BAN,
};
use lapstrat::synth::Preset;
use lapstrat::vehicle::{BudgetPlan, Control, LapResult, LapSimulator, PowertrainMode, VehicleParams};
use proptest::prelude::*;

fn oval() -> LapSimulator {
    let params = VehicleParams::default();
    LapSimulator::new(Preset::Oval1km.geometry(2.0, &params).unwrap(), params).unwrap()
}

fn small_cfg(seed: u64) -> GaConfig {
    GaConfig {
        population: 60,
        generations: 12,
        patience: 4,
        elitism: 4,
        seed,
        el_gene_max: 1000,
        fuel_gene_max: 700,
        ..Default::default()
    }
}

fn run_plan(sim: &LapSimulator, plan: &BudgetPlan, v0: f64) -> LapResult {
    sim.simulate(Control::Budgets(plan), v0).unwrap()
}

#[test]
fn exact_budget_drives_the_first_k_points() {
    let sim = oval();
    let v0 = sim.flying_start().unwrap();
    let n = sim.geometry.n_points();
    let region1: Vec<usize> = (0..n).filter(|i| sim.geometry.points[*i].region == 1).collect();
    let rich = run_plan(&sim, &BudgetPlan::new(vec![1e6, 0.0], vec![1.0, 1.0], n), v0);
    let driven: Vec<usize> = region1
        .iter()
        .copied()
        .filter(|i| rich.mode[*i] == PowertrainMode::Both)
        .collect();
    assert!(driven.len() > 40);
    for k in [1, 7, 25, driven.len() / 2] {
        let budget: f64 = driven[..k].iter().map(|i| rich.e_used[*i]).sum();
        let lap = run_plan(&sim, &BudgetPlan::new(vec![budget, 0.0], vec![1.0, 1.0], n), v0);
        let got: Vec<usize> = region1
            .iter()
            .copied()
            .filter(|i| lap.mode[*i] == PowertrainMode::Both)
            .collect();
        assert_eq!(got, driven[..k].to_vec(), "k = {k}");
        let spent: f64 = lap.e_used.iter().sum();
        assert!((spent - budget).abs() < 1e-9 * budget.max(1.0));
        assert!((lap.e_el_used - budget).abs() < 1e-9 * budget.max(1.0));
    }
}

#[test]
fn hand_built_genome_fitness_is_its_lap_time() {
    let sim = oval();
    let v0 = sim.flying_start().unwrap();
    let problem = GaProblem::new(&sim, v0);
    let genome = Genome {
        el: vec![180, 95],
        fuel: vec![140, 125],
    };
    let c = StrategyConstraint::ban(2, NOMINAL_BAN);
    let plan = decode(&genome, &c, &sim.geometry);
    let lap = run_plan(&sim, &plan, v0);
    assert_eq!(problem.fitness(&genome, &c, &small_cfg(0)), lap.lap_time);
}

#[test]
fn hot_started_optimum_is_never_lost() {
    let sim = oval();
    let problem = GaProblem::new(&sim, sim.flying_start().unwrap());
    let best = run_ga(&problem, &small_cfg(11), &StrategyConstraint::none(), &[]).unwrap();
    for seed in [1, 2, 3] {
        let again = run_ga(&problem, &small_cfg(seed), &StrategyConstraint::none(), &[best.genome.clone()]).unwrap();
        assert!(again.lap_time <= best.lap_time);
    }
}

#[test]
fn equal_seeds_give_identical_strategies() {
    let sim = oval();
    let problem = GaProblem::new(&sim, sim.flying_start().unwrap());
    let c = StrategyConstraint::ban(1, NOMINAL_BAN);
    let a = run_ga(&problem, &small_cfg(5), &c, &[]).unwrap();
    let b = run_ga(&problem, &small_cfg(5), &c, &[]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn duplicate_specs_agree_and_bans_cost_time() {
    let sim = oval();
    let problem = GaProblem::new(&sim, sim.flying_start().unwrap());
    let ban = StrategyConstraint::ban(1, 300.0);
    let specs = [StrategyConstraint::none(), StrategyConstraint::none(), ban.clone(), ban];
    let set = generate_strategy_set(&problem, &specs, &small_cfg(40), &[]).unwrap();
    assert!(set.failures.is_empty());
    let time = |id: usize| set.strategies.iter().find(|s| s.id == id).unwrap().lap_time;
    assert!((time(1) - time(2)).abs() / time(1) < 0.001);
    assert!((time(3) - time(4)).abs() / time(3) < 0.001);
    assert!(time(3) >= time(1) * (1.0 - 0.001));
    let single = generate_strategy_set(&problem, &specs[..1], &small_cfg(40), &[]).unwrap();
    assert_eq!(single.strategies.len(), 1);
}

fn genome_strategy() -> impl Strategy<Value = Genome> {
    (prop::array::uniform2(0u32..500), prop::array::uniform2(120u32..500)).prop_map(|(el, fuel)| Genome {
        el: el.to_vec(),
        fuel: fuel.to_vec(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn more_straight_energy_never_slows(g in genome_strategy(), region in 0usize..2) {
        let sim = oval();
        let problem = GaProblem::new(&sim, sim.flying_start().unwrap());
        let cfg = small_cfg(0);
        let mut richer = g.clone();
        richer.el[region] += 100;
        let c = StrategyConstraint::none();
        prop_assert!(problem.fitness(&richer, &c, &cfg) <= problem.fitness(&g, &c, &cfg) + 1e-9);
    }

    #[test]
    fn fuel_overrun_ranks_below_feasible(g in genome_strategy(), h in genome_strategy()) {
        let sim = oval();
        let problem = GaProblem::new(&sim, sim.flying_start().unwrap());
        let cfg = GaConfig {
            caps: Caps { el_used_max: 1000.0, fuel_max: 1.0, hers: 1000.0 },
            ..small_cfg(0)
        };
        let c = StrategyConstraint::none();
        let feasible = problem.fitness(&g, &c, &cfg);
        let mut over = h.clone();
        over.fuel[0] = 1001 - over.fuel[1];
        prop_assert!(problem.fitness(&over, &c, &cfg) > feasible);
    }

    #[test]
    fn banned_points_get_no_electric_drive(
        g in genome_strategy(),
        straight in 1usize..3,
        meters in prop::sample::select(vec![50.0, 100.0, 170.0, 300.0]),
    ) {
        let sim = oval();
        let problem = GaProblem::new(&sim, sim.flying_start().unwrap());
        let c = StrategyConstraint::ban(straight, meters);
        let banned = c.banned_points(&sim.geometry);
        prop_assert_eq!(banned.iter().filter(|b| **b).count(), (meters / 2.0) as usize);
        let lap = problem.simulate(&g, &c).unwrap();
        for (i, b) in banned.iter().enumerate() {
            if *b {
                prop_assert!(lap.mode[i] != PowertrainMode::Both);
                prop_assert!(lap.e_used[i] == 0.0);
                prop_assert!(lap.ledger[i].f_x_f <= 0.0);
            }
        }
    }
}
