use std::collections::BTreeMap;

use lapstrat::ingest::Class;
use lapstrat::mc_sim::{sample_free_lap, CarState, McConfig, McModel, Outcome, RaceState, SimTrace};
use lapstrat::stats::{CarFreeTimes, FreeSectorTimes, OvertakingTable, ReferenceProfile};
use lapstrat::vehicle::SectionMap;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const L: f64 = 1000.0;
const CLASSES: [Class; 4] = [Class::Lmp1, Class::Lmp2, Class::LmgteAm, Class::LmgtePro];

fn reference() -> ReferenceProfile {
    let positions: Vec<f64> = (1..=500).map(|k| k as f64 * 2.0).collect();
    let speeds = positions.iter().map(|s| 55.0 + 12.0 * (s * std::f64::consts::TAU / L).sin()).collect();
    ReferenceProfile::new(positions, speeds, [300.0, 600.0, L]).unwrap()
}

fn sections() -> SectionMap {
    SectionMap::new(vec![0.0, 250.0, 500.0, 750.0], L).unwrap()
}

#[test]
fn draws_follow_the_multiset() {
    let pools = [vec![30.0, 30.0, 31.0, 32.0], vec![40.0, 41.0], vec![20.0, 20.0, 20.0, 25.0, 26.0]];
    let free = CarFreeTimes {
        class: Class::Lmp1,
        times: pools.clone(),
    };
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut counts: [BTreeMap<u64, usize>; 3] = Default::default();
    for _ in 0..n {
        let t = sample_free_lap(1, &free, &mut rng).unwrap();
        for i in 0..3 {
            *counts[i].entry(t[i].to_bits()).or_default() += 1;
        }
    }
    for i in 0..3 {
        let mut expected: BTreeMap<u64, f64> = BTreeMap::new();
        for v in &pools[i] {
            *expected.entry(v.to_bits()).or_default() += 1.0 / pools[i].len() as f64;
        }
        assert_eq!(counts[i].len(), expected.len());
        for (v, p) in expected {
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            let got = counts[i][&v] as f64;
            assert!((got - n as f64 * p).abs() <= 3.0 * sigma, "sector {} value {}", i + 1, f64::from_bits(v));
        }
    }
    let mut a = ChaCha8Rng::seed_from_u64(5);
    let mut b = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        assert_eq!(sample_free_lap(1, &free, &mut a).unwrap(), sample_free_lap(1, &free, &mut b).unwrap());
    }
}

struct Scenario {
    reference: ReferenceProfile,
    free: FreeSectorTimes,
    table: OvertakingTable,
    initial: RaceState,
}

impl Scenario {
    fn random(seed: u64, n_cars: usize) -> Self {
        let reference = reference();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut free = FreeSectorTimes::default();
        let mut cars = Vec::new();
        let mut taken: Vec<f64> = Vec::new();
        for c in 0..n_cars {
            let class = CLASSES[rng.gen_range(0..4)];
            let pace = rng.gen_range(1.0..1.25);
            let times = std::array::from_fn(|i| {
                (0..rng.gen_range(1..5))
                    .map(|_| reference.sector_times[i] * pace * rng.gen_range(1.0..1.05))
                    .collect()
            });
            let car = c as u32 + 1;
            free.cars.insert(car, CarFreeTimes { class, times });
            // bunched start so cars interact
            let mut s = rng.gen_range(0.0..150.0);
            while taken.iter().any(|t| (t - s).abs() < 1.0) {
                s = rng.gen_range(0.0..150.0);
            }
            taken.push(s);
            cars.push(CarState { car, class, s });
        }
        let mut table = OvertakingTable::new(4);
        for a in CLASSES {
            for b in CLASSES {
                for sec in 1..=4 {
                    let phi = 20;
                    table.add(a, b, sec, rng.gen_range(0..=phi), phi);
                }
            }
        }
        Scenario {
            reference,
            free,
            table,
            initial: RaceState { t: 0.0, cars },
        }
    }

    fn model(&self) -> McModel<'_> {
        McModel {
            reference: &self.reference,
            free: &self.free,
            table: &self.table,
            sections: sections(),
            config: McConfig::default(),
        }
    }

    /// Upper bound on any car's speed: the reference peak scaled by the
    /// fastest drawable sector.
    fn v_max(&self) -> f64 {
        let ratio = self
            .free
            .cars
            .values()
            .flat_map(|c| (0..3).flat_map(move |i| c.times[i].iter().map(move |t| (i, *t))))
            .map(|(i, t)| self.reference.sector_times[i] / t)
            .fold(0.0, f64::max);
        self.reference.max_speed() * ratio
    }
}

/// Crossing times of every sector boundary passed by car `i`, as
/// (boundary cumulative position, time).
fn crossings(tr: &SimTrace, i: usize) -> Vec<(f64, f64)> {
    let p = &tr.positions[i];
    let mut out = Vec::new();
    for k in 1..p.len() {
        let (a, b) = (p[k - 1], p[k]);
        let lap = (a / L).floor();
        for lp in [lap, lap + 1.0] {
            for st in [0.0, 300.0, 600.0] {
                let x = lp * L + st;
                if x > a && x <= b {
                    out.push((x, (k as f64 - 1.0 + (x - a) / (b - a)) * tr.dt));
                }
            }
        }
    }
    out
}

fn check_trace(sc: &Scenario, tr: &SimTrace) -> Result<(), TestCaseError> {
    let fg = McConfig::default().following_gap;
    let v_max = sc.v_max();
    for p in &tr.positions {
        for w in p.windows(2) {
            prop_assert!(w[1] >= w[0]);
            prop_assert!(w[1] - w[0] <= v_max * tr.dt + 1e-9, "step {} > {}", w[1] - w[0], v_max * tr.dt);
        }
    }
    let index: BTreeMap<u32, usize> = tr.cars.iter().enumerate().map(|(i, c)| (c.car, i)).collect();
    let sec = sections();
    for e in tr.events.iter().filter(|e| e.outcome == Outcome::Follow) {
        let (f, l) = (index[&e.follower], index[&e.leader]);
        let k0 = (e.t / tr.dt).round() as usize;
        let lap = (e.s / L).floor();
        for k in k0..tr.steps() {
            let sf = tr.positions[f][k];
            if sec.id_of(sf.rem_euclid(L)) != e.section || (sf / L).floor() != lap {
                break;
            }
            let gap = (tr.positions[l][k] - sf).rem_euclid(L);
            prop_assert!(gap >= fg - 1e-9, "follower {} at {} only {} behind {}", e.follower, sf, gap, e.leader);
        }
    }
    for (i, c) in tr.cars.iter().enumerate() {
        let lap0 = (c.s / L).floor();
        let xs = crossings(tr, i);
        for w in xs.windows(2) {
            let ((x0, t0), (_, t1)) = (w[0], w[1]);
            let lap = ((x0 / L) + 1e-9).floor();
            let within = x0 - lap * L;
            let sector = [0.0, 300.0, 600.0].iter().position(|s| (s - within).abs() < 1e-6).unwrap();
            let drawn = tr.drawn[i][(lap - lap0) as usize][sector];
            prop_assert!(t1 - t0 >= drawn - 2e-3, "car {} lap {} sector {}: {} < {}", c.car, lap, sector + 1, t1 - t0, drawn);
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn traces_respect_motion_invariants(seed in any::<u64>(), n_cars in 2usize..6, trace_seed in any::<u64>()) {
        let sc = Scenario::random(seed, n_cars);
        let tr = sc.model().simulate(&sc.initial, trace_seed).unwrap();
        check_trace(&sc, &tr)?;
    }
}

#[test]
fn scenarios_produce_both_outcomes() {
    let mut follow = 0;
    let mut overtake = 0;
    for seed in 0..20 {
        let sc = Scenario::random(seed, 4);
        for tr in sc.model().run_batch(&sc.initial, 5, seed * 7919).unwrap() {
            follow += tr.events.iter().filter(|e| e.outcome == Outcome::Follow).count();
            overtake += tr.events.iter().filter(|e| e.outcome == Outcome::Overtake).count();
        }
    }
    assert!(follow > 20 && overtake > 20, "{follow} follow, {overtake} overtake");
}

#[test]
fn single_trace_batch_is_a_plain_simulation() {
    let sc = Scenario::random(3, 3);
    let m = sc.model();
    let batch = m.run_batch(&sc.initial, 1, 1234).unwrap();
    assert_eq!(batch, vec![m.simulate(&sc.initial, 1234).unwrap()]);
    assert_eq!(m.run_batch(&sc.initial, 6, 77).unwrap(), m.run_batch(&sc.initial, 6, 77).unwrap());
}

#[test]
fn lone_car_realises_its_draws() {
    let mut sc = Scenario::random(8, 1);
    sc.initial.cars[0].s = 0.5;
    let tr = sc.model().simulate(&sc.initial, 4).unwrap();
    assert!(tr.events.is_empty());
    let xs = crossings(&tr, 0);
    assert!(xs.len() >= 5);
    for w in xs.windows(2) {
        let lap = ((w[0].0 / L) + 1e-9).floor() as usize;
        let sector = (((w[0].0 - lap as f64 * L) / 300.0).round() as usize).min(2);
        let drawn = tr.drawn[0][lap][sector];
        assert!((w[1].1 - w[0].1 - drawn).abs() < 2e-3);
    }
}
