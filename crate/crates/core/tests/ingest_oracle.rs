mod common;

use std::collections::BTreeSet;

use common::{brute_dbscan, label_partition, partition};
use lapstrat::ingest::{clean_laps, dbscan, Class, Label, SectorTimeRecord};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn small_cluster_and_far_point() {
    let x = [33.9, 34.0, 34.1, 34.0, 120.0];
    let labels = dbscan(&x, 0.5, 3);
    assert_eq!(label_partition(&labels), partition(brute_dbscan(&x, 0.5, 3).into_iter()));
    assert_eq!(labels[4], Label::Noise);
    assert!(labels[..4].iter().all(|l| *l == Label::Cluster(0)));
}

#[test]
fn two_gaussian_blobs() {
    let mut rng = ChaCha8Rng::seed_from_u64(63);
    let n = Normal::new(0.0, 0.2).unwrap();
    let mut x: Vec<f64> = (0..50).map(|_| 34.0 + n.sample(&mut rng)).collect();
    x.extend((0..20).map(|_| 50.0 + n.sample(&mut rng)));
    let labels = dbscan(&x, 1.0, 5);
    let clusters: BTreeSet<usize> = labels.iter().filter_map(|l| l.cluster()).collect();
    assert_eq!(clusters.len(), 2);
    assert_eq!(label_partition(&labels), partition(brute_dbscan(&x, 1.0, 5).into_iter()));
}

fn record(car: u32, lap: u32, s: [f64; 3], stop: bool) -> SectorTimeRecord {
    SectorTimeRecord {
        car_number: car,
        lap,
        stop_flag: stop.then(|| "B".to_string()),
        s1: s[0],
        s2: s[1],
        s3: s[2],
        elapsed: 0.0,
        class: Class::Lmp2,
        group: "H".into(),
        team: "Team".into(),
    }
}

/// Retained (car, lap) pairs by per-sector brute-force clustering: a lap
/// survives when every sector sits in the cluster with the lowest mean.
fn oracle_retained(records: &[SectorTimeRecord], eps: f64, min_pts: usize) -> BTreeSet<(u32, u32)> {
    let cars: BTreeSet<u32> = records.iter().map(|r| r.car_number).collect();
    let mut out = BTreeSet::new();
    for car in cars {
        let laps: Vec<&SectorTimeRecord> = records
            .iter()
            .filter(|r| r.car_number == car && r.stop_flag.is_none())
            .collect();
        let mut ok = vec![true; laps.len()];
        for sector in 0..3 {
            let x: Vec<f64> = laps.iter().map(|r| r.sectors()[sector]).collect();
            let labels = brute_dbscan(&x, eps, min_pts);
            let ids: BTreeSet<usize> = labels.iter().flatten().copied().collect();
            let fastest = ids.iter().copied().min_by(|a, b| {
                let m = |c: usize| {
                    let v: Vec<f64> = x.iter().zip(&labels).filter(|(_, l)| **l == Some(c)).map(|(p, _)| *p).collect();
                    v.iter().sum::<f64>() / v.len() as f64
                };
                m(*a).total_cmp(&m(*b))
            });
            for (i, l) in labels.iter().enumerate() {
                if l.is_none() || *l != fastest {
                    ok[i] = false;
                }
            }
        }
        out.extend(laps.iter().zip(ok).filter(|(_, k)| *k).map(|(r, _)| (car, r.lap)));
    }
    out
}

#[test]
fn mixed_three_car_dataset_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    let noise = Normal::new(0.0, 0.25).unwrap();
    let mut records = Vec::new();
    for (car, pace) in [(1u32, [34.0, 38.8, 32.4]), (2, [35.1, 39.5, 33.0]), (3, [36.0, 40.2, 33.7])] {
        for lap in 1..=30u32 {
            let mut s = pace.map(|p| p + noise.sample(&mut rng));
            match lap {
                9 if car == 1 => s[0] = 121.453,
                // a slow stint: a second cluster in every sector
                21..=26 if car == 2 => s = s.map(|x| x + 6.0),
                14 if car == 3 => s[2] += 30.0,
                _ => {}
            }
            records.push(record(car, lap, s, car == 3 && lap == 20));
        }
    }
    let set = clean_laps(&records, 2.0, 5).unwrap();
    let ours: BTreeSet<(u32, u32)> = set.retained().map(|r| (r.car_number, r.lap)).collect();
    assert_eq!(ours, oracle_retained(&records, 2.0, 5));
    assert!(!ours.contains(&(1, 9)));
    assert!(!ours.contains(&(3, 20)));
    assert!((21..=26).all(|l| !ours.contains(&(2, l))));
    let total: usize = set.cars.values().map(|c| c.retained.len() + c.rejected.len()).sum();
    assert_eq!(total, records.len());
}

#[test]
fn random_tables_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..30 {
        let mut records = Vec::new();
        for car in 1..=3u32 {
            for lap in 1..=rng.gen_range(3..40u32) {
                let s: [f64; 3] = std::array::from_fn(|i| {
                    let base = [34.0, 39.0, 33.0][i] + car as f64;
                    if rng.gen_bool(0.1) {
                        base + rng.gen_range(2.0..80.0)
                    } else {
                        ((base + rng.gen_range(-0.6..0.6)) * 10.0).round() / 10.0
                    }
                });
                records.push(record(car, lap, s, rng.gen_bool(0.03)));
            }
        }
        let set = clean_laps(&records, 1.0, 4).unwrap();
        let ours: BTreeSet<(u32, u32)> = set.retained().map(|r| (r.car_number, r.lap)).collect();
        assert_eq!(ours, oracle_retained(&records, 1.0, 4));
    }
}

proptest! {
    #[test]
    fn dbscan_matches_oracle(
        x in prop::collection::vec(0u32..400, 0..120),
        eps in prop::sample::select(vec![0.5, 1.0, 2.5, 4.0]),
        min_pts in 1usize..7,
    ) {
        let x: Vec<f64> = x.into_iter().map(|v| v as f64 * 0.25).collect();
        prop_assert_eq!(label_partition(&dbscan(&x, eps, min_pts)), partition(brute_dbscan(&x, eps, min_pts).into_iter()));
    }

    #[test]
    fn dbscan_ignores_input_order(
        x in prop::collection::vec(0u32..200, 1..80),
        seed in any::<u64>(),
        min_pts in 1usize..6,
    ) {
        let x: Vec<f64> = x.into_iter().map(|v| v as f64 * 0.5).collect();
        let mut idx: Vec<usize> = (0..x.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.gen_range(0..=i));
        }
        let shuffled: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        let a = dbscan(&x, 1.0, min_pts);
        let b = dbscan(&shuffled, 1.0, min_pts);
        for (k, &i) in idx.iter().enumerate() {
            prop_assert_eq!(a[i], b[k]);
        }
    }

    #[test]
    fn integer_shift_keeps_partition(
        x in prop::collection::vec(0i32..300, 1..80),
        shift in -1000i32..1000,
        min_pts in 1usize..6,
    ) {
        let a: Vec<f64> = x.iter().map(|v| *v as f64).collect();
        let b: Vec<f64> = x.iter().map(|v| (*v + shift) as f64).collect();
        prop_assert_eq!(label_partition(&dbscan(&a, 3.0, min_pts)), label_partition(&dbscan(&b, 3.0, min_pts)));
    }
}
