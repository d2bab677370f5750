//! Oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use lapstrat::ingest::Label;

/// Neighbourhood-expansion DBSCAN on all pairs; borders go to the nearest
/// core, the lower value on ties.
pub fn brute_dbscan(x: &[f64], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = x.len();
    let near = |i: usize, j: usize| (x[i] - x[j]).abs() <= eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut cluster = vec![None; n];
    let mut next = 0;
    for i in 0..n {
        if !core[i] || cluster[i].is_some() {
            continue;
        }
        let mut stack = vec![i];
        cluster[i] = Some(next);
        while let Some(p) = stack.pop() {
            for q in 0..n {
                if core[q] && cluster[q].is_none() && near(p, q) {
                    cluster[q] = Some(next);
                    stack.push(q);
                }
            }
        }
        next += 1;
    }
    (0..n)
        .map(|i| {
            if core[i] {
                return cluster[i];
            }
            (0..n)
                .filter(|&j| core[j] && near(i, j))
                .min_by(|&a, &b| {
                    (x[a] - x[i])
                        .abs()
                        .total_cmp(&(x[b] - x[i]).abs())
                        .then(x[a].total_cmp(&x[b]))
                })
                .and_then(|j| cluster[j])
        })
        .collect()
}

pub fn partition(labels: impl Iterator<Item = Option<usize>>) -> BTreeSet<Vec<usize>> {
    let mut groups: BTreeMap<Option<usize>, Vec<usize>> = Default::default();
    for (i, l) in labels.enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let mut out: BTreeSet<Vec<usize>> = groups.iter().filter(|(k, _)| k.is_some()).map(|(_, v)| v.clone()).collect();
    // noise is its own marked group
    let mut noise = groups.get(&None).cloned().unwrap_or_default();
    noise.insert(0, usize::MAX);
    out.insert(noise);
    out
}

/// Partition of a library labelling.
pub fn label_partition(labels: &[Label]) -> BTreeSet<Vec<usize>> {
    partition(labels.iter().map(|l| l.cluster()))
}
