//! Reference implementations used as test oracles. Each one is written
//! directly from the textbook definition and shares no code with the library.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use cgfl_core::neural::{Activation, DenseNet};
use num_rational::Ratio;

pub const EPS: f64 = 1e-7;

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= rel * a.abs().max(b.abs())
}

/// (a_ef, a_ep, a_nf, a_np) of column `j`, by a scan over raw rows.
pub fn brute_counts(rows: &[Vec<u8>], failing: &[bool], j: usize) -> (i64, i64, i64, i64) {
    let (mut ef, mut ep, mut nf, mut np) = (0, 0, 0, 0);
    for (row, &fail) in rows.iter().zip(failing) {
        match (row[j] == 1, fail) {
            (true, true) => ef += 1,
            (true, false) => ep += 1,
            (false, true) => nf += 1,
            (false, false) => np += 1,
        }
    }
    (ef, ep, nf, np)
}

fn ratio_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Expected formula value; `None` stands for the positive-infinity sentinel.
pub fn oracle_score(formula: &str, (ef, ep, nf, np): (i64, i64, i64, i64)) -> Option<f64> {
    match formula {
        "ochiai" => {
            let den = (ef + nf) * (ef + ep);
            Some(if den == 0 {
                0.0
            } else {
                ratio_f64(Ratio::new(ef * ef, den)).sqrt()
            })
        }
        "dstar" => {
            if ef == 0 {
                Some(0.0)
            } else if ep + nf == 0 {
                None
            } else {
                Some(ratio_f64(Ratio::new(ef * ef, ep + nf)))
            }
        }
        "barinel" => Some(if ep + ef == 0 {
            0.0
        } else {
            ratio_f64(Ratio::new(ef, ep + ef))
        }),
        "gp02" => Some(2.0 * ef as f64 + 2.0 * (np as f64).sqrt() + (ep as f64).sqrt()),
        other => panic!("no oracle for {other}"),
    }
}

/// Nodes from which `target` is reachable, found by a forward breadth-first
/// search from every node.
pub fn reaches(nodes: &[u32], edges: &[(u32, u32)], target: u32) -> BTreeSet<u32> {
    let mut succ: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for &(s, d) in edges {
        succ.entry(s).or_default().push(d);
    }
    let mut out = BTreeSet::new();
    for &start in nodes {
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            if n == target {
                out.insert(start);
                break;
            }
            for &m in succ.get(&n).into_iter().flatten() {
                if seen.insert(m) {
                    queue.push_back(m);
                }
            }
        }
    }
    out
}

/// One-sided exact p-values `(greater, less)` of the signed-rank statistic by
/// enumerating all `2^n` sign patterns. Ranks are doubled so ties stay exact.
pub fn enumerate_signed_rank(diffs: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = diffs.iter().copied().filter(|&x| x != 0.0).collect();
    let n = d.len();
    let doubled: Vec<u64> = d
        .iter()
        .map(|x| {
            let below = d.iter().filter(|y| y.abs() < x.abs()).count() as u64;
            let tied = d.iter().filter(|y| y.abs() == x.abs()).count() as u64;
            2 * below + tied + 1
        })
        .collect();
    let observed: u64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| doubled[i]).sum();
    let (mut ge, mut le) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let w: u64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| doubled[i]).sum();
        ge += u64::from(w >= observed);
        le += u64::from(w <= observed);
    }
    let total = (1u64 << n) as f64;
    (ge as f64 / total, le as f64 / total)
}

fn activate(kind: Activation, z: f64) -> f64 {
    match kind {
        Activation::Relu => z.max(0.0),
        Activation::LeakyRelu => {
            if z > 0.0 {
                z
            } else {
                0.2 * z
            }
        }
        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        Activation::Identity => z,
    }
}

/// Forward pass from the public layer fields. Returns the output and every
/// pre-activation of piecewise-linear layers.
pub fn manual_forward(net: &DenseNet, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut a = input.to_vec();
    let mut kinks = Vec::new();
    for layer in net.layers() {
        let mut next = vec![0.0; layer.outputs];
        for (o, slot) in next.iter_mut().enumerate() {
            let mut z = layer.bias[o];
            for i in 0..layer.inputs {
                z += layer.weights[o * layer.inputs + i] * a[i];
            }
            if matches!(layer.activation, Activation::Relu | Activation::LeakyRelu) {
                kinks.push(z);
            }
            *slot = activate(layer.activation, z);
        }
        a = next;
    }
    (a, kinks)
}

pub fn bce(p: f64, t: f64) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}
