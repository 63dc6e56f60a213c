use std::collections::{BTreeMap, BTreeSet};

use crate::panoptic::{PanopticMap, VOID_ID};

/// Per-class result of the exhaustive PQ reference.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteScore {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

struct Seg {
    class: u32,
    pixels: BTreeSet<usize>,
}

fn segments(map: &PanopticMap) -> Vec<Seg> {
    map.segments()
        .iter()
        .map(|s| Seg {
            class: s.class_id,
            pixels: map
                .ids()
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == s.id)
                .map(|(p, _)| p)
                .collect(),
        })
        .collect()
}

fn pair_iou(a: &Seg, b: &Seg) -> f64 {
    let inter = a.pixels.intersection(&b.pixels).count();
    let union = a.pixels.union(&b.pixels).count();
    inter as f64 / union as f64
}

/// Best matching by exhaustive search: most pairs, then largest IoU sum.
fn search(
    gi: usize,
    edges: &[Vec<(usize, f64)>],
    used: &mut Vec<bool>,
    current: &mut Vec<(usize, usize, f64)>,
    best: &mut (usize, f64, Vec<(usize, usize, f64)>),
) {
    if gi == edges.len() {
        let sum: f64 = current.iter().map(|m| m.2).sum();
        if current.len() > best.0 || (current.len() == best.0 && sum > best.1) {
            *best = (current.len(), sum, current.clone());
        }
        return;
    }
    search(gi + 1, edges, used, current, best);
    for &(pi, v) in &edges[gi] {
        if !used[pi] {
            used[pi] = true;
            current.push((gi, pi, v));
            search(gi + 1, edges, used, current, best);
            current.pop();
            used[pi] = false;
        }
    }
}

/// Reference PQ per class: exhaustive matching over same-class pairs with
/// IoU > 0.5, unmatched predictions more than half on void ignored.
pub fn brute_pq(pred: &PanopticMap, gt: &PanopticMap) -> BTreeMap<u32, BruteScore> {
    let ps = segments(pred);
    let gs = segments(gt);
    let edges: Vec<Vec<(usize, f64)>> = gs
        .iter()
        .map(|g| {
            ps.iter()
                .enumerate()
                .filter(|(_, p)| p.class == g.class)
                .map(|(i, p)| (i, pair_iou(p, g)))
                .filter(|&(_, v)| v > 0.5)
                .collect()
        })
        .collect();
    let mut best = (0, 0.0, Vec::new());
    search(0, &edges, &mut vec![false; ps.len()], &mut Vec::new(), &mut best);
    let matches = best.2;

    let void: BTreeSet<usize> = gt
        .ids()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == VOID_ID)
        .map(|(p, _)| p)
        .collect();

    // class -> (tp, fp, fn, iou values)
    let mut acc: BTreeMap<u32, (u64, u64, u64, Vec<f64>)> = BTreeMap::new();
    for &(gi, _, v) in &matches {
        let e = acc.entry(gs[gi].class).or_default();
        e.0 += 1;
        e.3.push(v);
    }
    for (i, p) in ps.iter().enumerate() {
        if matches.iter().any(|m| m.1 == i) {
            continue;
        }
        let on_void = p.pixels.intersection(&void).count();
        if on_void as f64 > 0.5 * p.pixels.len() as f64 {
            continue;
        }
        acc.entry(p.class).or_default().1 += 1;
    }
    for (i, g) in gs.iter().enumerate() {
        if !matches.iter().any(|m| m.0 == i) {
            acc.entry(g.class).or_default().2 += 1;
        }
    }
    acc.into_iter()
        .map(|(class, (tp, fp, fn_, mut ious))| {
            ious.sort_by(f64::total_cmp);
            let sum: f64 = ious.iter().sum();
            let sq = if tp == 0 { 0.0 } else { sum / tp as f64 };
            let rq = if tp == 0 {
                0.0
            } else {
                tp as f64 / (tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64)
            };
            let pq = if tp == 0 { 0.0 } else { sum / (tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64) };
            (class, BruteScore { pq, sq, rq, tp, fp, fn_ })
        })
        .collect()
}

/// Class-mean PQ over the classes present in the reference result.
pub fn brute_pq_all(scores: &BTreeMap<u32, BruteScore>) -> Option<f64> {
    (!scores.is_empty()).then(|| scores.values().map(|s| s.pq).sum::<f64>() / scores.len() as f64)
}

fn enumerate(
    i: usize,
    n: usize,
    m: usize,
    cost: &dyn Fn(usize, usize) -> f64,
    used: &mut Vec<bool>,
    current: &mut Vec<usize>,
    partial: f64,
    best: &mut Option<(f64, Vec<usize>)>,
) {
    if i == n {
        if best.as_ref().is_none_or(|(b, _)| partial < *b) {
            *best = Some((partial, current.clone()));
        }
        return;
    }
    for j in 0..m {
        if !used[j] {
            used[j] = true;
            current.push(j);
            enumerate(i + 1, n, m, cost, used, current, partial + cost(i, j), best);
            current.pop();
            used[j] = false;
        }
    }
}

/// Minimum total cost over all injections of the smaller side into the
/// larger one, and the first assignment (in enumeration order) attaining
/// it, as `(row, column)` pairs sorted by row. Enumeration visits columns
/// in ascending order, so with exact ties the result is the
/// lexicographically smallest optimum on the smaller side.
pub fn brute_assignment(cost: &[Vec<f64>]) -> (f64, Vec<(usize, usize)>) {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return (0.0, Vec::new());
    }
    let mut best = None;
    if rows <= cols {
        enumerate(0, rows, cols, &|i, j| cost[i][j], &mut vec![false; cols], &mut Vec::new(), 0.0, &mut best);
        let (total, cols_of) = best.expect("nonempty");
        (total, cols_of.into_iter().enumerate().collect())
    } else {
        enumerate(0, cols, rows, &|i, j| cost[j][i], &mut vec![false; rows], &mut Vec::new(), 0.0, &mut best);
        let (total, rows_of) = best.expect("nonempty");
        let mut pairs: Vec<(usize, usize)> = rows_of.into_iter().enumerate().map(|(c, r)| (r, c)).collect();
        pairs.sort();
        (total, pairs)
    }
}
