//! Independent oracles shared by the integration and acceptance suites.
//! Everything here is deliberately implemented without touching the library's
//! own algorithms so it can serve as a cross-check.

#![allow(dead_code)]

use ndarray::Array2;

/// Minimum-cost assignment via the Hungarian algorithm with row/column
/// potentials, O(n^3). Returns (row -> column assignment, total cost).
pub fn hungarian(cost: &Array2<f64>) -> (Vec<usize>, f64) {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols());
    let inf = f64::INFINITY;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    let mut total = 0.0;
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
            total += cost[(p[j] - 1, j - 1)];
        }
    }
    (assignment, total)
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&x| (x - m).exp()).sum();
        row.mapv_inplace(|x| (x - m).exp() / z);
    }
    out
}

fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for &p in path {
        if p != prev {
            if p != 0 {
                out.push(p);
            }
            prev = p;
        }
    }
    out
}

/// Brute-force CTC loss: enumerate every V^T alignment, sum the softmax path
/// probabilities of those collapsing to `labels`, return the negative log.
/// Infeasible label sets come out as +inf.
pub fn ctc_enumeration_loss(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    let t = logits.nrows();
    let v = logits.ncols();
    let probs = softmax_rows(logits);
    let mut total = 0.0f64;
    let mut path = vec![0usize; t];
    loop {
        if collapse(&path) == labels {
            let mut p = 1.0;
            for (ti, &tok) in path.iter().enumerate() {
                p *= probs[(ti, tok)];
            }
            total += p;
        }
        // odometer increment over the V^T alignment space
        let mut pos = 0;
        loop {
            if pos == t {
                return -total.ln();
            }
            path[pos] += 1;
            if path[pos] < v {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
    }
}
