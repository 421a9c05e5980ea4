//! Slow reference computations used to cross-check the main code paths.
//!
//! Nothing here calls into the routines it is meant to check: projections are
//! found by enumerating active sets, Cesàro limits by averaging matrix powers,
//! and optimal gains by enumerating deterministic policies.

use nalgebra::{DMatrix, DVector};

use crate::mdp::{Mdp, Policy};

const KKT_TOL: f64 = 1e-12;

/// Brute-force Euclidean projection onto `M_α` (`d ≤ 20`).
pub fn euclid_projection(q: &[f64], alpha: f64) -> Vec<f64> {
    best_pattern(q.len(), alpha, |clipped| {
        let free: Vec<usize> = (0..q.len()).filter(|&i| !clipped[i]).collect();
        let n_clip = q.len() - free.len();
        let lambda = (1.0 - n_clip as f64 * alpha - free.iter().map(|&i| q[i]).sum::<f64>()) / free.len() as f64;
        let p: Vec<f64> = (0..q.len())
            .map(|i| if clipped[i] { alpha } else { q[i] + lambda })
            .collect();
        let feasible = free.iter().all(|&i| p[i] >= alpha - KKT_TOL);
        let kkt = (0..q.len())
            .filter(|&i| clipped[i])
            .all(|i| q[i] + lambda <= alpha + KKT_TOL);
        let obj = 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        (feasible && kkt).then_some((obj, p))
    })
}

/// Brute-force KL projection onto `M_α` for strictly positive `w`.
pub fn kl_projection(w: &[f64], alpha: f64) -> Vec<f64> {
    best_pattern(w.len(), alpha, |clipped| {
        let free: Vec<usize> = (0..w.len()).filter(|&i| !clipped[i]).collect();
        let n_clip = w.len() - free.len();
        let m = (1.0 - n_clip as f64 * alpha) / free.iter().map(|&i| w[i]).sum::<f64>();
        let p: Vec<f64> = (0..w.len())
            .map(|i| if clipped[i] { alpha } else { m * w[i] })
            .collect();
        let feasible = free.iter().all(|&i| p[i] >= alpha * (1.0 - KKT_TOL) - KKT_TOL);
        let kkt = (0..w.len())
            .filter(|&i| clipped[i])
            .all(|i| m * w[i] <= alpha * (1.0 + KKT_TOL) + KKT_TOL);
        let obj: f64 = p
            .iter()
            .zip(w)
            .map(|(a, b)| if *a > 0.0 { a * (a / b).ln() } else { 0.0 })
            .sum();
        (feasible && kkt).then_some((obj, p))
    })
}

fn best_pattern(d: usize, alpha: f64, mut eval: impl FnMut(&[bool]) -> Option<(f64, Vec<f64>)>) -> Vec<f64> {
    assert!(d <= 20, "brute force limited to d <= 20");
    if (alpha * d as f64 - 1.0).abs() <= 1e-12 {
        return vec![alpha; d];
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    // The full mask leaves no free coordinate, so it is never a candidate.
    for mask in 0..(1usize << d) - 1 {
        let clipped: Vec<bool> = (0..d).map(|i| mask & (1 << i) != 0).collect();
        if let Some((obj, p)) = eval(&clipped) {
            if best.as_ref().map_or(true, |(b, _)| obj < *b) {
                best = Some((obj, p));
            }
        }
    }
    best.expect("some active set satisfies the optimality conditions").1
}

/// `(1/2^k) Σ_{i<2^k} P^i`, accumulated by repeated doubling.
///
/// Rows are renormalized after every squaring; otherwise the row-sum drift
/// doubles each round.
pub fn cesaro_average(p: &DMatrix<f64>, doublings: u32) -> DMatrix<f64> {
    let n = p.nrows();
    let mut avg = DMatrix::identity(n, n);
    let mut power = p.clone();
    for _ in 0..doublings {
        avg = (&avg + &power * &avg) * 0.5;
        power = &power * &power;
        for mut row in power.row_iter_mut() {
            let sum = row.sum();
            row /= sum;
        }
    }
    avg
}

/// `(1/H) Σ_{i<H} P^i` by direct accumulation.
pub fn cesaro_truncated(p: &DMatrix<f64>, horizon: usize) -> DMatrix<f64> {
    let n = p.nrows();
    let mut acc = DMatrix::zeros(n, n);
    let mut power = DMatrix::identity(n, n);
    for _ in 0..horizon {
        acc += &power;
        power = &power * p;
    }
    acc / horizon as f64
}

/// Induced chain and reward of a policy, formed entry by entry.
pub fn chain_of(m: &Mdp, p: &Policy) -> (DMatrix<f64>, DVector<f64>) {
    let n = m.n_states;
    let mut pp = DMatrix::zeros(n, n);
    let mut r = DVector::zeros(n);
    for s in 0..n {
        for a in 0..m.n_actions {
            r[s] += p.table[s][a] * m.reward[s][a];
            for t in 0..n {
                pp[(s, t)] += p.table[s][a] * m.kernel[s][a][t];
            }
        }
    }
    (pp, r)
}

/// Gain of a policy from a long Cesàro average.
pub fn gain(m: &Mdp, p: &Policy) -> DVector<f64> {
    let (pp, r) = chain_of(m, p);
    cesaro_average(&pp, 40) * r
}

/// Best `μᵀJ^π` over all deterministic policies, with the maximizing action
/// vector (`|A|^|S| ≤ 2^16`).
pub fn best_deterministic_gain(m: &Mdp, mu: &DVector<f64>) -> (f64, Vec<usize>) {
    let (ns, na) = (m.n_states, m.n_actions);
    let count = (na as f64).powi(ns as i32);
    assert!(count <= 65536.0, "too many deterministic policies to enumerate");
    let mut best = (f64::NEG_INFINITY, vec![0; ns]);
    let mut actions = vec![0usize; ns];
    loop {
        let g = mu.dot(&gain(m, &Policy::deterministic(&actions, na)));
        if g > best.0 {
            best = (g, actions.clone());
        }
        let mut s = 0;
        while s < ns {
            actions[s] += 1;
            if actions[s] < na {
                break;
            }
            actions[s] = 0;
            s += 1;
        }
        if s == ns {
            return best;
        }
    }
}
