//! Recurrent/transient structure of induced chains.
//!
//! Classification is combinatorial: for an interior policy the support of
//! `P^π` is the union of the action supports, so the closed strongly connected
//! components of that graph are the recurrent classes of every `π ∈ Π₊`.
//! The canonical blocks, the Cesàro limit and the visitation measures then
//! follow from a handful of dense solves.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::linalg::{self, inf_norm, submatrix};
use crate::mdp::{induce_chain, InducedChain, Mdp, Policy};
use crate::rng;
use nalgebra::{DMatrix, DVector};

/// Classes up to this size get an exact cover time; larger ones are sampled.
pub const EXACT_COVER_MAX: usize = 12;

/// Partition of the states into recurrent classes and transient states.
///
/// Classes are sorted by their smallest state and each list is ascending, so
/// two classifications of the same chain compare equal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classification {
    pub recurrent_classes: Vec<Vec<usize>>,
    pub transient: Vec<usize>,
}

impl Classification {
    /// Normalizes ordering and checks that the sets partition `0..n_states`.
    pub fn new(mut recurrent_classes: Vec<Vec<usize>>, mut transient: Vec<usize>, n_states: usize) -> Result<Self> {
        for class in &mut recurrent_classes {
            class.sort_unstable();
            if class.is_empty() {
                return Err(Error::InvalidArgument("empty recurrent class".into()));
            }
        }
        recurrent_classes.sort_by_key(|c| c[0]);
        transient.sort_unstable();
        let mut seen = vec![false; n_states];
        for &s in recurrent_classes.iter().flatten().chain(&transient) {
            if s >= n_states || seen[s] {
                return Err(Error::InvalidArgument(format!(
                    "state {s} is out of range or listed twice"
                )));
            }
            seen[s] = true;
        }
        if let Some(s) = seen.iter().position(|x| !x) {
            return Err(Error::InvalidArgument(format!("state {s} is unclassified")));
        }
        Ok(Classification {
            recurrent_classes,
            transient,
        })
    }

    pub fn m(&self) -> usize {
        self.recurrent_classes.len()
    }

    pub fn n_states(&self) -> usize {
        self.recurrent_classes.iter().map(Vec::len).sum::<usize>() + self.transient.len()
    }

    pub fn class_of(&self, s: usize) -> Option<usize> {
        self.recurrent_classes.iter().position(|c| c.binary_search(&s).is_ok())
    }

    pub fn is_recurrent(&self, s: usize) -> bool {
        self.class_of(s).is_some()
    }

    /// `true` for recurrent states, indexed by state.
    pub fn recurrent_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n_states()];
        for &s in self.recurrent_classes.iter().flatten() {
            mask[s] = true;
        }
        mask
    }
}

fn reachability(n: usize, successors: &[Vec<usize>]) -> Vec<Vec<bool>> {
    (0..n)
        .map(|start| {
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(s) = queue.pop_front() {
                for &t in &successors[s] {
                    if !seen[t] {
                        seen[t] = true;
                        queue.push_back(t);
                    }
                }
            }
            seen
        })
        .collect()
}

/// Closed communicating classes of a directed graph given by successor lists.
pub fn classify_graph(successors: &[Vec<usize>]) -> Classification {
    let n = successors.len();
    let reach = reachability(n, successors);
    let mut assigned = vec![false; n];
    let mut classes = Vec::new();
    let mut transient = Vec::new();
    for s in 0..n {
        if assigned[s] {
            continue;
        }
        // s is recurrent iff every state it reaches can reach it back.
        let closed = (0..n).all(|t| !reach[s][t] || reach[t][s]);
        if closed {
            let class: Vec<usize> = (0..n).filter(|&t| reach[s][t]).collect();
            for &t in &class {
                assigned[t] = true;
            }
            classes.push(class);
        } else {
            assigned[s] = true;
            transient.push(s);
        }
    }
    Classification {
        recurrent_classes: classes,
        transient,
    }
}

/// Classification shared by every interior policy of `m`.
pub fn classify(m: &Mdp) -> Classification {
    let successors: Vec<Vec<usize>> = (0..m.n_states).map(|s| m.support_successors(s).collect()).collect();
    classify_graph(&successors)
}

/// Classification of a single stochastic matrix from its support.
pub fn classify_chain(p: &DMatrix<f64>) -> Classification {
    let successors: Vec<Vec<usize>> = (0..p.nrows())
        .map(|s| (0..p.ncols()).filter(|&t| p[(s, t)] > 0.0).collect())
        .collect();
    classify_graph(&successors)
}

/// One recurrent class in canonical form.
#[derive(Debug, Clone)]
pub struct ClassBlock {
    pub states: Vec<usize>,
    /// `R_i^π`
    pub block: DMatrix<f64>,
    /// `g_i^π`, aligned with `states`.
    pub stationary: DVector<f64>,
    /// `S_i^π`: transient rows, class columns.
    pub from_transient: DMatrix<f64>,
}

/// Canonical decomposition of `P^π` under a classification.
#[derive(Debug, Clone)]
pub struct CanonicalForm {
    /// Original state indices in canonical order (classes, then transient).
    pub order: Vec<usize>,
    pub classes: Vec<ClassBlock>,
    pub transient: Vec<usize>,
    /// `T^π`
    pub transient_block: DMatrix<f64>,
    /// `(I - T^π)^{-1}`
    pub transient_fundamental: DMatrix<f64>,
    /// Absorption probabilities `(I - T^π)^{-1} S_i^π 1`, one column per class.
    pub absorption: DMatrix<f64>,
    n_states: usize,
}

impl CanonicalForm {
    /// Decomposes any stochastic matrix whose recurrent classes are closed
    /// under it. The classification is checked edgewise.
    pub fn of_chain(p_pi: &DMatrix<f64>, c: &Classification) -> Result<Self> {
        let n = p_pi.nrows();
        if c.n_states() != n {
            return Err(Error::Dimension(format!(
                "classification covers {} states, chain has {n}",
                c.n_states()
            )));
        }
        for (i, class) in c.recurrent_classes.iter().enumerate() {
            for &s in class {
                for t in 0..n {
                    if p_pi[(s, t)] > 0.0 && class.binary_search(&t).is_err() {
                        return Err(Error::InvalidArgument(format!(
                            "recurrent class {i} is not closed: edge {s} -> {t}"
                        )));
                    }
                }
            }
        }
        let transient = c.transient.clone();
        let transient_block = submatrix(p_pi, &transient, &transient);
        let nt = transient.len();
        let transient_fundamental = linalg::inverse(
            &(DMatrix::identity(nt, nt) - &transient_block),
            "transient block (I - T)",
        )?;
        let mut classes = Vec::with_capacity(c.m());
        let mut exits = DMatrix::zeros(nt, c.m());
        for (i, states) in c.recurrent_classes.iter().enumerate() {
            let block = submatrix(p_pi, states, states);
            let stationary = linalg::stationary(&block, &format!("recurrent class {i}"))?;
            let from_transient = submatrix(p_pi, &transient, states);
            for r in 0..nt {
                exits[(r, i)] = from_transient.row(r).sum();
            }
            classes.push(ClassBlock {
                states: states.clone(),
                block,
                stationary,
                from_transient,
            });
        }
        let absorption = &transient_fundamental * exits;
        let order = c
            .recurrent_classes
            .iter()
            .flatten()
            .chain(&transient)
            .copied()
            .collect();
        Ok(CanonicalForm {
            order,
            classes,
            transient,
            transient_block,
            transient_fundamental,
            absorption,
            n_states: n,
        })
    }

    /// `P^π_⋆` in the original state order.
    pub fn cesaro(&self) -> DMatrix<f64> {
        let mut p_star = DMatrix::zeros(self.n_states, self.n_states);
        for (i, class) in self.classes.iter().enumerate() {
            for &s in &class.states {
                for (k, &t) in class.states.iter().enumerate() {
                    p_star[(s, t)] = class.stationary[k];
                }
            }
            for (r, &s) in self.transient.iter().enumerate() {
                let a = self.absorption[(r, i)];
                for (k, &t) in class.states.iter().enumerate() {
                    p_star[(s, t)] = a * class.stationary[k];
                }
            }
        }
        p_star
    }

    /// `T̄^π`: `P^π` zeroed outside `T x T`, full size.
    pub fn transient_matrix(&self) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(self.n_states, self.n_states);
        for (i, &s) in self.transient.iter().enumerate() {
            for (j, &u) in self.transient.iter().enumerate() {
                t[(s, u)] = self.transient_block[(i, j)];
            }
        }
        t
    }
}

/// Recurrent measure `d`, transient measure `δ`, and their splice `ρ`.
#[derive(Debug, Clone)]
pub struct VisitationBundle {
    pub d: DVector<f64>,
    pub delta: DVector<f64>,
    pub rho: DVector<f64>,
}

/// Everything derived from one policy's chain, computed once and shared by
/// evaluation, gradients and visitation.
#[derive(Debug, Clone)]
pub struct ChainAnalysis {
    pub chain: InducedChain,
    pub classification: Classification,
    pub form: CanonicalForm,
    pub p_star: DMatrix<f64>,
}

impl ChainAnalysis {
    /// Analysis of an interior policy under the MDP's shared classification.
    pub fn interior(m: &Mdp, p: &Policy, c: &Classification) -> Result<Self> {
        p.require_interior()?;
        let chain = induce_chain(m, p)?;
        Self::from_chain(chain, c.clone())
    }

    /// Analysis of an arbitrary policy; the classification is recomputed from
    /// the support of its own chain.
    pub fn general(m: &Mdp, p: &Policy) -> Result<Self> {
        let chain = induce_chain(m, p)?;
        let c = classify_chain(&chain.p_pi);
        Self::from_chain(chain, c)
    }

    fn from_chain(chain: InducedChain, classification: Classification) -> Result<Self> {
        let form = CanonicalForm::of_chain(&chain.p_pi, &classification)?;
        let p_star = form.cesaro();
        Ok(ChainAnalysis {
            chain,
            classification,
            form,
            p_star,
        })
    }

    pub fn visitation(&self, mu: &DVector<f64>) -> Result<VisitationBundle> {
        let n = self.p_star.nrows();
        if mu.len() != n {
            return Err(Error::Dimension(format!("mu has {} entries, expected {n}", mu.len())));
        }
        let d = self.p_star.tr_mul(mu);
        let mut delta = mu.clone();
        let tr = &self.form.transient;
        for (j, &s) in tr.iter().enumerate() {
            delta[s] = tr
                .iter()
                .enumerate()
                .map(|(i, &t)| mu[t] * self.form.transient_fundamental[(i, j)])
                .sum();
        }
        let mask = self.classification.recurrent_mask();
        let rho = DVector::from_fn(n, |s, _| if mask[s] { d[s] } else { delta[s] });
        Ok(VisitationBundle { d, delta, rho })
    }
}

pub fn canonical_decompose(m: &Mdp, p: &Policy, c: &Classification) -> Result<CanonicalForm> {
    Ok(ChainAnalysis::interior(m, p, c)?.form)
}

pub fn cesaro_limit(m: &Mdp, p: &Policy, c: &Classification) -> Result<DMatrix<f64>> {
    Ok(ChainAnalysis::interior(m, p, c)?.p_star)
}

pub fn visitation(m: &Mdp, p: &Policy, mu: &DVector<f64>, c: &Classification) -> Result<VisitationBundle> {
    ChainAnalysis::interior(m, p, c)?.visitation(mu)
}

/// Expected cover time of one recurrent class.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverTime {
    pub value: f64,
    /// `Some` when the value is a Monte Carlo estimate.
    pub std_error: Option<f64>,
}

/// Expected target times, transient half-life and cover times of a chain.
#[derive(Debug, Clone)]
pub struct ChainConstants {
    pub t_tar: Vec<f64>,
    pub t_tar_max: f64,
    /// 0 when there are no transient states.
    pub t_half: usize,
    pub t_cov: Vec<CoverTime>,
    pub t_cov_max: f64,
}

/// `E[inf{t ≥ 0 : s_t = target} | s_0 = x]` for every `x` in the block.
pub fn hitting_times(block: &DMatrix<f64>, target: usize) -> Result<DVector<f64>> {
    let n = block.nrows();
    let rest: Vec<usize> = (0..n).filter(|&i| i != target).collect();
    let sub = submatrix(block, &rest, &rest);
    let h = linalg::solve_vec(
        &(DMatrix::identity(rest.len(), rest.len()) - sub),
        &DVector::from_element(rest.len(), 1.0),
        "hitting-time system",
    )?;
    let mut out = DVector::zeros(n);
    for (k, &i) in rest.iter().enumerate() {
        out[i] = h[k];
    }
    Ok(out)
}

/// `Σ_{s'} g(s') E[t_{s'} | s_0 = s]`, which does not depend on `s`.
pub fn target_time(block: &ClassBlock) -> Result<f64> {
    let n = block.states.len();
    let mut total = 0.0;
    for target in 0..n {
        let h = hitting_times(&block.block, target)?;
        total += block.stationary[target] * h[0];
    }
    Ok(total)
}

/// `min{t ≥ 1 : ‖T̄^t‖_∞ ≤ 1/2}`; 0 for an empty transient block.
pub fn transient_half_life(t_block: &DMatrix<f64>) -> Result<usize> {
    if t_block.nrows() == 0 {
        return Ok(0);
    }
    const MAX_DOUBLINGS: usize = 48;
    // Norms of powers of a substochastic matrix are non-increasing, so we
    // bracket by doubling and then bisect.
    let mut powers = vec![t_block.clone()];
    while inf_norm(powers.last().unwrap()) > 0.5 {
        if powers.len() > MAX_DOUBLINGS {
            return Err(Error::Singular {
                block: "transient block (spectral radius ~ 1)".into(),
                pivot: 0.0,
            });
        }
        let last = powers.last().unwrap();
        powers.push(last * last);
    }
    let top = powers.len() - 1;
    if top == 0 {
        return Ok(1);
    }
    // T^(2^(top-1)) is above 1/2, T^(2^top) is not. Build the answer bit by bit.
    let mut t = 1usize << (top - 1);
    let mut acc = powers[top - 1].clone();
    for bit in (0..top - 1).rev() {
        let candidate = &acc * &powers[bit];
        if inf_norm(&candidate) > 0.5 {
            acc = candidate;
            t += 1 << bit;
        }
    }
    Ok(t + 1)
}

/// Exact `max_s E[t_cov | s_0 = s]` via the (current state, visited set) chain.
pub fn exact_cover_time(block: &DMatrix<f64>) -> Result<f64> {
    let n = block.nrows();
    if n > EXACT_COVER_MAX {
        return Err(Error::InvalidArgument(format!(
            "exact cover time limited to {EXACT_COVER_MAX} states, got {n}"
        )));
    }
    let full = (1usize << n) - 1;
    // remaining[mask][c]: expected further steps until every state is seen.
    let mut remaining = vec![vec![0.0; n]; full + 1];
    for mask in (1..full).rev() {
        let inside: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let k = inside.len();
        let mut a = DMatrix::identity(k, k);
        let mut b = DVector::from_element(k, 1.0);
        for (r, &c) in inside.iter().enumerate() {
            for (q, &c2) in inside.iter().enumerate() {
                a[(r, q)] -= block[(c, c2)];
            }
            for c2 in (0..n).filter(|&i| mask & (1 << i) == 0) {
                b[r] += block[(c, c2)] * remaining[mask | (1 << c2)][c2];
            }
        }
        let f = linalg::solve_vec(&a, &b, "cover-time subset system")?;
        for (r, &c) in inside.iter().enumerate() {
            remaining[mask][c] = f[r];
        }
    }
    // t_cov counts the states s_0..s_{t-1}, hence the +1.
    Ok((0..n).map(|s| 1.0 + remaining[1 << s][s]).fold(0.0, f64::max))
}

/// Monte Carlo estimate of `max_s E[t_cov | s_0 = s]` and its standard error.
pub fn sampled_cover_time(block: &DMatrix<f64>, episodes: usize, seed: u64) -> CoverTime {
    let n = block.nrows();
    let rows: Vec<Vec<f64>> = block.row_iter().map(|r| r.iter().copied().collect()).collect();
    let episodes = episodes.max(2);
    let mut best = CoverTime {
        value: 0.0,
        std_error: Some(0.0),
    };
    for start in 0..n {
        let samples: Vec<f64> = (0..episodes)
            .map(|e| {
                let mut rng = rng::stream(seed, &[0xC0FE, start as u64, e as u64]);
                let mut seen = vec![false; n];
                seen[start] = true;
                let (mut left, mut s, mut t) = (n - 1, start, 1usize);
                while left > 0 {
                    s = rng::categorical(&mut rng, &rows[s]);
                    t += 1;
                    if !seen[s] {
                        seen[s] = true;
                        left -= 1;
                    }
                }
                t as f64
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / episodes as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (episodes - 1) as f64;
        if mean > best.value {
            best = CoverTime {
                value: mean,
                std_error: Some((var / episodes as f64).sqrt()),
            };
        }
    }
    best
}

pub fn chain_constants(m: &Mdp, p: &Policy, c: &Classification, mc_budget: usize, seed: u64) -> Result<ChainConstants> {
    let form = canonical_decompose(m, p, c)?;
    constants_of_form(&form, mc_budget, seed)
}

pub fn constants_of_form(form: &CanonicalForm, mc_budget: usize, seed: u64) -> Result<ChainConstants> {
    let t_tar = form.classes.iter().map(target_time).collect::<Result<Vec<_>>>()?;
    let t_half = transient_half_life(&form.transient_block)?;
    let t_cov = form
        .classes
        .iter()
        .enumerate()
        .map(|(i, class)| {
            if class.states.len() <= EXACT_COVER_MAX {
                exact_cover_time(&class.block).map(|value| CoverTime { value, std_error: None })
            } else {
                Ok(sampled_cover_time(
                    &class.block,
                    mc_budget,
                    rng::derive_seed(seed, &[i as u64]),
                ))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChainConstants {
        t_tar_max: t_tar.iter().copied().fold(0.0, f64::max),
        t_tar,
        t_half,
        t_cov_max: t_cov.iter().map(|c| c.value).fold(0.0, f64::max),
        t_cov,
    })
}
