//! Finite MDPs, policies and the Markov chains they induce.
//!
//! Everything is dense: at desk scale (a few hundred states at most) dense
//! tables are simpler and faster than any sparse layout.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for probability rows and policy floors.
pub const PROB_TOL: f64 = 1e-12;

/// A finite average-reward MDP with deterministic rewards in `[-R, R]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub reward_bound: f64,
    /// `kernel[s][a][s']`
    pub kernel: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a]`
    pub reward: Vec<Vec<f64>>,
}

/// One broken invariant found by [`Mdp::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape(String),
    NegativeProbability {
        state: usize,
        action: usize,
        next: usize,
        value: f64,
    },
    RowSum {
        state: usize,
        action: usize,
        sum: f64,
    },
    RewardBound {
        state: usize,
        action: usize,
        reward: f64,
        bound: f64,
    },
    NotFinite {
        state: usize,
        action: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape(msg) => write!(f, "shape: {msg}"),
            Violation::NegativeProbability {
                state,
                action,
                next,
                value,
            } => write!(f, "P[{state}][{action}][{next}] = {value} is negative"),
            Violation::RowSum { state, action, sum } => {
                write!(f, "P[{state}][{action}] sums to {sum}, expected 1")
            }
            Violation::RewardBound {
                state,
                action,
                reward,
                bound,
            } => write!(f, "|r[{state}][{action}]| = {} exceeds R = {bound}", reward.abs()),
            Violation::NotFinite { state, action } => {
                write!(f, "non-finite entry at ({state},{action})")
            }
        }
    }
}

/// All invariant violations of an MDP; empty when the MDP is valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

impl Mdp {
    /// Builds an MDP and rejects it unless every invariant holds.
    pub fn new(kernel: Vec<Vec<Vec<f64>>>, reward: Vec<Vec<f64>>, reward_bound: f64) -> Result<Self> {
        let n_states = kernel.len();
        let n_actions = kernel.first().map_or(0, |row| row.len());
        let mdp = Mdp {
            n_states,
            n_actions,
            reward_bound,
            kernel,
            reward,
        };
        let report = mdp.validate();
        if report.is_valid() {
            Ok(mdp)
        } else {
            Err(Error::InvalidMdp(report))
        }
    }

    /// Lists every invariant violation with its coordinates.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        if self.n_states == 0 || self.n_actions == 0 {
            violations.push(Violation::Shape(format!(
                "need at least one state and one action, got |S|={} |A|={}",
                self.n_states, self.n_actions
            )));
            return ValidationReport { violations };
        }
        if !(self.reward_bound >= 0.0 && self.reward_bound.is_finite()) {
            violations.push(Violation::Shape(format!(
                "reward bound {} must be finite and non-negative",
                self.reward_bound
            )));
        }
        if self.kernel.len() != self.n_states || self.reward.len() != self.n_states {
            violations.push(Violation::Shape(format!(
                "expected {} kernel and reward rows, got {} and {}",
                self.n_states,
                self.kernel.len(),
                self.reward.len()
            )));
            return ValidationReport { violations };
        }
        for s in 0..self.n_states {
            if self.kernel[s].len() != self.n_actions || self.reward[s].len() != self.n_actions {
                violations.push(Violation::Shape(format!(
                    "state {s} has {} kernel actions and {} rewards, expected {}",
                    self.kernel[s].len(),
                    self.reward[s].len(),
                    self.n_actions
                )));
                continue;
            }
            for a in 0..self.n_actions {
                let row = &self.kernel[s][a];
                if row.len() != self.n_states {
                    violations.push(Violation::Shape(format!(
                        "P[{s}][{a}] has length {}, expected {}",
                        row.len(),
                        self.n_states
                    )));
                    continue;
                }
                let r = self.reward[s][a];
                if !r.is_finite() || row.iter().any(|p| !p.is_finite()) {
                    violations.push(Violation::NotFinite { state: s, action: a });
                    continue;
                }
                for (next, &value) in row.iter().enumerate() {
                    if value < 0.0 {
                        violations.push(Violation::NegativeProbability {
                            state: s,
                            action: a,
                            next,
                            value,
                        });
                    }
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > PROB_TOL {
                    violations.push(Violation::RowSum {
                        state: s,
                        action: a,
                        sum,
                    });
                }
                if r.abs() > self.reward_bound {
                    violations.push(Violation::RewardBound {
                        state: s,
                        action: a,
                        reward: r,
                        bound: self.reward_bound,
                    });
                }
            }
        }
        ValidationReport { violations }
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.kernel[s][a][next]
    }

    #[inline]
    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[s][a]
    }

    /// `(P f)(s, a) = Σ_{s'} P(s'|s,a) f(s')` as an `|S| x |A|` table.
    pub fn expect(&self, f: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_states, self.n_actions, |s, a| {
            self.kernel[s][a].iter().zip(f.iter()).map(|(p, v)| p * v).sum()
        })
    }

    pub fn reward_table(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_states, self.n_actions, |s, a| self.reward[s][a])
    }

    /// States reachable in one step from `s` under some action.
    pub fn support_successors(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_states).filter(move |&t| self.kernel[s].iter().any(|row| row[t] > 0.0))
    }

    /// Same transitions with every reward set to zero.
    pub fn with_zero_reward(&self) -> Mdp {
        let mut m = self.clone();
        for row in &mut m.reward {
            row.iter_mut().for_each(|r| *r = 0.0);
        }
        m
    }
}

/// A stationary randomized policy `π(a|s)` stored as an `|S| x |A|` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub table: Vec<Vec<f64>>,
    /// Floor `α` the policy is constrained to (0 when unconstrained).
    #[serde(default)]
    pub floor: f64,
}

impl Policy {
    pub fn new(table: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_floor(table, 0.0)
    }

    /// Builds a policy in `Π_α`, rejecting rows that are not distributions or
    /// that dip below the floor.
    pub fn with_floor(table: Vec<Vec<f64>>, floor: f64) -> Result<Self> {
        let n_actions = table.first().map_or(0, |r| r.len());
        if table.is_empty() || n_actions == 0 {
            return Err(Error::InvalidPolicy("empty table".into()));
        }
        for (s, row) in table.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::InvalidPolicy(format!(
                    "row {s} has {} actions, expected {n_actions}",
                    row.len()
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {sum}")));
            }
            for (a, &p) in row.iter().enumerate() {
                if !(p >= 0.0) {
                    return Err(Error::InvalidPolicy(format!("pi({a}|{s}) = {p} is negative")));
                }
                if p < floor - PROB_TOL {
                    return Err(Error::InvalidPolicy(format!(
                        "pi({a}|{s}) = {p} is below the floor {floor}"
                    )));
                }
            }
        }
        Ok(Policy { table, floor })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy {
            table: vec![vec![1.0 / n_actions as f64; n_actions]; n_states],
            floor: 0.0,
        }
    }

    /// One-hot policy selecting `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let table = actions
            .iter()
            .map(|&a| (0..n_actions).map(|b| if a == b { 1.0 } else { 0.0 }).collect())
            .collect();
        Policy { table, floor: 0.0 }
    }

    /// The α-clipped version of a deterministic choice: `1-(|A|-1)α` on the
    /// chosen action and `α` elsewhere.
    pub fn clipped_deterministic(actions: &[usize], n_actions: usize, alpha: f64) -> Self {
        let top = 1.0 - (n_actions as f64 - 1.0) * alpha;
        let table = actions
            .iter()
            .map(|&a| (0..n_actions).map(|b| if a == b { top } else { alpha }).collect())
            .collect();
        Policy { table, floor: alpha }
    }

    pub fn n_states(&self) -> usize {
        self.table.len()
    }

    pub fn n_actions(&self) -> usize {
        self.table[0].len()
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.table[s][a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.table[s]
    }

    pub fn min_entry(&self) -> f64 {
        self.table
            .iter()
            .flat_map(|r| r.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    /// Membership in `Π₊`.
    pub fn is_interior(&self) -> bool {
        self.min_entry() > 0.0
    }

    /// Fails with the first zero coordinate if the policy is not in `Π₊`.
    pub fn require_interior(&self) -> Result<()> {
        for (s, row) in self.table.iter().enumerate() {
            for (a, &p) in row.iter().enumerate() {
                if !(p > 0.0) {
                    return Err(Error::NotInterior {
                        state: s,
                        action: a,
                        value: p,
                    });
                }
            }
        }
        Ok(())
    }

    /// Membership in `Π_α` (within [`PROB_TOL`]).
    pub fn in_floor_set(&self, alpha: f64) -> bool {
        self.min_entry() >= alpha - PROB_TOL
    }

    pub fn as_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_states(), self.n_actions(), |s, a| self.table[s][a])
    }

    /// `max_{s,a} |π(a|s) - π'(a|s)|`
    pub fn max_abs_diff(&self, other: &Policy) -> f64 {
        self.table
            .iter()
            .zip(&other.table)
            .flat_map(|(r1, r2)| r1.iter().zip(r2).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    fn check_shape(&self, m: &Mdp) -> Result<()> {
        if self.n_states() != m.n_states || self.table.iter().any(|r| r.len() != m.n_actions) {
            return Err(Error::Dimension(format!(
                "policy is {}x{}, MDP is {}x{}",
                self.n_states(),
                self.n_actions(),
                m.n_states,
                m.n_actions
            )));
        }
        Ok(())
    }
}

/// The chain `P^π`, the reward `r^π`, and the policy matrix `Θ_π`.
#[derive(Debug, Clone)]
pub struct InducedChain {
    pub p_pi: DMatrix<f64>,
    pub r_pi: DVector<f64>,
    /// `|S| x |S||A|` with `Θ_π P = P^π` and `Θ_π r = r^π`; column index is `s*|A| + a`.
    pub theta_pi: DMatrix<f64>,
}

/// Stacks the kernel as an `|S||A| x |S|` matrix (row `s*|A| + a`).
pub fn stacked_kernel(m: &Mdp) -> DMatrix<f64> {
    DMatrix::from_fn(m.n_states * m.n_actions, m.n_states, |row, t| {
        m.kernel[row / m.n_actions][row % m.n_actions][t]
    })
}

pub fn stacked_reward(m: &Mdp) -> DVector<f64> {
    DVector::from_fn(m.n_states * m.n_actions, |row, _| {
        m.reward[row / m.n_actions][row % m.n_actions]
    })
}

pub fn induce_chain(m: &Mdp, p: &Policy) -> Result<InducedChain> {
    p.check_shape(m)?;
    let (ns, na) = (m.n_states, m.n_actions);
    let p_pi = DMatrix::from_fn(ns, ns, |s, t| (0..na).map(|a| p.table[s][a] * m.kernel[s][a][t]).sum());
    let r_pi = DVector::from_fn(ns, |s, _| (0..na).map(|a| p.table[s][a] * m.reward[s][a]).sum());
    let theta_pi = DMatrix::from_fn(
        ns,
        ns * na,
        |s, col| {
            if col / na == s {
                p.table[s][col % na]
            } else {
                0.0
            }
        },
    );
    Ok(InducedChain { p_pi, r_pi, theta_pi })
}

/// A direction in the tangent space of the product simplex (zero row sums).
#[derive(Debug, Clone, PartialEq)]
pub struct TangentDirection {
    pub table: Vec<Vec<f64>>,
}

impl TangentDirection {
    pub fn new(table: Vec<Vec<f64>>) -> Result<Self> {
        for (s, row) in table.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if sum.abs() > PROB_TOL {
                return Err(Error::InvalidArgument(format!(
                    "tangent row {s} sums to {sum}, expected 0"
                )));
            }
        }
        Ok(TangentDirection { table })
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        TangentDirection {
            table: vec![vec![0.0; n_actions]; n_states],
        }
    }

    /// `Σ_{s,a} g(s,a) u(s,a)`
    pub fn dot(&self, g: &DMatrix<f64>) -> f64 {
        self.table
            .iter()
            .enumerate()
            .flat_map(|(s, row)| row.iter().enumerate().map(move |(a, &u)| u * g[(s, a)]))
            .sum()
    }
}

/// `p + t·u`, rejected with the offending coordinate when an entry leaves `(0,1)`.
pub fn perturb_policy(p: &Policy, u: &TangentDirection, t: f64) -> Result<Policy> {
    if u.table.len() != p.n_states() || u.table.iter().any(|r| r.len() != p.n_actions()) {
        return Err(Error::Dimension("tangent direction does not match policy".into()));
    }
    let mut table = p.table.clone();
    for (s, row) in table.iter_mut().enumerate() {
        for (a, x) in row.iter_mut().enumerate() {
            let value = *x + t * u.table[s][a];
            if t != 0.0 && !(value > 0.0 && value < 1.0) {
                return Err(Error::StepTooLarge {
                    state: s,
                    action: a,
                    value,
                });
            }
            *x = value;
        }
    }
    Ok(Policy { table, floor: 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::twochain;

    #[test]
    fn twochain_is_valid() {
        assert!(twochain().validate().is_valid());
    }

    #[test]
    fn short_row_is_reported_with_coordinates() {
        let mut m = twochain();
        m.kernel[0][1] = vec![0.0, 0.0, 0.9];
        let report = m.validate();
        assert_eq!(report.violations.len(), 1);
        match &report.violations[0] {
            Violation::RowSum { state, action, sum } => {
                assert_eq!((*state, *action), (0, 1));
                assert!((sum - 0.9).abs() < 1e-15);
            }
            v => panic!("unexpected violation {v:?}"),
        }
    }

    #[test]
    fn reward_above_bound_is_reported() {
        let mut m = twochain();
        m.reward[1][0] = 2.0 * m.reward_bound;
        let report = m.validate();
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(
            report.violations[0],
            Violation::RewardBound {
                state: 1,
                action: 0,
                ..
            }
        ));
    }

    #[test]
    fn new_never_renormalizes() {
        let m = twochain();
        let mut kernel = m.kernel.clone();
        kernel[2][0] = vec![0.0, 0.0, 1.0 + 1e-9];
        assert!(matches!(
            Mdp::new(kernel, m.reward.clone(), 1.0),
            Err(Error::InvalidMdp(_))
        ));
    }

    #[test]
    fn induced_row_of_twochain() {
        let m = twochain();
        let p = 0.3;
        let pol = Policy::new(vec![vec![p, 1.0 - p], vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let ch = induce_chain(&m, &pol).unwrap();
        assert_eq!(ch.p_pi[(0, 0)], 0.0);
        assert!((ch.p_pi[(0, 1)] - p).abs() < 1e-15);
        assert!((ch.p_pi[(0, 2)] - (1.0 - p)).abs() < 1e-15);
    }

    #[test]
    fn deterministic_policy_selects_kernel_row() {
        let m = crate::fixtures::ergodic_ring(5, 3, 0.2, 4);
        let actions = [2, 0, 1, 1, 0];
        let ch = induce_chain(&m, &Policy::deterministic(&actions, 3)).unwrap();
        for s in 0..5 {
            for t in 0..5 {
                assert_eq!(ch.p_pi[(s, t)], m.kernel[s][actions[s]][t]);
            }
        }
    }

    #[test]
    fn uniform_policy_on_identical_rows() {
        let row = vec![0.2, 0.5, 0.3];
        let kernel = vec![vec![row.clone(); 2]; 3];
        let m = Mdp::new(kernel, vec![vec![0.0; 2]; 3], 1.0).unwrap();
        let ch = induce_chain(&m, &Policy::uniform(3, 2)).unwrap();
        for s in 0..3 {
            for t in 0..3 {
                assert!((ch.p_pi[(s, t)] - row[t]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn theta_reproduces_chain_and_reward() {
        let m = crate::fixtures::random_desk_fixture(11);
        let pol = crate::fixtures::random_interior_policy(m.n_states, m.n_actions, 0.0, 5);
        let ch = induce_chain(&m, &pol).unwrap();
        let tp = &ch.theta_pi * stacked_kernel(&m);
        let tr = &ch.theta_pi * stacked_reward(&m);
        assert!((tp - &ch.p_pi).amax() < 1e-12);
        assert!((tr - &ch.r_pi).amax() < 1e-12);
        for s in 0..m.n_states {
            assert!((ch.p_pi.row(s).sum() - 1.0).abs() < 1e-12);
            assert!((ch.theta_pi.row(s).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn perturb_identity_and_step() {
        let p = Policy::uniform(2, 2);
        let mut u = TangentDirection::zeros(2, 2);
        u.table[1] = vec![1.0, -1.0];
        assert_eq!(perturb_policy(&p, &u, 0.0).unwrap().table, p.table);
        let q = perturb_policy(&p, &u, 0.1).unwrap();
        assert!((q.table[1][0] - 0.6).abs() < 1e-15);
        assert!((q.table[1][1] - 0.4).abs() < 1e-15);
        assert_eq!(q.table[0], vec![0.5, 0.5]);
    }

    #[test]
    fn perturb_rejects_large_step() {
        let p = Policy::uniform(2, 2);
        let mut u = TangentDirection::zeros(2, 2);
        u.table[0] = vec![-1.0, 1.0];
        match perturb_policy(&p, &u, 0.7) {
            Err(Error::StepTooLarge { state, action, .. }) => assert_eq!((state, action), (0, 0)),
            other => panic!("expected StepTooLarge, got {other:?}"),
        }
    }

    #[test]
    fn tangent_rows_must_sum_to_zero() {
        assert!(TangentDirection::new(vec![vec![1.0, -0.5]]).is_err());
        assert!(TangentDirection::new(vec![vec![1.0, -1.0]]).is_ok());
    }
}
