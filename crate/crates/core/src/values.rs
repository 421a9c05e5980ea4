//! Exact evaluation of gain, bias and action values, the performance
//! difference identity, and the recurrent/transient policy gradient.

use nalgebra::{DMatrix, DVector};

use crate::chain::{classify, ChainAnalysis, Classification, VisitationBundle};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{perturb_policy, Mdp, Policy, TangentDirection};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// `J`, `V` per state and `K`, `Q`, `G` per state-action pair.
#[derive(Debug, Clone)]
pub struct ValueBundle {
    pub j: DVector<f64>,
    pub v: DVector<f64>,
    pub k: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub g: DMatrix<f64>,
}

impl ValueBundle {
    /// `μᵀ J`
    pub fn gain_mu(&self, mu: &DVector<f64>) -> f64 {
        mu.dot(&self.j)
    }
}

/// Bellman residuals `‖PJ - J‖∞` and `‖r + PV - J - V‖∞`.
pub fn bellman_residuals(an: &ChainAnalysis, vb: &ValueBundle) -> (f64, f64) {
    let p = &an.chain.p_pi;
    let gain = (p * &vb.j - &vb.j).amax();
    let bias = (&an.chain.r_pi + p * &vb.v - &vb.j - &vb.v).amax();
    (gain, bias)
}

/// Evaluates the policy behind an existing chain analysis.
pub fn evaluate_analysis(m: &Mdp, an: &ChainAnalysis) -> Result<ValueBundle> {
    let n = m.n_states;
    let p = &an.chain.p_pi;
    let ps = &an.p_star;
    let r = &an.chain.r_pi;
    let id = DMatrix::<f64>::identity(n, n);
    let j = ps * r;
    let v = linalg::solve_vec(&(&id - p + ps), &((&id - ps) * r), "fundamental matrix (I - P + P*)")?;
    let k = m.expect(&j);
    let q = m.reward_table() + m.expect(&v) - &k;
    let mask = an.classification.recurrent_mask();
    let g = DMatrix::from_fn(n, m.n_actions, |s, a| if mask[s] { q[(s, a)] } else { k[(s, a)] });
    Ok(ValueBundle { j, v, k, q, g })
}

/// Evaluation of an interior policy under the MDP's classification.
pub fn evaluate(m: &Mdp, p: &Policy, c: &Classification) -> Result<ValueBundle> {
    evaluate_analysis(m, &ChainAnalysis::interior(m, p, c)?)
}

/// Evaluation of any policy (including deterministic ones) under the
/// classification of its own chain.
pub fn evaluate_any(m: &Mdp, p: &Policy) -> Result<ValueBundle> {
    evaluate_analysis(m, &ChainAnalysis::general(m, p)?)
}

pub fn require_full_support(mu: &DVector<f64>) -> Result<()> {
    match mu.iter().position(|&x| !(x > 0.0)) {
        Some(s) => Err(Error::NotFullSupport(s)),
        None => Ok(()),
    }
}

/// Both sides of the performance difference identity, with the recurrent and
/// transient parts of the right-hand side kept separately.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerformanceDifference {
    pub lhs: f64,
    pub rhs: f64,
    pub recurrent_term: f64,
    pub transient_term: f64,
}

/// `J_μ^π - J_μ^{π'}` against the visitation-weighted advantage of `π` over `π'`.
pub fn performance_difference(
    m: &Mdp,
    p: &Policy,
    p2: &Policy,
    mu: &DVector<f64>,
    c: &Classification,
) -> Result<PerformanceDifference> {
    require_full_support(mu)?;
    let an = ChainAnalysis::interior(m, p, c)?;
    let vis = an.visitation(mu)?;
    let v1 = evaluate_analysis(m, &an)?;
    let v2 = evaluate(m, p2, c)?;
    let diff = |s: usize, table: &DMatrix<f64>| -> f64 {
        (0..m.n_actions)
            .map(|a| (p.prob(s, a) - p2.prob(s, a)) * table[(s, a)])
            .sum()
    };
    let recurrent_term = c
        .recurrent_classes
        .iter()
        .flatten()
        .map(|&s| vis.d[s] * diff(s, &v2.q))
        .sum();
    let transient_term = c.transient.iter().map(|&s| vis.delta[s] * diff(s, &v2.k)).sum();
    Ok(PerformanceDifference {
        lhs: v1.gain_mu(mu) - v2.gain_mu(mu),
        rhs: recurrent_term + transient_term,
        recurrent_term,
        transient_term,
    })
}

/// `∇J_μ^π` under the direct parameterization.
#[derive(Debug, Clone)]
pub struct GradientTable {
    pub grad: DMatrix<f64>,
    /// `false` when `μ` lacks full support and the result is only a diagnostic.
    pub full_support: bool,
}

impl GradientTable {
    pub fn directional(&self, u: &TangentDirection) -> f64 {
        u.dot(&self.grad)
    }
}

/// `ρ(s)·G(s,a)` from precomputed pieces.
pub fn gradient_from(vis: &VisitationBundle, vb: &ValueBundle) -> DMatrix<f64> {
    DMatrix::from_fn(vb.g.nrows(), vb.g.ncols(), |s, a| vis.rho[s] * vb.g[(s, a)])
}

pub fn policy_gradient(m: &Mdp, p: &Policy, mu: &DVector<f64>, c: &Classification) -> Result<GradientTable> {
    let an = ChainAnalysis::interior(m, p, c)?;
    let vis = an.visitation(mu)?;
    let vb = evaluate_analysis(m, &an)?;
    Ok(GradientTable {
        grad: gradient_from(&vis, &vb),
        full_support: require_full_support(mu).is_ok(),
    })
}

/// `(J_μ^{p+hu} - J_μ^{p-hu}) / 2h`, both endpoints evaluated exactly.
pub fn finite_diff_directional(m: &Mdp, p: &Policy, mu: &DVector<f64>, u: &TangentDirection, h: f64) -> Result<f64> {
    let c = classify(m);
    let plus = perturb_policy(p, u, h)?;
    let minus = perturb_policy(p, u, -h)?;
    let jp = evaluate(m, &plus, &c)?.gain_mu(mu);
    let jm = evaluate(m, &minus, &c)?.gain_mu(mu);
    Ok((jp - jm) / (2.0 * h))
}
