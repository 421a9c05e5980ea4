//! α-clipped policy mirror ascent with exact gradients, plus the tooling
//! around it: reference optima, `B_α`/`C_α` estimates, convergence envelope
//! checks and the weakly communicating α selector.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::chain::{classify, ChainAnalysis, Classification};
use crate::error::{Error, Result};
use crate::mdp::{Mdp, Policy};
use crate::projection::{check_alpha, divergence, mirror_step, DivergenceKind, FlooredSimplexPoint};
use crate::rng;
use crate::values::{evaluate, evaluate_analysis, evaluate_any, require_full_support, ValueBundle};

/// Gaps below this are treated as converged by the rate checks.
pub const GAP_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub kind: ScheduleKind,
    pub eta0: f64,
    /// Growth constant for the adaptive schedule; ignored for constant steps.
    pub c_alpha: f64,
}

impl StepSchedule {
    pub fn constant(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {eta}")));
        }
        Ok(StepSchedule {
            kind: ScheduleKind::Constant,
            eta0: eta,
            c_alpha: f64::NAN,
        })
    }

    /// `η_{k+1} = η_k·C/(C−1)`; requires `C > 1`.
    pub fn adaptive(eta0: f64, c_alpha: f64) -> Result<Self> {
        let base = Self::constant(eta0)?;
        if !(c_alpha > 1.0 && c_alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "adaptive schedule needs C > 1, got {c_alpha}"
            )));
        }
        Ok(StepSchedule {
            kind: ScheduleKind::Adaptive,
            c_alpha,
            ..base
        })
    }

    pub fn next(&self, eta: f64) -> f64 {
        match self.kind {
            ScheduleKind::Constant => eta,
            ScheduleKind::Adaptive => eta * self.c_alpha / (self.c_alpha - 1.0),
        }
    }

    /// The first `n` step sizes.
    pub fn steps(&self, n: usize) -> Vec<f64> {
        std::iter::successors(Some(self.eta0), |&e| Some(self.next(e)))
            .take(n)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmaConfig {
    pub alpha: f64,
    pub schedule: StepSchedule,
    pub kind: DivergenceKind,
    pub iters: usize,
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub k: usize,
    pub policy: Policy,
    pub j_mu: f64,
    pub gap: Option<f64>,
    /// `D_{ρ^{π_α}}(π_α, π_k)` when a reference is supplied.
    pub divergence_to_ref: Option<f64>,
    /// Step used to move from `π_k` to `π_{k+1}`.
    pub eta: f64,
    pub samples_cum: u64,
    /// `‖Ĝ − G‖∞` for sampled gradients.
    pub grad_error: Option<f64>,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct PmaTrace {
    pub config: PmaConfig,
    pub reference_value: Option<f64>,
    pub records: Vec<IterationRecord>,
}

impl PmaTrace {
    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("trace has the k = 0 record")
    }

    pub fn gaps(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.gap).collect()
    }

    pub fn j_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.j_mu).collect()
    }

    /// Largest decrease `J_k − J_{k+1}` along the trace (≤ 0 when monotone).
    pub fn worst_decrease(&self) -> f64 {
        self.records
            .windows(2)
            .map(|w| w[0].j_mu - w[1].j_mu)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One gradient table handed to the mirror step.
#[derive(Debug, Clone)]
pub struct GradientSample {
    pub g: DMatrix<f64>,
    pub samples: u64,
    pub error: Option<f64>,
}

/// Supplies `G^{π_k}` (exact or estimated) at each iteration.
pub trait GradientSource {
    /// `exact` is the exact evaluation of `pi`, already needed for the trace.
    fn gradient(&mut self, k: usize, pi: &Policy, exact: &ValueBundle) -> Result<GradientSample>;
}

pub struct ExactGradient;

impl GradientSource for ExactGradient {
    fn gradient(&mut self, _k: usize, _pi: &Policy, exact: &ValueBundle) -> Result<GradientSample> {
        Ok(GradientSample {
            g: exact.g.clone(),
            samples: 0,
            error: None,
        })
    }
}

/// Applies the per-state mirror step to a whole policy table.
pub fn policy_mirror_step(pi: &Policy, g: &DMatrix<f64>, eta: f64, kind: DivergenceKind, alpha: f64) -> Result<Policy> {
    let table = (0..pi.n_states())
        .map(|s| {
            let row = FlooredSimplexPoint {
                p: pi.row(s).to_vec(),
                alpha,
            };
            let g_row: Vec<f64> = g.row(s).iter().copied().collect();
            mirror_step(&row, &g_row, eta, kind).map(|p| p.p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Policy { table, floor: alpha })
}

/// `Σ_s w(s)·D(p(s), p2(s))`.
pub fn weighted_divergence(kind: DivergenceKind, w: &DVector<f64>, p: &Policy, p2: &Policy) -> Result<f64> {
    let mut total = 0.0;
    for s in 0..p.n_states() {
        total += w[s] * divergence(kind, p.row(s), p2.row(s))?;
    }
    Ok(total)
}

fn check_run_inputs(m: &Mdp, mu: &DVector<f64>, cfg: &PmaConfig, pi0: &Policy) -> Result<()> {
    require_full_support(mu)?;
    if mu.len() != m.n_states {
        return Err(Error::Dimension(format!(
            "mu has {} entries, MDP has {} states",
            mu.len(),
            m.n_states
        )));
    }
    check_alpha(cfg.alpha, m.n_actions)?;
    if !(cfg.alpha > 0.0) || cfg.alpha * m.n_actions as f64 >= 1.0 {
        return Err(Error::InfeasibleAlpha {
            alpha: cfg.alpha,
            dim: m.n_actions,
        });
    }
    if pi0.n_states() != m.n_states || pi0.n_actions() != m.n_actions {
        return Err(Error::Dimension("initial policy does not match the MDP".into()));
    }
    if !pi0.in_floor_set(cfg.alpha) {
        return Err(Error::InvalidPolicy(format!(
            "initial policy has an entry {} below the floor {}",
            pi0.min_entry(),
            cfg.alpha
        )));
    }
    Ok(())
}

/// The mirror-ascent loop shared by the exact and sampled variants.
pub fn mirror_ascent(
    m: &Mdp,
    mu: &DVector<f64>,
    cfg: &PmaConfig,
    pi0: &Policy,
    reference: Option<&Policy>,
    source: &mut dyn GradientSource,
) -> Result<PmaTrace> {
    check_run_inputs(m, mu, cfg, pi0)?;
    let c = classify(m);
    let reference = match reference {
        Some(r) => {
            let an = ChainAnalysis::interior(m, r, &c)?;
            let value = evaluate_analysis(m, &an)?.gain_mu(mu);
            Some((r, value, an.visitation(mu)?.rho))
        }
        None => None,
    };
    let start = Instant::now();
    let mut records = Vec::with_capacity(cfg.iters + 1);
    let mut pi = Policy {
        table: pi0.table.clone(),
        floor: cfg.alpha,
    };
    let mut eta = cfg.schedule.eta0;
    let mut samples_cum = 0u64;
    for k in 0..=cfg.iters {
        let vb = evaluate(m, &pi, &c)?;
        let j_mu = vb.gain_mu(mu);
        let (gap, divergence_to_ref) = match &reference {
            Some((r, value, rho)) => (Some(value - j_mu), Some(weighted_divergence(cfg.kind, rho, r, &pi)?)),
            None => (None, None),
        };
        let mut record = IterationRecord {
            k,
            policy: pi.clone(),
            j_mu,
            gap,
            divergence_to_ref,
            eta,
            samples_cum,
            grad_error: None,
            wall_time: 0.0,
        };
        if k < cfg.iters {
            let sample = source.gradient(k, &pi, &vb)?;
            samples_cum += sample.samples;
            record.grad_error = sample.error;
            pi = policy_mirror_step(&pi, &sample.g, eta, cfg.kind, cfg.alpha)?;
            eta = cfg.schedule.next(eta);
        }
        record.wall_time = start.elapsed().as_secs_f64();
        records.push(record);
    }
    Ok(PmaTrace {
        config: *cfg,
        reference_value: reference.map(|r| r.1),
        records,
    })
}

pub fn run_pma(
    m: &Mdp,
    mu: &DVector<f64>,
    cfg: &PmaConfig,
    pi0: &Policy,
    reference: Option<&Policy>,
) -> Result<PmaTrace> {
    mirror_ascent(m, mu, cfg, pi0, reference, &mut ExactGradient)
}

/// Result of multichain policy iteration.
#[derive(Debug, Clone)]
pub struct PolicyIterationResult {
    pub actions: Vec<usize>,
    pub values: ValueBundle,
    pub iterations: usize,
}

const PI_TIE: f64 = 1e-10;
const PI_MAX_ITERS: usize = 10_000;

/// Multichain policy iteration: improve the gain first, then the bias among
/// gain-greedy actions, keeping the incumbent action on ties.
pub fn policy_iteration(m: &Mdp) -> Result<PolicyIterationResult> {
    let mut actions = vec![0usize; m.n_states];
    for iteration in 1..=PI_MAX_ITERS {
        let vb = evaluate_any(m, &Policy::deterministic(&actions, m.n_actions))?;
        let pj = m.expect(&vb.j);
        let mut changed = false;
        for (s, act) in actions.iter_mut().enumerate() {
            let (best, value) = argmax(pj.row(s).iter().copied());
            if value > pj[(s, *act)] + PI_TIE {
                *act = best;
                changed = true;
            }
        }
        if !changed {
            let rv = m.reward_table() + m.expect(&vb.v);
            for (s, act) in actions.iter_mut().enumerate() {
                let top = pj.row(s).max();
                let candidates = (0..m.n_actions).map(|a| {
                    if pj[(s, a)] >= top - PI_TIE {
                        rv[(s, a)]
                    } else {
                        f64::NEG_INFINITY
                    }
                });
                let (best, value) = argmax(candidates);
                if value > rv[(s, *act)] + PI_TIE {
                    *act = best;
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok(PolicyIterationResult {
                actions,
                values: vb,
                iterations: iteration,
            });
        }
    }
    Err(Error::InvalidArgument(format!(
        "policy iteration did not converge in {PI_MAX_ITERS} rounds"
    )))
}

fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    values.enumerate().fold(
        (0, f64::NEG_INFINITY),
        |best, (i, v)| if v > best.1 { (i, v) } else { best },
    )
}

/// The MDP whose stationary policies are exactly `Π_α` of `m`:
/// `P'_a = (1−|A|α)P_a + α Σ_b P_b`, and likewise for rewards.
pub fn floored_mdp(m: &Mdp, alpha: f64) -> Result<Mdp> {
    let na = m.n_actions as f64;
    let keep = 1.0 - na * alpha;
    let kernel = m
        .kernel
        .iter()
        .map(|rows| {
            let total: Vec<f64> = (0..m.n_states).map(|t| rows.iter().map(|r| r[t]).sum()).collect();
            rows.iter()
                .map(|r| r.iter().zip(&total).map(|(p, tot)| keep * p + alpha * tot).collect())
                .collect()
        })
        .collect();
    let reward = m
        .reward
        .iter()
        .map(|rs| {
            let total: f64 = rs.iter().sum();
            rs.iter().map(|r| keep * r + alpha * total).collect()
        })
        .collect();
    Mdp::new(kernel, reward, m.reward_bound)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceSource {
    /// Policy iteration on the floored MDP; exact up to solver tolerance.
    FlooredPolicyIteration,
    /// α-clipping of the unconstrained policy-iteration optimum.
    ClippedOptimal,
    /// Best of several long mirror-ascent runs.
    MultiStartPma,
}

#[derive(Debug, Clone)]
pub struct Reference {
    pub policy: Policy,
    pub value: f64,
    pub source: ReferenceSource,
}

#[derive(Debug, Clone, Copy)]
pub struct ReferenceConfig {
    pub kind: DivergenceKind,
    pub eta: f64,
    /// Random starts for the mirror-ascent candidate (0 disables it).
    pub starts: usize,
    pub iters: usize,
    pub seed: u64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            kind: DivergenceKind::Kl,
            eta: 1.0,
            starts: 10,
            iters: 2000,
            seed: 0,
        }
    }
}

/// A random policy of `Π_α`: `α + (1 − |A|α)·Dirichlet(1)` per state.
pub fn random_floored_policy(n_states: usize, n_actions: usize, alpha: f64, seed: u64) -> Policy {
    let mut rng = rng::stream(seed, &[0x5041]);
    let scale = 1.0 - n_actions as f64 * alpha;
    let table = (0..n_states)
        .map(|_| {
            let w: Vec<f64> = (0..n_actions)
                .map(|_| -rng.gen::<f64>().max(f64::MIN_POSITIVE).ln())
                .collect();
            let z: f64 = w.iter().sum();
            w.iter().map(|x| alpha + scale * x / z).collect()
        })
        .collect();
    Policy { table, floor: alpha }
}

/// Approximates `π_α ∈ argmax_{Π_α} J_μ` by the best of the candidates.
pub fn compute_reference(m: &Mdp, mu: &DVector<f64>, alpha: f64, cfg: &ReferenceConfig) -> Result<Reference> {
    let c = classify(m);
    let value_of = |p: &Policy| evaluate(m, p, &c).map(|vb| vb.gain_mu(mu));
    let mut candidates = Vec::new();

    let floored = policy_iteration(&floored_mdp(m, alpha)?)?;
    let p = Policy::clipped_deterministic(&floored.actions, m.n_actions, alpha);
    candidates.push((value_of(&p)?, p, ReferenceSource::FlooredPolicyIteration));

    let plain = policy_iteration(m)?;
    let p = Policy::clipped_deterministic(&plain.actions, m.n_actions, alpha);
    candidates.push((value_of(&p)?, p, ReferenceSource::ClippedOptimal));

    if cfg.starts > 0 && cfg.iters > 0 {
        let pma_cfg = PmaConfig {
            alpha,
            schedule: StepSchedule::constant(cfg.eta)?,
            kind: cfg.kind,
            iters: cfg.iters,
        };
        let runs = (0..cfg.starts)
            .into_par_iter()
            .map(|i| {
                let pi0 =
                    random_floored_policy(m.n_states, m.n_actions, alpha, rng::derive_seed(cfg.seed, &[i as u64]));
                run_pma(m, mu, &pma_cfg, &pi0, None).map(|t| {
                    let last = t.last();
                    (last.j_mu, last.policy.clone())
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for (v, p) in runs {
            candidates.push((v, p, ReferenceSource::MultiStartPma));
        }
    }
    // Ties go to the earliest candidate, so the exact construction wins.
    let (value, policy, source) = candidates
        .into_iter()
        .reduce(|best, c| if c.0 > best.0 + 1e-13 { c } else { best })
        .expect("at least two candidates");
    Ok(Reference { policy, value, source })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientMethod {
    VertexEnumeration,
    RandomSampling,
    Both,
}

/// Lower-bound estimates of `B_α = max ‖ρ‖₁` and
/// `C_α = max_s max_{π,π'} ρ^π(s)/ρ^{π'}(s)` over the evaluated policies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientEstimate {
    pub b_alpha: f64,
    pub c_alpha: f64,
    pub method: CoefficientMethod,
    pub n_samples: usize,
    pub n_vertices: usize,
}

/// Vertex enumeration is used when `|A|^|S|` is at most this.
pub const MAX_VERTICES: usize = 4096;

pub fn estimate_coefficients(
    m: &Mdp,
    mu: &DVector<f64>,
    alpha: f64,
    c: &Classification,
    n_samples: usize,
    seed: u64,
) -> Result<CoefficientEstimate> {
    require_full_support(mu)?;
    let (ns, na) = (m.n_states, m.n_actions);
    let n_vertices = (na as f64).powi(ns as i32);
    let n_vertices = if n_vertices <= MAX_VERTICES as f64 {
        n_vertices as usize
    } else {
        0
    };
    let rho_of =
        |p: Policy| -> Result<DVector<f64>> { ChainAnalysis::interior(m, &p, c)?.visitation(mu).map(|v| v.rho) };
    let mut rhos: Vec<DVector<f64>> = (0..n_vertices)
        .into_par_iter()
        .map(|mut idx| {
            let actions: Vec<usize> = (0..ns)
                .map(|_| {
                    let a = idx % na;
                    idx /= na;
                    a
                })
                .collect();
            rho_of(Policy::clipped_deterministic(&actions, na, alpha))
        })
        .collect::<Result<_>>()?;
    let sampled: Vec<DVector<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            rho_of(random_floored_policy(
                ns,
                na,
                alpha,
                rng::derive_seed(seed, &[i as u64]),
            ))
        })
        .collect::<Result<_>>()?;
    rhos.extend(sampled);
    if rhos.is_empty() {
        return Err(Error::InvalidArgument("no policies to evaluate".into()));
    }
    let b_alpha = rhos.iter().map(|r| r.sum()).fold(0.0, f64::max);
    let c_alpha = (0..ns)
        .map(|s| {
            let hi = rhos.iter().map(|r| r[s]).fold(0.0, f64::max);
            let lo = rhos.iter().map(|r| r[s]).fold(f64::INFINITY, f64::min);
            hi / lo
        })
        .fold(1.0, f64::max);
    let method = match (n_vertices > 0, n_samples > 0) {
        (true, true) => CoefficientMethod::Both,
        (true, false) => CoefficientMethod::VertexEnumeration,
        _ => CoefficientMethod::RandomSampling,
    };
    Ok(CoefficientEstimate {
        b_alpha,
        c_alpha,
        method,
        n_samples,
        n_vertices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeRow {
    pub k: usize,
    pub gap: f64,
    pub bound: f64,
    pub margin: f64,
}

/// Per-k comparison of the gap with a theoretical bound, plus the empirical
/// rate-shape verdict that serves as the hard check.
#[derive(Debug, Clone)]
pub struct EnvelopeReport {
    pub rows: Vec<EnvelopeRow>,
    /// All advisory bounds held (they use an estimated `C_α`).
    pub bound_holds: bool,
    pub shape_holds: bool,
    /// Sublinear: `max_k gap_k(k+1) / (gap_5·6)`. Linear: fitted log-slope.
    pub shape_statistic: f64,
    pub shape_threshold: f64,
}

fn rows_with(gaps: &[f64], bound: impl Fn(usize) -> f64) -> Vec<EnvelopeRow> {
    gaps.iter()
        .enumerate()
        .map(|(k, &gap)| {
            let b = bound(k);
            EnvelopeRow {
                k,
                gap,
                bound: b,
                margin: b - gap,
            }
        })
        .collect()
}

fn trace_gaps(trace: &PmaTrace) -> Result<(Vec<f64>, f64)> {
    let gaps = trace
        .gaps()
        .ok_or_else(|| Error::InvalidArgument("trace was run without a reference".into()))?;
    let d0 = trace.records[0].divergence_to_ref.unwrap_or(0.0);
    Ok((gaps, d0))
}

/// Burn-in index for the sublinear shape check.
pub const SHAPE_BURN_IN: usize = 5;

/// `gap_k ≤ (D/η + C·gap_0)/(k+1)` (advisory) and, as the hard check,
/// `gap_k(k+1) ≤ factor·gap_5·6` for `5 ≤ k ≤ max_k`.
pub fn check_sublinear_envelope(
    trace: &PmaTrace,
    coeffs: &CoefficientEstimate,
    eta: f64,
    factor: f64,
    max_k: usize,
) -> Result<EnvelopeReport> {
    let (gaps, d0) = trace_gaps(trace)?;
    let lead = d0 / eta + coeffs.c_alpha * gaps[0];
    let rows = rows_with(&gaps, |k| lead / (k + 1) as f64);
    let bound_holds = rows.iter().all(|r| r.margin >= -1e-12);
    let scaled = |k: usize| {
        if gaps[k] <= GAP_FLOOR {
            0.0
        } else {
            gaps[k] * (k + 1) as f64
        }
    };
    let (shape_statistic, shape_holds) = if gaps.len() <= SHAPE_BURN_IN {
        (0.0, true)
    } else {
        let base = scaled(SHAPE_BURN_IN);
        let worst = (SHAPE_BURN_IN..gaps.len().min(max_k + 1))
            .map(scaled)
            .fold(0.0, f64::max);
        if base == 0.0 {
            (0.0, worst == 0.0)
        } else {
            (worst / base, worst <= factor * base)
        }
    };
    Ok(EnvelopeReport {
        rows,
        bound_holds,
        shape_holds,
        shape_statistic,
        shape_threshold: factor,
    })
}

/// Least-squares slope of `log max(gap_k, floor)` over `k ≤ k*`, where `k*`
/// is the first index whose gap is at the floor. `None` with fewer than two
/// points above the floor.
pub fn log_gap_slope(gaps: &[f64]) -> Option<f64> {
    let end = gaps.iter().position(|&g| g <= GAP_FLOOR).unwrap_or(gaps.len() - 1);
    if end == 0 {
        return None;
    }
    let pts: Vec<(f64, f64)> = (0..=end).map(|k| (k as f64, gaps[k].max(GAP_FLOOR).ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Geometric envelope `(1 − 1/C)^k (D/(η₀(C−1)) + gap_0)` (advisory) and the
/// fitted log-slope check `slope ≤ log(1 − 1/Ĉ) + tol`.
pub fn check_linear_envelope(
    trace: &PmaTrace,
    coeffs: &CoefficientEstimate,
    eta0: f64,
    tol: f64,
) -> Result<EnvelopeReport> {
    let (gaps, d0) = trace_gaps(trace)?;
    let c = coeffs.c_alpha.max(1.0 + 1e-12);
    let rate = 1.0 - 1.0 / c;
    let lead = d0 / (eta0 * (c - 1.0)) + gaps[0];
    let rows = rows_with(&gaps, |k| rate.powi(k as i32) * lead);
    let bound_holds = rows.iter().all(|r| r.margin >= -1e-12);
    let threshold = rate.ln() + tol;
    let (shape_statistic, shape_holds) = match log_gap_slope(&gaps) {
        Some(slope) => (slope, slope <= threshold),
        None => (f64::NEG_INFINITY, true),
    };
    Ok(EnvelopeReport {
        rows,
        bound_holds,
        shape_holds,
        shape_statistic,
        shape_threshold: threshold,
    })
}

/// `α = ε / (2(|A|+1)‖Q^{π⋆}‖∞)`, rejected when `α ≥ 1/|A|`.
pub fn select_alpha_weakly_communicating(epsilon: f64, n_actions: usize, q_star_norm: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must lie in (0,1), got {epsilon}"
        )));
    }
    if !(q_star_norm > 0.0 && q_star_norm.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "‖Q*‖ must be positive, got {q_star_norm}"
        )));
    }
    let alpha = epsilon / (2.0 * (n_actions as f64 + 1.0) * q_star_norm);
    if alpha * n_actions as f64 >= 1.0 {
        return Err(Error::InfeasibleAlpha { alpha, dim: n_actions });
    }
    Ok(alpha)
}

/// Iterations after which the constant-step bound drops below `ε/2`:
/// `⌈(2/ε)(D/η + C·gap_0)⌉`.
pub fn iterations_for_constant_step(d0: f64, eta: f64, c_alpha: f64, gap0: f64, epsilon: f64) -> usize {
    (2.0 / epsilon * (d0 / eta + c_alpha * gap0.max(0.0))).ceil().max(0.0) as usize
}

/// Iterations after which the adaptive-step bound drops below `ε/2`.
pub fn iterations_for_adaptive_step(d0: f64, eta0: f64, c_alpha: f64, gap0: f64, epsilon: f64) -> usize {
    let lead = 2.0 * (gap0.max(0.0) + d0 / (eta0 * (c_alpha - 1.0))) / epsilon;
    if lead <= 1.0 {
        return 0;
    }
    (lead.ln() / (c_alpha / (c_alpha - 1.0)).ln()).ceil() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{self, twochain};
    use crate::oracle;

    fn uniform_mu(n: usize) -> DVector<f64> {
        DVector::from_element(n, 1.0 / n as f64)
    }

    fn cfg(alpha: f64, eta: f64, kind: DivergenceKind, iters: usize) -> PmaConfig {
        PmaConfig {
            alpha,
            schedule: StepSchedule::constant(eta).unwrap(),
            kind,
            iters,
        }
    }

    #[test]
    fn twochain_euclid_converges_to_clipped_vertex() {
        let m = twochain();
        let t = run_pma(
            &m,
            &uniform_mu(3),
            &cfg(0.05, 0.5, DivergenceKind::Euclidean, 50),
            &Policy::uniform(3, 2),
            None,
        )
        .unwrap();
        let last = t.last();
        assert!((last.policy.prob(0, 0) - 0.95).abs() < 1e-12);
        assert!((last.j_mu - 0.65).abs() < 1e-12);
        assert!((t.records[1].policy.prob(0, 0) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn twochain_kl_reaches_tolerance_in_200_iterations() {
        let m = twochain();
        let mu = uniform_mu(3);
        let r = compute_reference(
            &m,
            &mu,
            0.05,
            &ReferenceConfig {
                starts: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((r.value - 0.65).abs() < 1e-12);
        let t = run_pma(
            &m,
            &mu,
            &cfg(0.05, 0.5, DivergenceKind::Kl, 200),
            &Policy::uniform(3, 2),
            Some(&r.policy),
        )
        .unwrap();
        assert!(t.last().gap.unwrap() <= 1e-3);
        assert_eq!(t.records.len(), 201);
    }

    #[test]
    fn zero_reward_is_a_fixed_point() {
        let m = fixtures::random_desk_fixture(4).with_zero_reward();
        let pi0 = random_floored_policy(m.n_states, m.n_actions, 0.05, 1);
        for kind in [DivergenceKind::Euclidean, DivergenceKind::Kl] {
            let t = run_pma(&m, &uniform_mu(m.n_states), &cfg(0.05, 1.0, kind, 5), &pi0, None).unwrap();
            for r in &t.records {
                assert!(r.policy.max_abs_diff(&pi0) < 1e-15);
            }
        }
    }

    #[test]
    fn tiny_step_barely_moves() {
        let m = fixtures::random_desk_fixture(8);
        let pi0 = random_floored_policy(m.n_states, m.n_actions, 0.05, 3);
        let t = run_pma(
            &m,
            &uniform_mu(m.n_states),
            &cfg(0.05, 1e-10, DivergenceKind::Kl, 1),
            &pi0,
            None,
        )
        .unwrap();
        assert!(t.last().policy.max_abs_diff(&pi0) < 1e-8);
        assert_eq!(
            run_pma(
                &m,
                &uniform_mu(m.n_states),
                &cfg(0.05, 1.0, DivergenceKind::Kl, 0),
                &pi0,
                None
            )
            .unwrap()
            .records
            .len(),
            1
        );
    }

    #[test]
    fn run_rejects_bad_inputs() {
        let m = twochain();
        let mu = uniform_mu(3);
        let pi0 = Policy::uniform(3, 2);
        assert!(matches!(
            run_pma(&m, &mu, &cfg(0.5, 1.0, DivergenceKind::Kl, 1), &pi0, None),
            Err(Error::InfeasibleAlpha { .. })
        ));
        let low = Policy::new(vec![vec![0.99, 0.01], vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(matches!(
            run_pma(&m, &mu, &cfg(0.05, 1.0, DivergenceKind::Kl, 1), &low, None),
            Err(Error::InvalidPolicy(_))
        ));
        let e0 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!(matches!(
            run_pma(&m, &e0, &cfg(0.05, 1.0, DivergenceKind::Kl, 1), &pi0, None),
            Err(Error::NotFullSupport(1))
        ));
    }

    #[test]
    fn monotone_and_first_order_condition() {
        for seed in 0..10 {
            let m = fixtures::random_desk_fixture(40 + seed);
            let mu = fixtures::random_distribution(m.n_states, seed);
            let c = classify(&m);
            let pi0 = random_floored_policy(m.n_states, m.n_actions, 0.02, seed);
            for kind in [DivergenceKind::Euclidean, DivergenceKind::Kl] {
                let t = run_pma(&m, &mu, &cfg(0.02, 2.0, kind, 30), &pi0, None).unwrap();
                assert!(t.worst_decrease() <= 1e-10);
                for w in t.records.windows(2) {
                    assert!(w[1].policy.in_floor_set(0.02));
                    let g = evaluate(&m, &w[0].policy, &c).unwrap().g;
                    for s in 0..m.n_states {
                        let inner: f64 = (0..m.n_actions)
                            .map(|a| g[(s, a)] * (w[0].policy.prob(s, a) - w[1].policy.prob(s, a)))
                            .sum();
                        assert!(inner <= 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn adaptive_schedule_identity() {
        let sched = StepSchedule::adaptive(0.3, 1.7).unwrap();
        for w in sched.steps(40).windows(2) {
            assert!((w[1] * 0.7 - w[0] * 1.7).abs() <= 1e-14 * w[1]);
        }
        assert!(StepSchedule::adaptive(0.3, 1.0).is_err());
        assert!(StepSchedule::constant(-1.0).is_err());
    }

    #[test]
    fn policy_iteration_matches_enumeration() {
        for seed in 0..15 {
            let m = fixtures::random_desk_fixture(200 + seed);
            if (m.n_actions as f64).powi(m.n_states as i32) > 5000.0 {
                continue;
            }
            let mu = fixtures::random_distribution(m.n_states, seed);
            let pi = policy_iteration(&m).unwrap();
            let (best, _) = oracle::best_deterministic_gain(&m, &mu);
            assert!((mu.dot(&pi.values.j) - best).abs() < 1e-8, "seed {seed}");
        }
        let w = fixtures::weakly_comm(4, 2, 2, 0).unwrap();
        let pi = policy_iteration(&w).unwrap();
        let (best, _) = oracle::best_deterministic_gain(&w, &uniform_mu(6));
        assert!((uniform_mu(6).dot(&pi.values.j) - best).abs() < 1e-8);
    }

    #[test]
    fn floored_mdp_reproduces_clipped_chains() {
        let m = fixtures::random_desk_fixture(12);
        let alpha = 0.05;
        let f = floored_mdp(&m, alpha).unwrap();
        let actions: Vec<usize> = (0..m.n_states).map(|s| s % m.n_actions).collect();
        let (p1, r1) = oracle::chain_of(&f, &Policy::deterministic(&actions, m.n_actions));
        let (p2, r2) = oracle::chain_of(&m, &Policy::clipped_deterministic(&actions, m.n_actions, alpha));
        assert!((p1 - p2).amax() < 1e-15 && (r1 - r2).amax() < 1e-15);
    }

    #[test]
    fn reference_dominates_random_floored_policies() {
        for seed in 0..5 {
            let m = fixtures::random_desk_fixture(70 + seed);
            let mu = fixtures::random_distribution(m.n_states, seed);
            let c = classify(&m);
            let r = compute_reference(
                &m,
                &mu,
                0.05,
                &ReferenceConfig {
                    starts: 2,
                    iters: 200,
                    ..Default::default()
                },
            )
            .unwrap();
            for i in 0..50 {
                let p = random_floored_policy(m.n_states, m.n_actions, 0.05, i);
                assert!(evaluate(&m, &p, &c).unwrap().gain_mu(&mu) <= r.value + 1e-10);
            }
        }
    }

    #[test]
    fn coefficient_examples() {
        let m = twochain();
        let mu = uniform_mu(3);
        let c = classify(&m);
        let e = estimate_coefficients(&m, &mu, 0.05, &c, 50, 1).unwrap();
        assert!((e.b_alpha - 4.0 / 3.0).abs() < 1e-12);
        assert!((e.c_alpha - 1.95 / 1.05).abs() < 1e-12);
        assert_eq!(e.method, CoefficientMethod::Both);

        let ring = fixtures::ergodic_ring(4, 2, 0.2, 1);
        let e = estimate_coefficients(&ring, &uniform_mu(4), 0.1, &classify(&ring), 20, 2).unwrap();
        assert!((e.b_alpha - 1.0).abs() < 1e-12);
        assert!(e.c_alpha >= 1.0);

        let big = fixtures::random_multichain(
            &fixtures::MultichainParams {
                class_sizes: vec![4, 4],
                n_transient: 5,
                n_actions: 2,
                leak: 0.3,
            },
            1,
        )
        .unwrap();
        let e = estimate_coefficients(&big, &uniform_mu(13), 0.1, &classify(&big), 1, 0).unwrap();
        assert_eq!(e.c_alpha, 1.0);
        assert_eq!(e.method, CoefficientMethod::RandomSampling);
    }

    #[test]
    fn select_alpha_examples() {
        let a = select_alpha_weakly_communicating(0.1, 2, 1.0).unwrap();
        assert!((a - 0.1 / 6.0).abs() < 1e-15);
        assert!(select_alpha_weakly_communicating(0.05, 2, 1.0).unwrap() < a);
        assert!(matches!(
            select_alpha_weakly_communicating(0.999, 2, 0.1),
            Err(Error::InfeasibleAlpha { .. })
        ));
    }

    #[test]
    fn envelope_checks_on_twochain() {
        let m = twochain();
        let mu = uniform_mu(3);
        let c = classify(&m);
        let r = compute_reference(
            &m,
            &mu,
            0.05,
            &ReferenceConfig {
                starts: 0,
                ..Default::default()
            },
        )
        .unwrap();
        let coeffs = estimate_coefficients(&m, &mu, 0.05, &c, 20, 0).unwrap();
        let t = run_pma(
            &m,
            &mu,
            &cfg(0.05, 0.5, DivergenceKind::Kl, 100),
            &Policy::uniform(3, 2),
            Some(&r.policy),
        )
        .unwrap();
        let rep = check_sublinear_envelope(&t, &coeffs, 0.5, 2.0, 500).unwrap();
        assert!(rep.shape_holds && rep.bound_holds);
        assert!(rep.rows[0].bound >= rep.rows[0].gap);

        let sched = StepSchedule::adaptive(0.5, coeffs.c_alpha).unwrap();
        let acfg = PmaConfig {
            schedule: sched,
            ..cfg(0.05, 0.5, DivergenceKind::Kl, 40)
        };
        let t = run_pma(&m, &mu, &acfg, &Policy::uniform(3, 2), Some(&r.policy)).unwrap();
        let rep = check_linear_envelope(&t, &coeffs, 0.5, 0.05).unwrap();
        assert!(rep.shape_holds, "slope {}", rep.shape_statistic);
    }

    #[test]
    fn envelope_on_zero_reward() {
        let m = fixtures::random_desk_fixture(2).with_zero_reward();
        let mu = uniform_mu(m.n_states);
        let pi0 = Policy::uniform(m.n_states, m.n_actions);
        let coeffs = estimate_coefficients(&m, &mu, 0.05, &classify(&m), 5, 0).unwrap();
        let t = run_pma(&m, &mu, &cfg(0.05, 1.0, DivergenceKind::Kl, 10), &pi0, Some(&pi0)).unwrap();
        let rep = check_sublinear_envelope(&t, &coeffs, 1.0, 2.0, 500).unwrap();
        assert!(rep.rows.iter().all(|r| r.gap == 0.0 && r.margin >= 0.0));
        assert!(rep.shape_holds);
    }

    #[test]
    fn slope_fit() {
        let gaps: Vec<f64> = (0..20).map(|k| 0.5f64.powi(k)).collect();
        assert!((log_gap_slope(&gaps).unwrap() - 0.5f64.ln()).abs() < 1e-12);
        assert_eq!(log_gap_slope(&[0.0, 0.0]), None);
    }

    #[test]
    fn iteration_count_formulas() {
        assert_eq!(iterations_for_constant_step(0.5, 1.0, 2.0, 0.25, 0.1), 20);
        assert_eq!(iterations_for_adaptive_step(0.0, 1.0, 2.0, 0.01, 0.1), 0);
        let k = iterations_for_adaptive_step(0.5, 1.0, 2.0, 0.25, 0.1);
        assert!(0.5f64.powi(k as i32) * (0.25 + 0.5) <= 0.05 + 1e-15);
    }
}
