//! Generative-model layer: trajectory simulation, the trajectory critic,
//! classification from sampled windows, and stochastic mirror ascent.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::chain::{ChainConstants, Classification};
use crate::error::{Error, Result};
use crate::mdp::{Mdp, Policy};
use crate::pma::{mirror_ascent, GradientSample, GradientSource, PmaConfig, PmaTrace};
use crate::rng;
use crate::values::ValueBundle;

const PHASE_K: u64 = 1;
const PHASE_Q: u64 = 2;
const PHASE_CLASSIFY: u64 = 3;
const PHASE_FREE: u64 = 4;

/// Simulator that only exposes next-state draws, with a draw counter.
///
/// Streams are keyed by call context (batch, phase, trajectory, start pair),
/// so results do not depend on thread scheduling.
#[derive(Debug)]
pub struct GenerativeModel {
    mdp: Mdp,
    seed: u64,
    samples: AtomicU64,
    batches: AtomicU64,
}

impl GenerativeModel {
    pub fn new(mdp: Mdp, seed: u64) -> Self {
        GenerativeModel {
            mdp,
            seed,
            samples: AtomicU64::new(0),
            batches: AtomicU64::new(0),
        }
    }

    pub fn mdp(&self) -> &Mdp {
        &self.mdp
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Total next-state draws so far.
    pub fn samples(&self) -> u64 {
        self.samples.load(Ordering::Relaxed)
    }

    fn next_batch(&self) -> u64 {
        self.batches.fetch_add(1, Ordering::Relaxed)
    }

    /// One draw from `P(·|s,a)`.
    pub fn sample_next(&self, rng: &mut ChaCha8Rng, s: usize, a: usize) -> usize {
        self.samples.fetch_add(1, Ordering::Relaxed);
        rng::categorical(rng, &self.mdp.kernel[s][a])
    }

    fn walk(&self, rng: &mut ChaCha8Rng, p: &Policy, s0: usize, a0: usize, horizon: usize) -> Vec<(usize, usize)> {
        let mut traj = Vec::with_capacity(horizon + 1);
        traj.push((s0, a0));
        let (mut s, mut a) = (s0, a0);
        for _ in 0..horizon {
            s = self.sample_next(rng, s, a);
            a = rng::categorical(rng, p.row(s));
            traj.push((s, a));
        }
        traj
    }

    /// `(s_0,a_0), …, (s_H,a_H)` on the stream named by `key`.
    pub fn rollout_keyed(&self, p: &Policy, s0: usize, a0: usize, horizon: usize, key: &[u64]) -> Vec<(usize, usize)> {
        let mut rng = rng::stream(self.seed, key);
        self.walk(&mut rng, p, s0, a0, horizon)
    }

    /// Rollout on a fresh stream; successive calls give independent paths.
    pub fn rollout(&self, p: &Policy, s0: usize, a0: usize, horizon: usize) -> Vec<(usize, usize)> {
        let batch = self.next_batch();
        self.rollout_keyed(p, s0, a0, horizon, &[batch, PHASE_FREE])
    }

    /// `len` states starting at `s0` with `a_0 ∼ π(·|s_0)`.
    pub fn rollout_from_state(&self, p: &Policy, s0: usize, len: usize, key: &[u64]) -> Vec<usize> {
        let mut rng = rng::stream(self.seed, key);
        let a0 = rng::categorical(&mut rng, p.row(s0));
        self.walk(&mut rng, p, s0, a0, len.saturating_sub(1))
            .into_iter()
            .map(|(s, _)| s)
            .collect()
    }
}

/// Trajectory budgets: `N` paths of horizon `H` for `K̂`, `N'` of horizon
/// `H'` for `Q̂`, per state-action pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CriticConfig {
    pub n: usize,
    pub h: usize,
    pub n2: usize,
    pub h2: usize,
}

impl CriticConfig {
    pub fn new(n: usize, h: usize, n2: usize, h2: usize) -> Result<Self> {
        if n == 0 || h == 0 || n2 == 0 || h2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "critic budgets must be positive, got N={n} H={h} N'={n2} H'={h2}"
            )));
        }
        Ok(CriticConfig { n, h, n2, h2 })
    }

    /// Next-state draws used for one critic call.
    pub fn samples(&self, n_states: usize, n_actions: usize) -> u64 {
        (n_states * n_actions) as u64 * (self.n * self.h + self.n2 * self.h2) as u64
    }

    pub fn trajectories(&self, n_states: usize, n_actions: usize) -> u64 {
        (n_states * n_actions) as u64 * (self.n + self.n2) as u64
    }
}

#[derive(Debug, Clone)]
pub struct GEstimate {
    pub g_hat: DMatrix<f64>,
    pub k_hat: DMatrix<f64>,
    pub q_hat: DMatrix<f64>,
    /// Next-state draws.
    pub samples_used: u64,
    /// Trajectories started, one per enumerated `(s_0, a_0)` and repetition.
    pub trajectories: u64,
}

/// Monte Carlo estimate of `G^π` from truncated reward averages.
pub fn critic(gm: &GenerativeModel, p: &Policy, cfg: &CriticConfig, c: &Classification) -> Result<GEstimate> {
    CriticConfig::new(cfg.n, cfg.h, cfg.n2, cfg.h2)?;
    p.require_interior()?;
    let m = gm.mdp();
    let (ns, na) = (m.n_states, m.n_actions);
    if p.n_states() != ns || p.n_actions() != na {
        return Err(Error::Dimension("policy does not match the MDP".into()));
    }
    if c.n_states() != ns {
        return Err(Error::Dimension("classification does not match the MDP".into()));
    }
    let before = gm.samples();
    let batch = gm.next_batch();
    let pairs: Vec<(usize, usize)> = (0..ns).flat_map(|s| (0..na).map(move |a| (s, a))).collect();

    let k_vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(s0, a0)| {
            let total: f64 = (0..cfg.n)
                .map(|j| {
                    let traj = gm.rollout_keyed(p, s0, a0, cfg.h, &[batch, PHASE_K, j as u64, s0 as u64, a0 as u64]);
                    traj.iter().map(|&(s, a)| m.reward[s][a]).sum::<f64>() / (cfg.h + 1) as f64
                })
                .sum();
            total / cfg.n as f64
        })
        .collect();
    let k_hat = DMatrix::from_row_slice(ns, na, &k_vals);

    let q_vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(s0, a0)| {
            let total: f64 = (0..cfg.n2)
                .map(|j| {
                    let traj = gm.rollout_keyed(p, s0, a0, cfg.h2, &[batch, PHASE_Q, j as u64, s0 as u64, a0 as u64]);
                    // Σ_{h≤H'} Σ_{i≤h} x_i = Σ_i (H'+1−i) x_i
                    let nested: f64 = traj
                        .iter()
                        .enumerate()
                        .map(|(i, &(s, a))| (cfg.h2 + 1 - i) as f64 * (m.reward[s][a] - k_hat[(s, a)]))
                        .sum();
                    nested / (cfg.h2 + 1) as f64
                })
                .sum();
            total / cfg.n2 as f64
        })
        .collect();
    let q_hat = DMatrix::from_row_slice(ns, na, &q_vals);

    let mask = c.recurrent_mask();
    let g_hat = DMatrix::from_fn(ns, na, |s, a| if mask[s] { q_hat[(s, a)] } else { k_hat[(s, a)] });
    let samples_used = gm.samples() - before;
    debug_assert_eq!(samples_used, cfg.samples(ns, na));
    Ok(GEstimate {
        g_hat,
        k_hat,
        q_hat,
        samples_used,
        trajectories: cfg.trajectories(ns, na),
    })
}

/// Recovers recurrent classes from windows `[m1, m1+m2)` of single trajectories.
///
/// States that are neither probed nor seen in any window are reported transient.
pub fn classify_by_sampling(
    gm: &GenerativeModel,
    p: &Policy,
    m1: usize,
    m2: usize,
    probe_states: &[usize],
) -> Result<Classification> {
    if m1 == 0 || m2 == 0 {
        return Err(Error::InvalidArgument("window sizes must be at least 1".into()));
    }
    p.require_interior()?;
    let ns = gm.mdp().n_states;
    if let Some(&s) = probe_states.iter().find(|&&s| s >= ns) {
        return Err(Error::InvalidArgument(format!("probe state {s} out of range")));
    }
    let batch = gm.next_batch();
    let mut classes: Vec<BTreeSet<usize>> = Vec::new();
    let mut transient: BTreeSet<usize> = BTreeSet::new();
    for &probe in probe_states {
        if transient.contains(&probe) || classes.iter().any(|c| c.contains(&probe)) {
            continue;
        }
        let path = gm.rollout_from_state(p, probe, m1 + m2, &[batch, PHASE_CLASSIFY, probe as u64]);
        let window: BTreeSet<usize> = path[m1..].iter().copied().collect();
        if let Some(t) = window.iter().find(|s| transient.contains(s)) {
            return Err(Error::InconsistentClasses(format!(
                "state {t} was declared transient but appears in a recurrent window"
            )));
        }
        match classes.iter().find(|c| !c.is_disjoint(&window)) {
            Some(existing) if *existing != window => {
                return Err(Error::InconsistentClasses(format!(
                    "window {window:?} from probe {probe} overlaps class {existing:?}"
                )));
            }
            Some(_) => {}
            None => classes.push(window.clone()),
        }
        if !window.contains(&probe) {
            transient.insert(probe);
        }
    }
    let mut seen: Vec<bool> = vec![false; ns];
    for &s in classes.iter().flatten() {
        seen[s] = true;
    }
    let transient: Vec<usize> = (0..ns).filter(|&s| !seen[s]).collect();
    Classification::new(
        classes.into_iter().map(|c| c.into_iter().collect()).collect(),
        transient,
        ns,
    )
}

fn ceil_guarded(x: f64) -> usize {
    // Absorbs roundoff such as log(e) = 1 + 2e-16.
    (x - 1e-9).ceil().max(0.0) as usize
}

/// Window sizes `M₁ = t_½·⌈log₂(2/δ)⌉` (at least 1) and `M₂ = ⌈e·t_cov ln(2/δ)⌉`.
///
/// `‖T^{j·t_½}‖ ≤ 2^{-j}`, so the burn-in needs the base-2 logarithm to push
/// the chance of still being transient below `δ/2`; with a natural log it can
/// stay above (a single transient state with self-loop ½ already breaks it).
pub fn suggest_windows(constants: &ChainConstants, delta: f64) -> Result<(usize, usize)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0,1), got {delta}")));
    }
    let l = (2.0 / delta).ln();
    let m1 = (constants.t_half * ceil_guarded((2.0 / delta).log2())).max(1);
    let m2 = ceil_guarded(std::f64::consts::E * constants.t_cov_max * l).max(1);
    Ok((m1, m2))
}

/// Budgets from the critic's error analysis for target accuracy `ε` and
/// failure probability `δ`. The constants are those of the proofs and are
/// very conservative.
pub fn critic_budget(
    epsilon: f64,
    delta: f64,
    v_norm: f64,
    reward_bound: f64,
    t_tar: f64,
    n_pairs: usize,
) -> Result<CriticConfig> {
    if !(epsilon > 0.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument("need epsilon > 0 and delta in (0,1)".into()));
    }
    let log_term = (2.0 * n_pairs as f64 / delta).ln();
    let r2 = reward_bound * reward_bound;
    let h2 = ((3.0 * (2.0 * t_tar + 1.0) * v_norm / epsilon).ceil() as usize).max(1);
    let n2 = ((2.0 * r2 * (h2 as f64 + 2.0).powi(2) / (epsilon / 3.0).powi(2) * log_term).ceil() as usize).max(1);
    let eps_k = 2.0 * epsilon / (3.0 * (h2 as f64 + 2.0));
    let h = ((4.0 * (v_norm + reward_bound) / eps_k).ceil() as usize).max(1);
    let n = ((2.0 * r2 / (eps_k / 2.0).powi(2) * log_term).ceil() as usize).max(1);
    CriticConfig::new(n, h, n2, h2)
}

/// Critic-backed gradients for the mirror-ascent loop. The exact `G` is only
/// used to report `‖Ĝ − G‖∞`.
pub struct CriticGradient<'a> {
    pub gm: &'a GenerativeModel,
    pub configs: &'a [CriticConfig],
    pub classification: &'a Classification,
}

impl GradientSource for CriticGradient<'_> {
    fn gradient(&mut self, k: usize, pi: &Policy, exact: &ValueBundle) -> Result<GradientSample> {
        let cfg = if self.configs.len() == 1 {
            &self.configs[0]
        } else {
            &self.configs[k]
        };
        let est = critic(self.gm, pi, cfg, self.classification)?;
        let error = (&est.g_hat - &exact.g).amax();
        Ok(GradientSample {
            g: est.g_hat,
            samples: est.samples_used,
            error: Some(error),
        })
    }
}

/// Per-step monotonicity check against the inexact slack `2B̂ε̂_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotoneStep {
    pub k: usize,
    /// `J_k − J_{k+1}`; positive means the step lost value.
    pub drop: f64,
    pub slack: f64,
    pub ok: bool,
}

#[derive(Debug, Clone)]
pub struct SpmaRun {
    pub trace: PmaTrace,
    pub steps: Vec<MonotoneStep>,
    pub max_grad_error: f64,
}

/// Stochastic mirror ascent: iteration `k` uses the critic estimate with
/// `configs[k]` (or `configs[0]` throughout when a single config is given).
#[allow(clippy::too_many_arguments)]
pub fn run_spma(
    gm: &GenerativeModel,
    mu: &DVector<f64>,
    cfg: &PmaConfig,
    pi0: &Policy,
    configs: &[CriticConfig],
    c: &Classification,
    reference: Option<&Policy>,
    b_alpha: f64,
) -> Result<SpmaRun> {
    if configs.is_empty() || (configs.len() != 1 && configs.len() < cfg.iters) {
        return Err(Error::InvalidArgument(format!(
            "need one critic config or one per iteration ({}), got {}",
            cfg.iters,
            configs.len()
        )));
    }
    let mut source = CriticGradient {
        gm,
        configs,
        classification: c,
    };
    let trace = mirror_ascent(gm.mdp(), mu, cfg, pi0, reference, &mut source)?;
    let steps: Vec<MonotoneStep> = trace
        .records
        .windows(2)
        .map(|w| {
            let drop = w[0].j_mu - w[1].j_mu;
            let slack = 2.0 * b_alpha * w[0].grad_error.unwrap_or(0.0);
            MonotoneStep {
                k: w[0].k,
                drop,
                slack,
                ok: drop <= slack + 1e-10,
            }
        })
        .collect();
    let max_grad_error = trace.records.iter().filter_map(|r| r.grad_error).fold(0.0, f64::max);
    Ok(SpmaRun {
        trace,
        steps,
        max_grad_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{chain_constants, classify};
    use crate::fixtures::{self, twochain};
    use crate::pma::{run_pma, StepSchedule};
    use crate::projection::DivergenceKind;
    use crate::values::evaluate;

    fn twochain_policy(p: f64) -> Policy {
        Policy::new(vec![vec![p, 1.0 - p], vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap()
    }

    #[test]
    fn rollout_basics() {
        let gm = GenerativeModel::new(twochain(), 3);
        let pol = twochain_policy(0.5);
        let t = gm.rollout(&pol, 1, 0, 10);
        assert!(t.iter().all(|&(s, _)| s == 1));
        assert_eq!(gm.samples(), 10);
        assert_eq!(gm.rollout(&pol, 2, 1, 0), vec![(2, 1)]);
        assert_eq!(gm.samples(), 10);

        let m = fixtures::random_desk_fixture(5);
        let pol = fixtures::random_interior_policy(m.n_states, m.n_actions, 0.0, 1);
        let a = GenerativeModel::new(m.clone(), 9).rollout(&pol, 0, 0, 50);
        let b = GenerativeModel::new(m, 9).rollout(&pol, 0, 0, 50);
        assert_eq!(a, b);
    }

    #[test]
    fn critic_on_twochain() {
        let m = twochain();
        let c = classify(&m);
        let gm = GenerativeModel::new(m, 1);
        let cfg = CriticConfig::new(3, 9, 2, 9).unwrap();
        let est = critic(&gm, &twochain_policy(0.3), &cfg, &c).unwrap();
        assert_eq!(est.k_hat[(1, 0)], 1.0);
        assert_eq!(est.k_hat[(1, 1)], 1.0);
        assert!((est.k_hat[(0, 0)] - 0.9).abs() < 1e-15);
        assert_eq!(est.k_hat[(0, 1)], 0.0);
        assert_eq!(est.q_hat[(1, 0)], 0.0);
        assert_eq!(est.samples_used, 6 * (3 * 9 + 2 * 9));
        assert_eq!(est.trajectories, 6 * 5);
        assert_eq!(gm.samples(), est.samples_used);
    }

    #[test]
    fn critic_zero_reward_and_determinism() {
        let m = fixtures::random_desk_fixture(21);
        let c = classify(&m);
        let pol = fixtures::random_interior_policy(m.n_states, m.n_actions, 0.0, 4);
        let cfg = CriticConfig::new(4, 20, 3, 20).unwrap();
        let zero = critic(&GenerativeModel::new(m.with_zero_reward(), 2), &pol, &cfg, &c).unwrap();
        assert_eq!(zero.g_hat.amax(), 0.0);
        let a = critic(&GenerativeModel::new(m.clone(), 2), &pol, &cfg, &c).unwrap();
        let b = critic(&GenerativeModel::new(m, 2), &pol, &cfg, &c).unwrap();
        assert_eq!(a.g_hat, b.g_hat);
        assert!(a.k_hat.amax() <= 1.0);
    }

    #[test]
    fn critic_approaches_exact_g() {
        let m = fixtures::ergodic_ring(4, 2, 0.3, 7);
        let c = classify(&m);
        let pol = Policy::uniform(4, 2);
        let g = evaluate(&m, &pol, &c).unwrap().g;
        let est = critic(
            &GenerativeModel::new(m, 5),
            &pol,
            &CriticConfig::new(400, 400, 4000, 30).unwrap(),
            &c,
        )
        .unwrap();
        let err = (est.g_hat - &g).amax();
        assert!(err < 0.1, "err {err} g {g}");
    }

    #[test]
    fn critic_rejects_bad_input() {
        let m = twochain();
        let c = classify(&m);
        let gm = GenerativeModel::new(m, 0);
        assert!(CriticConfig::new(0, 1, 1, 1).is_err());
        let edge = Policy::new(vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(critic(&gm, &edge, &CriticConfig::new(1, 1, 1, 1).unwrap(), &c).is_err());
    }

    #[test]
    fn sampled_classification_of_twochain() {
        let gm = GenerativeModel::new(twochain(), 4);
        let pol = twochain_policy(0.5);
        let c = classify_by_sampling(&gm, &pol, 1, 3, &[1]).unwrap();
        assert_eq!(c.recurrent_classes, vec![vec![1]]);
        let c = classify_by_sampling(&gm, &pol, 1, 3, &[0, 1, 2]).unwrap();
        assert_eq!(c, classify(gm.mdp()));
        assert!(classify_by_sampling(&gm, &pol, 0, 3, &[0]).is_err());
    }

    #[test]
    fn short_windows_are_detected() {
        // Deterministic 6-cycle: from 0 the window is {1,2,3}, so 0 looks
        // transient; from 4 the window {5,0,1} then contradicts that.
        let m = fixtures::ergodic_ring(6, 1, 0.0, 0);
        let gm = GenerativeModel::new(m, 0);
        let pol = Policy::uniform(6, 1);
        let err = classify_by_sampling(&gm, &pol, 1, 3, &[0, 4]);
        assert!(matches!(err, Err(Error::InconsistentClasses(_))), "{err:?}");
        let ok = classify_by_sampling(&gm, &pol, 1, 6, &[0, 4]).unwrap();
        assert_eq!(ok.recurrent_classes, vec![vec![0, 1, 2, 3, 4, 5]]);
    }

    #[test]
    fn window_suggestions() {
        let cc = ChainConstants {
            t_tar: vec![1.0],
            t_tar_max: 1.0,
            t_half: 1,
            t_cov: vec![],
            t_cov_max: 1.0,
        };
        assert_eq!(suggest_windows(&cc, 2.0 / std::f64::consts::E).unwrap(), (2, 3));
        assert_eq!(suggest_windows(&cc, 0.5).unwrap(), (2, 4));
        let none = ChainConstants {
            t_half: 0,
            ..cc.clone()
        };
        assert_eq!(suggest_windows(&none, 0.1).unwrap().0, 1);
        let (a1, a2) = suggest_windows(
            &ChainConstants {
                t_half: 3,
                t_cov_max: 5.0,
                ..cc.clone()
            },
            0.1,
        )
        .unwrap();
        let (b1, b2) = suggest_windows(
            &ChainConstants {
                t_half: 3,
                t_cov_max: 5.0,
                ..cc
            },
            0.05,
        )
        .unwrap();
        assert!(b1 >= a1 && b2 > a2);
    }

    #[test]
    fn suggested_windows_recover_six_state_fixture() {
        let m = fixtures::random_multichain(
            &fixtures::MultichainParams {
                class_sizes: vec![2, 2],
                n_transient: 2,
                n_actions: 2,
                leak: 0.4,
            },
            3,
        )
        .unwrap();
        let c = classify(&m);
        let pol = Policy::uniform(6, 2);
        let cc = chain_constants(&m, &pol, &c, 0, 0).unwrap();
        let (m1, m2) = suggest_windows(&cc, 0.01).unwrap();
        let probes: Vec<usize> = (0..6).collect();
        let hits = (0..100)
            .filter(|&seed| {
                let gm = GenerativeModel::new(m.clone(), seed);
                classify_by_sampling(&gm, &pol, m1, m2, &probes).map_or(false, |r| r == c)
            })
            .count();
        assert!(hits >= 99, "{hits}/100");
    }

    #[test]
    fn spma_on_zero_reward_and_twochain() {
        let m = fixtures::random_desk_fixture(6).with_zero_reward();
        let c = classify(&m);
        let mu = DVector::from_element(m.n_states, 1.0 / m.n_states as f64);
        let pi0 = Policy::uniform(m.n_states, m.n_actions);
        let cfg = PmaConfig {
            alpha: 0.05,
            schedule: StepSchedule::constant(1.0).unwrap(),
            kind: DivergenceKind::Kl,
            iters: 3,
        };
        let gm = GenerativeModel::new(m.clone(), 0);
        let run = run_spma(
            &gm,
            &mu,
            &cfg,
            &pi0,
            &[CriticConfig::new(2, 5, 2, 5).unwrap()],
            &c,
            None,
            1.0,
        )
        .unwrap();
        assert!(run.trace.records.iter().all(|r| r.policy.max_abs_diff(&pi0) < 1e-15));
        let per_iter = cfg.iters as u64 * CriticConfig::new(2, 5, 2, 5).unwrap().samples(m.n_states, m.n_actions);
        assert_eq!(run.trace.last().samples_cum, per_iter);

        let m = twochain();
        let c = classify(&m);
        let mu = DVector::from_element(3, 1.0 / 3.0);
        let cfg = PmaConfig {
            schedule: StepSchedule::constant(0.5).unwrap(),
            iters: 50,
            ..cfg
        };
        let exact = run_pma(&m, &mu, &cfg, &Policy::uniform(3, 2), None).unwrap();
        let gm = GenerativeModel::new(m, 1);
        let run = run_spma(
            &gm,
            &mu,
            &cfg,
            &Policy::uniform(3, 2),
            &[CriticConfig::new(5, 200, 5, 200).unwrap()],
            &c,
            None,
            4.0 / 3.0,
        )
        .unwrap();
        assert!((run.max_grad_error - 1.0 / 201.0).abs() < 1e-12);
        assert!(run.steps.iter().all(|s| s.ok));
        assert!((run.trace.last().j_mu - exact.last().j_mu).abs() < 1e-9);
    }

    #[test]
    fn spma_is_deterministic() {
        let m = fixtures::random_desk_fixture(9);
        let c = classify(&m);
        let mu = DVector::from_element(m.n_states, 1.0 / m.n_states as f64);
        let cfg = PmaConfig {
            alpha: 0.05,
            schedule: StepSchedule::constant(1.0).unwrap(),
            kind: DivergenceKind::Kl,
            iters: 3,
        };
        let crit = [CriticConfig::new(3, 10, 3, 10).unwrap()];
        let pi0 = Policy::uniform(m.n_states, m.n_actions);
        let a = run_spma(
            &GenerativeModel::new(m.clone(), 5),
            &mu,
            &cfg,
            &pi0,
            &crit,
            &c,
            None,
            1.0,
        )
        .unwrap();
        let b = run_spma(&GenerativeModel::new(m, 5), &mu, &cfg, &pi0, &crit, &c, None, 1.0).unwrap();
        for (x, y) in a.trace.records.iter().zip(&b.trace.records) {
            assert_eq!(x.policy, y.policy);
        }
    }

    #[test]
    fn budget_helper_uses_proof_constants() {
        let b = critic_budget(0.1, 0.05, 1.0, 1.0, 0.0, 6).unwrap();
        assert_eq!(b.h2, 30);
        assert!(b.h > b.h2 && b.n > 1 && b.n2 > 1);
    }
}
