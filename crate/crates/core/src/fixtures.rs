//! Desk-scale MDP generators with planted structure.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::mdp::{Mdp, Policy, TangentDirection};
use crate::rng;

/// The 3-state running example: from 0, `L` goes to 1 and `R` goes to 2;
/// 1 and 2 are absorbing; only state 1 pays.
pub fn twochain() -> Mdp {
    let kernel = vec![
        vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        vec![vec![0.0, 1.0, 0.0]; 2],
        vec![vec![0.0, 0.0, 1.0]; 2],
    ];
    let reward = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 0.0]];
    Mdp::new(kernel, reward, 1.0).expect("twochain is valid")
}

fn dirichlet(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// Random distribution over `targets`, always putting mass on `must`.
fn scatter(rng: &mut ChaCha8Rng, n: usize, targets: &[usize], must: Option<usize>) -> Vec<f64> {
    let mut row = vec![0.0; n];
    let k = rng.gen_range(1..=targets.len());
    let mut chosen: Vec<usize> = targets.choose_multiple(rng, k).copied().collect();
    if let Some(t) = must {
        if !chosen.contains(&t) {
            chosen.push(t);
        }
    }
    for (&t, w) in chosen.iter().zip(dirichlet(rng, chosen.len())) {
        row[t] += w;
    }
    normalize(&mut row);
    row
}

fn normalize(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= total);
}

fn random_rewards(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> Vec<Vec<f64>> {
    (0..ns).map(|_| (0..na).map(|_| rng.gen::<f64>()).collect()).collect()
}

/// Parameters for [`random_multichain`].
#[derive(Debug, Clone, PartialEq)]
pub struct MultichainParams {
    pub class_sizes: Vec<usize>,
    pub n_transient: usize,
    pub n_actions: usize,
    /// Minimum probability, under every action, that a transient state jumps
    /// straight into the recurrent part.
    pub leak: f64,
}

impl Default for MultichainParams {
    fn default() -> Self {
        MultichainParams {
            class_sizes: vec![2, 2, 2],
            n_transient: 2,
            n_actions: 2,
            leak: 0.3,
        }
    }
}

/// Planted classes: states `0..` fill the classes in order, the transient
/// states come last. Every class contains a ring under action 0, so it is
/// irreducible for any interior policy.
pub fn random_multichain(params: &MultichainParams, seed: u64) -> Result<Mdp> {
    let MultichainParams {
        class_sizes,
        n_transient,
        n_actions,
        leak,
    } = params;
    if class_sizes.is_empty() || class_sizes.contains(&0) {
        return Err(Error::InvalidArgument("need at least one non-empty class".into()));
    }
    if *n_actions == 0 {
        return Err(Error::InvalidArgument("need at least one action".into()));
    }
    if *n_transient > 0 && !(*leak > 0.0 && *leak <= 1.0) {
        return Err(Error::InvalidArgument(format!("leak must lie in (0,1], got {leak}")));
    }
    let mut rng = rng::stream(seed, &[0x4D43]);
    let n_rec: usize = class_sizes.iter().sum();
    let ns = n_rec + n_transient;
    let mut kernel = vec![Vec::with_capacity(*n_actions); ns];
    let mut start = 0;
    for &size in class_sizes {
        let members: Vec<usize> = (start..start + size).collect();
        for (i, &s) in members.iter().enumerate() {
            let ring = members[(i + 1) % size];
            for a in 0..*n_actions {
                let must = (a == 0).then_some(ring);
                kernel[s].push(scatter(&mut rng, ns, &members, must));
            }
        }
        start += size;
    }
    let recurrent: Vec<usize> = (0..n_rec).collect();
    let transient: Vec<usize> = (n_rec..ns).collect();
    for &s in &transient {
        for _ in 0..*n_actions {
            let into = scatter(&mut rng, ns, &recurrent, None);
            let stay = scatter(&mut rng, ns, &transient, None);
            let l = rng.gen_range(*leak..=1.0);
            let row = into.iter().zip(&stay).map(|(x, y)| l * x + (1.0 - l) * y).collect();
            kernel[s].push(row);
        }
    }
    let reward = random_rewards(&mut rng, ns, *n_actions);
    Mdp::new(kernel, reward, 1.0)
}

/// A weakly communicating MDP: one closed core where action 0 walks a ring
/// and every other action holds in place (so some deterministic policies have
/// several recurrent classes), plus a fringe that always drains into the core.
pub fn weakly_comm(core: usize, fringe: usize, n_actions: usize, seed: u64) -> Result<Mdp> {
    if core == 0 || n_actions < 2 {
        return Err(Error::InvalidArgument(
            "weakly_comm needs a non-empty core and at least two actions".into(),
        ));
    }
    let mut rng = rng::stream(seed, &[0x5743]);
    let ns = core + fringe;
    let members: Vec<usize> = (0..core).collect();
    let mut kernel = vec![Vec::with_capacity(n_actions); ns];
    for s in 0..core {
        let mut walk = vec![0.0; ns];
        let p = rng.gen_range(0.6..0.95);
        walk[(s + 1) % core] += p;
        walk[s] += 1.0 - p;
        kernel[s].push(walk);
        for _ in 1..n_actions {
            let mut hold = vec![0.0; ns];
            hold[s] = 1.0;
            kernel[s].push(hold);
        }
    }
    let fringe_states: Vec<usize> = (core..ns).collect();
    for s in core..ns {
        for _ in 0..n_actions {
            let into = scatter(&mut rng, ns, &members, None);
            let stay = scatter(&mut rng, ns, &fringe_states, None);
            let l = rng.gen_range(0.3..=1.0);
            kernel[s].push(into.iter().zip(&stay).map(|(x, y)| l * x + (1.0 - l) * y).collect());
        }
    }
    let reward = random_rewards(&mut rng, ns, n_actions);
    Mdp::new(kernel, reward, 1.0)
}

/// `P(s'|s,a) = (1-noise)·[s' = s+1+a mod n] + noise/n`, random rewards.
pub fn ergodic_ring(n: usize, n_actions: usize, noise: f64, seed: u64) -> Mdp {
    assert!(n > 0 && n_actions > 0 && (0.0..=1.0).contains(&noise));
    let mut rng = rng::stream(seed, &[0x4552]);
    let kernel = (0..n)
        .map(|s| {
            (0..n_actions)
                .map(|a| {
                    let mut row = vec![noise / n as f64; n];
                    row[(s + 1 + a) % n] += 1.0 - noise;
                    row
                })
                .collect()
        })
        .collect();
    let reward = random_rewards(&mut rng, n, n_actions);
    Mdp::new(kernel, reward, 1.0).expect("ring is valid")
}

/// A random multichain MDP with `|S| ≤ 10` and `2 ≤ |A| ≤ 4`.
pub fn random_desk_fixture(seed: u64) -> Mdp {
    let mut rng = rng::stream(seed, &[0x4445]);
    let m = rng.gen_range(1..=3);
    let class_sizes: Vec<usize> = (0..m).map(|_| rng.gen_range(1..=3)).collect();
    let n_transient = rng.gen_range(0..=(10 - class_sizes.iter().sum::<usize>()).min(3));
    let params = MultichainParams {
        class_sizes,
        n_transient,
        n_actions: rng.gen_range(2..=4),
        leak: rng.gen_range(0.1..0.9),
    };
    random_multichain(&params, rng.gen()).expect("desk parameters are valid")
}

/// A random unichain MDP (one class plus transient states).
pub fn random_unichain(seed: u64) -> Mdp {
    let mut rng = rng::stream(seed, &[0x5543]);
    let params = MultichainParams {
        class_sizes: vec![rng.gen_range(2..=6)],
        n_transient: rng.gen_range(1..=4),
        n_actions: rng.gen_range(2..=4),
        leak: rng.gen_range(0.1..0.9),
    };
    random_multichain(&params, rng.gen()).expect("unichain parameters are valid")
}

/// Rows `floor + (1-|A|·floor)·w` with `w` a Dirichlet draw mixed with 10%
/// uniform, so entries stay away from the floor.
pub fn random_interior_policy(n_states: usize, n_actions: usize, floor: f64, seed: u64) -> Policy {
    let mut rng = rng::stream(seed, &[0x5049]);
    let scale = 1.0 - n_actions as f64 * floor;
    let table = (0..n_states)
        .map(|_| {
            dirichlet(&mut rng, n_actions)
                .into_iter()
                .map(|w| floor + scale * (0.1 / n_actions as f64 + 0.9 * w))
                .collect()
        })
        .collect();
    Policy { table, floor }
}

/// Full-support distribution on `n` states.
pub fn random_distribution(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = rng::stream(seed, &[0x4D55]);
    let w = dirichlet(&mut rng, n);
    DVector::from_iterator(n, w.into_iter().map(|x| 0.1 / n as f64 + 0.9 * x))
}

/// Gaussian rows projected onto the zero-sum subspace, scaled to max-norm 1.
pub fn random_tangent(n_states: usize, n_actions: usize, seed: u64) -> TangentDirection {
    let mut rng = rng::stream(seed, &[0x5444]);
    let mut table: Vec<Vec<f64>> = (0..n_states)
        .map(|_| {
            let row: Vec<f64> = (0..n_actions).map(|_| rng.sample(StandardNormal)).collect();
            let mean = row.iter().sum::<f64>() / n_actions as f64;
            row.into_iter().map(|x| x - mean).collect()
        })
        .collect();
    let scale = table.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale > 0.0 {
        table.iter_mut().flatten().for_each(|x| *x /= scale);
    }
    TangentDirection { table }
}

/// Generator inputs accepted by [`generate`]; unused fields are ignored.
#[derive(Debug, Clone)]
pub struct FixtureParams {
    pub multichain: MultichainParams,
    pub n: usize,
    pub fringe: usize,
    pub noise: f64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        FixtureParams {
            multichain: MultichainParams::default(),
            n: 5,
            fringe: 2,
            noise: 0.1,
        }
    }
}

pub const FIXTURE_NAMES: [&str; 4] = ["twochain", "random_multichain", "weakly_comm", "ergodic_ring"];

pub fn generate(name: &str, params: &FixtureParams, seed: u64) -> Result<Mdp> {
    let na = params.multichain.n_actions;
    match name {
        "twochain" => Ok(twochain()),
        "random_multichain" => random_multichain(&params.multichain, seed),
        "weakly_comm" => weakly_comm(params.n, params.fringe, na, seed),
        "ergodic_ring" => {
            if params.n == 0 || !(0.0..=1.0).contains(&params.noise) {
                return Err(Error::InvalidArgument("ring needs n > 0 and noise in [0,1]".into()));
            }
            Ok(ergodic_ring(params.n, na, params.noise, seed))
        }
        other => Err(Error::InvalidArgument(format!(
            "unknown fixture {other:?}; expected one of {FIXTURE_NAMES:?}"
        ))),
    }
}

/// The named fixtures used by the property suites, each with default parameters.
pub fn standard_fixtures(seed: u64) -> Vec<(&'static str, Mdp)> {
    let p = FixtureParams::default();
    FIXTURE_NAMES
        .iter()
        .map(|&name| (name, generate(name, &p, seed).expect("defaults are valid")))
        .collect()
}
