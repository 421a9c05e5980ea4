//! Euclidean and KL projections onto the floored simplex
//! `M_α = {p : Σp = 1, p_i ≥ α}` and the per-state mirror step.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the sum and floor constraints.
pub const FEAS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivergenceKind {
    Euclidean,
    Kl,
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DivergenceKind::Euclidean => "euclid",
            DivergenceKind::Kl => "kl",
        })
    }
}

impl FromStr for DivergenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclid" | "euclidean" | "l2" => Ok(DivergenceKind::Euclidean),
            "kl" => Ok(DivergenceKind::Kl),
            other => Err(Error::InvalidArgument(format!("unknown divergence {other:?}"))),
        }
    }
}

/// A point of `M_α`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlooredSimplexPoint {
    pub p: Vec<f64>,
    pub alpha: f64,
}

impl FlooredSimplexPoint {
    pub fn new(p: Vec<f64>, alpha: f64) -> Result<Self> {
        check_alpha(alpha, p.len())?;
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > FEAS_TOL {
            return Err(Error::InvalidArgument(format!("point sums to {sum}")));
        }
        if let Some(i) = p.iter().position(|&x| x < alpha - FEAS_TOL) {
            return Err(Error::InvalidArgument(format!(
                "entry {i} = {} is below the floor {alpha}",
                p[i]
            )));
        }
        Ok(FlooredSimplexPoint { p, alpha })
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }
}

/// Rejects floors outside `[0, 1/d]`.
pub fn check_alpha(alpha: f64, dim: usize) -> Result<()> {
    if dim == 0 || !(alpha >= 0.0) || alpha * dim as f64 > 1.0 + FEAS_TOL {
        return Err(Error::InfeasibleAlpha { alpha, dim });
    }
    Ok(())
}

fn is_singleton(alpha: f64, dim: usize) -> bool {
    (alpha * dim as f64 - 1.0).abs() <= FEAS_TOL
}

/// `½‖p − p2‖²` or `KL(p ‖ p2)` with `0 log 0 = 0`.
pub fn divergence(kind: DivergenceKind, p: &[f64], p2: &[f64]) -> Result<f64> {
    if p.len() != p2.len() {
        return Err(Error::Dimension(format!("{} vs {} entries", p.len(), p2.len())));
    }
    match kind {
        DivergenceKind::Euclidean => Ok(0.5 * p.iter().zip(p2).map(|(a, b)| (a - b).powi(2)).sum::<f64>()),
        DivergenceKind::Kl => {
            let mut total = 0.0;
            for (i, (&a, &b)) in p.iter().zip(p2).enumerate() {
                if a > 0.0 {
                    if !(b > 0.0) {
                        return Err(Error::KlUndefined(i));
                    }
                    total += a * (a / b).ln();
                }
            }
            Ok(total.max(0.0))
        }
    }
}

/// Euclidean projection by sorting and thresholding.
pub fn euclid_project_floor(q: &[f64], alpha: f64) -> Result<FlooredSimplexPoint> {
    let d = q.len();
    check_alpha(alpha, d)?;
    if is_singleton(alpha, d) {
        return Ok(FlooredSimplexPoint {
            p: vec![alpha; d],
            alpha,
        });
    }
    let mut sorted = q.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let budget = 1.0 - d as f64 * alpha;
    let mut prefix = 0.0;
    let mut lambda = 0.0;
    for (j, &x) in sorted.iter().enumerate() {
        prefix += x;
        let shift = (budget - prefix) / (j + 1) as f64;
        if x + shift > 0.0 {
            lambda = shift;
        }
    }
    let p = q.iter().map(|&x| (x + lambda + alpha).max(alpha)).collect();
    Ok(FlooredSimplexPoint { p, alpha })
}

/// KL projection `argmin_{p ∈ M_α} KL(p ‖ w)` by median pivoting.
///
/// The result is `p_i = α` on the clipped set and `m₀ w_i` elsewhere.
pub fn kl_project_floor(w: &[f64], alpha: f64) -> Result<FlooredSimplexPoint> {
    let d = w.len();
    check_alpha(alpha, d)?;
    if let Some(i) = w.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::KlUndefined(i));
    }
    if is_singleton(alpha, d) {
        return Ok(FlooredSimplexPoint {
            p: vec![alpha; d],
            alpha,
        });
    }
    let total: f64 = w.iter().sum();
    let cap = (d as f64).log2().ceil() as usize + 2;
    let mut clipped = vec![false; d];
    let (mut c_count, mut c_mass) = (0usize, 0.0f64);
    let mut window: Vec<usize> = (0..d).collect();
    let mut rounds = 0;
    while !window.is_empty() {
        rounds += 1;
        if rounds > cap {
            return Err(Error::ProjectionStalled(cap));
        }
        window.sort_by(|&a, &b| w[a].total_cmp(&w[b]).then(a.cmp(&b)));
        let omega = w[window[(window.len() - 1) / 2]];
        let (mut lo, mut mid, mut hi) = (Vec::new(), Vec::new(), Vec::new());
        for &i in &window {
            if w[i] < omega {
                lo.push(i);
            } else if w[i] == omega {
                mid.push(i);
            } else {
                hi.push(i);
            }
        }
        let lo_mass: f64 = lo.iter().map(|&i| w[i]).sum();
        let m0 = (1.0 - (c_count + lo.len()) as f64 * alpha) / (total - (c_mass + lo_mass));
        if omega * m0 < alpha {
            for &i in lo.iter().chain(&mid) {
                clipped[i] = true;
                c_mass += w[i];
            }
            c_count += lo.len() + mid.len();
            window = hi;
        } else {
            window = lo;
        }
    }
    let m0 = (1.0 - c_count as f64 * alpha) / (total - c_mass);
    let p = (0..d).map(|i| if clipped[i] { alpha } else { m0 * w[i] }).collect();
    Ok(FlooredSimplexPoint { p, alpha })
}

pub fn project(kind: DivergenceKind, v: &[f64], alpha: f64) -> Result<FlooredSimplexPoint> {
    match kind {
        DivergenceKind::Euclidean => euclid_project_floor(v, alpha),
        DivergenceKind::Kl => kl_project_floor(v, alpha),
    }
}

/// `argmax_{p ∈ M_α} η⟨g, p⟩ − D(p, row)`.
pub fn mirror_step(
    row: &FlooredSimplexPoint,
    g_row: &[f64],
    eta: f64,
    kind: DivergenceKind,
) -> Result<FlooredSimplexPoint> {
    if g_row.len() != row.dim() {
        return Err(Error::Dimension(format!(
            "gradient row has {} entries, point has {}",
            g_row.len(),
            row.dim()
        )));
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {eta}")));
    }
    match kind {
        DivergenceKind::Euclidean => {
            // The projection ignores constant shifts; shifting by the max keeps
            // the free coordinates at unit scale when η is huge.
            let top = g_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let q: Vec<f64> = row.p.iter().zip(g_row).map(|(p, g)| p + eta * (g - top)).collect();
            euclid_project_floor(&q, row.alpha)
        }
        DivergenceKind::Kl => {
            if let Some(i) = row.p.iter().position(|&x| !(x > 0.0)) {
                return Err(Error::KlUndefined(i));
            }
            let logits: Vec<f64> = row.p.iter().zip(g_row).map(|(p, g)| p.ln() + eta * g).collect();
            let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut w: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let z: f64 = w.iter().sum();
            // Entries that underflow keep the smallest positive weight so the
            // projection stays defined; they end up on the floor anyway.
            w.iter_mut().for_each(|x| *x = (*x / z).max(f64::MIN_POSITIVE));
            kl_project_floor(&w, row.alpha)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn divergence_examples() {
        assert_eq!(
            divergence(DivergenceKind::Euclidean, &[1.0, 0.0], &[0.0, 1.0]).unwrap(),
            1.0
        );
        let kl = divergence(DivergenceKind::Kl, &[0.5, 0.5], &[0.25, 0.75]).unwrap();
        assert!((kl - (0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln())).abs() < 1e-15);
        assert!((kl - 0.143841).abs() < 1e-6);
        for kind in [DivergenceKind::Euclidean, DivergenceKind::Kl] {
            assert_eq!(divergence(kind, &[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        }
        assert!(matches!(
            divergence(DivergenceKind::Kl, &[0.5, 0.5], &[1.0, 0.0]),
            Err(Error::KlUndefined(1))
        ));
        assert_eq!(
            divergence(DivergenceKind::Kl, &[1.0, 0.0], &[0.5, 0.5]).unwrap(),
            2f64.ln()
        );
    }

    #[test]
    fn euclid_examples() {
        assert!(close(
            &euclid_project_floor(&[0.5, 0.5], 0.2).unwrap().p,
            &[0.5, 0.5],
            1e-15
        ));
        assert!(close(
            &euclid_project_floor(&[1.0, 0.0], 0.2).unwrap().p,
            &[0.8, 0.2],
            1e-15
        ));
        let third = 1.0 / 3.0;
        assert!(close(
            &euclid_project_floor(&[0.3; 3], 0.0).unwrap().p,
            &[third; 3],
            1e-15
        ));
        assert_eq!(euclid_project_floor(&[5.0, -1.0], 0.5).unwrap().p, vec![0.5, 0.5]);
        assert!(matches!(
            euclid_project_floor(&[0.5, 0.5], 0.6),
            Err(Error::InfeasibleAlpha { .. })
        ));
    }

    #[test]
    fn kl_examples() {
        assert!(close(
            &kl_project_floor(&[0.5, 0.5], 0.2).unwrap().p,
            &[0.5, 0.5],
            1e-15
        ));
        assert!(close(
            &kl_project_floor(&[0.9, 0.1], 0.2).unwrap().p,
            &[0.8, 0.2],
            1e-15
        ));
        let w = [0.1, 0.2, 0.3, 0.4];
        assert!(close(&kl_project_floor(&w, 0.0).unwrap().p, &w, 1e-15));
        assert!(matches!(kl_project_floor(&[1.0, 0.0], 0.1), Err(Error::KlUndefined(1))));
        assert!(matches!(
            kl_project_floor(&[0.5, 0.5], 0.7),
            Err(Error::InfeasibleAlpha { .. })
        ));
        assert_eq!(
            kl_project_floor(&[0.9, 0.05, 0.05], 1.0 / 3.0).unwrap().p,
            vec![1.0 / 3.0; 3]
        );
    }

    #[test]
    fn kl_handles_ties_at_the_pivot() {
        let p = kl_project_floor(&[0.02, 0.02, 0.02, 0.94], 0.1).unwrap().p;
        assert!(close(&p, &[0.1, 0.1, 0.1, 0.7], 1e-14), "{p:?}");
    }

    #[test]
    fn mirror_step_examples() {
        let row = FlooredSimplexPoint::new(vec![0.5, 0.5], 0.0).unwrap();
        let e = mirror_step(&row, &[1.0, 0.0], 0.1, DivergenceKind::Euclidean).unwrap();
        assert!(close(&e.p, &[0.55, 0.45], 1e-15));
        for kind in [DivergenceKind::Euclidean, DivergenceKind::Kl] {
            let row = FlooredSimplexPoint::new(vec![0.2, 0.3, 0.5], 0.1).unwrap();
            let same = mirror_step(&row, &[0.0; 3], 0.7, kind).unwrap();
            assert!(close(&same.p, &row.p, 1e-15));
        }
    }

    #[test]
    fn large_step_reaches_clipped_vertex() {
        let alpha = 0.05;
        let row = FlooredSimplexPoint::new(vec![0.25; 4], alpha).unwrap();
        let g = [0.1, 0.4, -0.2, 0.3];
        for kind in [DivergenceKind::Euclidean, DivergenceKind::Kl] {
            let p = mirror_step(&row, &g, 1e3, kind).unwrap().p;
            assert!(
                close(&p, &[alpha, 1.0 - 3.0 * alpha, alpha, alpha], 1e-12),
                "{kind}: {p:?}"
            );
        }
    }

    #[test]
    fn kl_step_without_floor_is_multiplicative_weights() {
        let row = FlooredSimplexPoint::new(vec![0.1, 0.6, 0.3], 0.0).unwrap();
        let g = [1.0, -0.5, 0.2];
        let eta = 0.8;
        let p = mirror_step(&row, &g, eta, DivergenceKind::Kl).unwrap().p;
        let raw: Vec<f64> = row.p.iter().zip(&g).map(|(x, g)| x * (eta * g).exp()).collect();
        let z: f64 = raw.iter().sum();
        let expected: Vec<f64> = raw.iter().map(|x| x / z).collect();
        assert!(close(&p, &expected, 1e-12));
    }

    #[test]
    fn bad_step_inputs() {
        let row = FlooredSimplexPoint::new(vec![0.5, 0.5], 0.0).unwrap();
        assert!(mirror_step(&row, &[1.0], 0.1, DivergenceKind::Kl).is_err());
        assert!(mirror_step(&row, &[1.0, 0.0], 0.0, DivergenceKind::Kl).is_err());
        let edge = FlooredSimplexPoint::new(vec![1.0, 0.0], 0.0).unwrap();
        assert!(matches!(
            mirror_step(&edge, &[1.0, 0.0], 0.1, DivergenceKind::Kl),
            Err(Error::KlUndefined(1))
        ));
        assert!(FlooredSimplexPoint::new(vec![0.6, 0.6], 0.0).is_err());
        assert!(FlooredSimplexPoint::new(vec![0.95, 0.05], 0.1).is_err());
    }

    #[test]
    fn divergence_kind_parses() {
        assert_eq!("kl".parse::<DivergenceKind>().unwrap(), DivergenceKind::Kl);
        assert_eq!("euclid".parse::<DivergenceKind>().unwrap(), DivergenceKind::Euclidean);
        assert!("l1".parse::<DivergenceKind>().is_err());
    }
}
