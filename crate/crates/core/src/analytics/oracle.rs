//! Closed-form queueing predictions and checks against measured tails.

use crate::error::{Result, SimError};
use crate::scalar::Real;

fn check_load<R: Real>(alpha: R) -> Result<()> {
    if alpha > R::zero() && alpha < R::one() {
        Ok(())
    } else {
        Err(SimError::config(format!(
            "load ratio {alpha} is outside (0, 1); no stationary regime"
        )))
    }
}

/// Stationary `P[Q >= k]` of an M/M/1 queue at utilization `alpha`: `alpha^k`.
pub fn mm1_tail<R: Real>(alpha: R, k: u32) -> Result<R> {
    check_load(alpha)?;
    Ok(alpha.powi(k as i32))
}

/// Fixed-point tail of two-choice sampling: `alpha^(2^k - 1)`.
pub fn ppot_tail<R: Real>(alpha: R, k: u32) -> Result<R> {
    check_load(alpha)?;
    let exponent = 2f64.powi(k as i32) - 1.0;
    Ok(alpha.powf(R::lit(exponent)))
}

/// Queue length above which fewer than one of `n` workers is expected under
/// geometric tails: `ln n / ln(1/alpha)`.
pub fn mm1_max_queue_estimate(alpha: f64, n: usize) -> f64 {
    (n as f64).ln() / (1.0 / alpha).ln()
}

/// `M_k`: share of workers (possibly speed weighted) holding at least `k` tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct TailProfile<R> {
    levels: Vec<R>,
}

impl<R: Real> TailProfile<R> {
    /// Requires `M_0 = 1`, values in `[0, 1]`, non-increasing.
    pub fn new(levels: Vec<R>) -> Result<Self> {
        let tol = R::lit(1e-9);
        match levels.first() {
            Some(&m0) if (m0 - R::one()).abs() <= tol => {}
            _ => return Err(SimError::config("tail profile must start at 1")),
        }
        if levels
            .iter()
            .any(|&m| !(m >= R::zero() && m <= R::one() + tol))
        {
            return Err(SimError::config("tail profile values must lie in [0, 1]"));
        }
        if levels.windows(2).any(|w| w[1] > w[0] + tol) {
            return Err(SimError::config("tail profile must be non-increasing"));
        }
        Ok(TailProfile { levels })
    }

    /// Profile from an oracle tail function evaluated at `0..=k_max`.
    pub fn from_fn<F: Fn(u32) -> Result<R>>(k_max: u32, f: F) -> Result<Self> {
        Self::new((0..=k_max).map(f).collect::<Result<Vec<R>>>()?)
    }

    pub fn levels(&self) -> &[R] {
        &self.levels
    }

    /// `M_k`, zero beyond the recorded range.
    pub fn at(&self, k: usize) -> R {
        self.levels.get(k).copied().unwrap_or(R::zero())
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Per-queue arrival rate seen by a queue of length `k` under two-choice
/// shortest-queue routing with background tails `M`:
/// `alpha (M_k^2 - M_{k+1}^2) / (M_k - M_{k+1})`.
///
/// Entries whose denominator vanishes are `None`.
pub fn fixed_point_rates<R: Real>(tail: &TailProfile<R>, alpha: R) -> Vec<Option<R>> {
    (0..tail.len())
        .map(|k| {
            let (mk, next) = (tail.at(k), tail.at(k + 1));
            let gap = mk - next;
            (gap > R::lit(1e-300)).then(|| alpha * (mk * mk - next * next) / gap)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// Too little tail mass to judge.
    Inconclusive,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelCheck {
    pub k: usize,
    /// `M_{k+1}^2 / M_k^3`.
    pub ratio: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecurrenceReport {
    pub verdict: Verdict,
    pub levels: Vec<LevelCheck>,
    pub max_ratio: Option<f64>,
}

/// Checks `M_{k+1}^2 <= c0 M_k^3` at every level whose next tail value is at
/// least `floor`.
pub fn tail_recurrence_check(tails: &[f64], c0: f64, floor: f64) -> RecurrenceReport {
    let mut levels = Vec::new();
    for k in 0..tails.len().saturating_sub(1) {
        let (mk, next) = (tails[k], tails[k + 1]);
        if next < floor || mk <= 0.0 {
            break;
        }
        let ratio = (2.0 * next.ln() - 3.0 * mk.ln()).exp();
        levels.push(LevelCheck {
            k,
            ratio,
            holds: ratio <= c0,
        });
    }
    let max_ratio = levels.iter().map(|l| l.ratio).reduce(f64::max);
    let verdict = if levels.is_empty() {
        Verdict::Inconclusive
    } else if levels.iter().all(|l| l.holds) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    RecurrenceReport {
        verdict,
        levels,
        max_ratio,
    }
}

/// Fraction of coordinates that differ.
pub fn l0_distance<R: Real>(u: &[u64], v: &[u64]) -> Result<R> {
    if u.len() != v.len() {
        return Err(SimError::fault(
            "l0 distance of vectors with different lengths",
        ));
    }
    if u.is_empty() {
        return Ok(R::zero());
    }
    let differ = u.iter().zip(v).filter(|(a, b)| a != b).count();
    Ok(R::count(differ) / R::count(u.len()))
}

/// Unnormalized `sum |u_i - v_i|`.
pub fn l1_distance<R: Real>(u: &[u64], v: &[u64]) -> Result<R> {
    if u.len() != v.len() {
        return Err(SimError::fault(
            "l1 distance of vectors with different lengths",
        ));
    }
    let total: u64 = u.iter().zip(v).map(|(&a, &b)| a.abs_diff(b)).sum();
    Ok(R::lit(total as f64))
}
