//! Sample allocation across strata.
//!
//! Given per-stratum standard deviations (of the Horvitz-Thompson values) and
//! per-sample descent costs, these routines size the total draw needed to hit
//! a target half-width and split it across strata. `neyman` ignores cost,
//! `modified_neyman` discounts strata whose samples are cheaper to draw, and
//! `next_batch` sizes one refinement round against the running pilot
//! estimate.

use crate::estimation::z_delta;

/// Per-stratum inputs: `sigma` is the HT-value standard deviation, `h` the
/// average per-sample node-visit cost (descent start height).
#[derive(Debug, Clone, Copy)]
pub struct StratumStats {
    pub sigma: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub n_total: u64,
    pub per_stratum: Vec<u64>,
}

impl Allocation {
    fn zeros(k: usize) -> Self {
        Allocation { n_total: 0, per_stratum: vec![0; k] }
    }
}

/// Minimum per-stratum batch whenever a stratum is sampled at all; CLT
/// intervals below this are unreliable.
pub const MIN_STRATUM_SAMPLES: u64 = 30;

/// Cost-free optimal allocation: n_i = (Z²/ε²)(Σσ)σ_i, the minimum total
/// sample size whose combined half-width reaches eps.
pub fn neyman(stats: &[StratumStats], eps: f64, delta: f64) -> Allocation {
    assert!(eps > 0.0);
    let z = z_delta(delta);
    let sigma_sum: f64 = stats.iter().map(|s| s.sigma).sum();
    let scale = z * z / (eps * eps) * sigma_sum;
    finish(stats.iter().map(|s| scale * s.sigma))
}

/// Cost-aware allocation: n_i = (Z²/ε²)(Σσ_j√h_j)(σ_i/√h_i). Minimizes total
/// node visits Σ n_i h_i subject to the width constraint.
pub fn modified_neyman(stats: &[StratumStats], eps: f64, delta: f64) -> Allocation {
    assert!(eps > 0.0);
    let z = z_delta(delta);
    let sh_sum: f64 = stats.iter().map(|s| s.sigma * s.h.sqrt()).sum();
    let scale = z * z / (eps * eps) * sh_sum;
    finish(stats.iter().map(|s| scale * s.sigma / s.h.sqrt().max(f64::MIN_POSITIVE)))
}

fn finish(raw: impl Iterator<Item = f64>) -> Allocation {
    let per_stratum: Vec<u64> =
        raw.map(|x| if x > 0.0 { x.ceil() as u64 } else { 0 }).collect();
    Allocation { n_total: per_stratum.iter().sum(), per_stratum }
}

/// Predicted node-visit cost of sampling k strata to half-width eps:
/// c₀k + (Z²/ε²)(Σσ_i√h_i)².
pub fn projected_cost(stats: &[StratumStats], k: usize, c0: f64, eps: f64, delta: f64) -> f64 {
    debug_assert_eq!(stats.len(), k);
    let z = z_delta(delta);
    let sh: f64 = stats.iter().map(|s| s.sigma * s.h.sqrt()).sum();
    c0 * k as f64 + z * z / (eps * eps) * sh * sh
}

/// Size one refinement batch given the pilot estimate (n0 samples at
/// half-width eps0).
///
/// With σ² = (Σσ_i√h_i)(Σσ_i/√h_i):
/// t1 = Z²σ²/(2ε²) − n₀; t2 = t1² + n₀²(ε₀²/ε² − 1) clamped at 0;
/// n_tot = min{t1 + √t2, step_size}; each sampled stratum gets its
/// σ_i/√h_i share of n_tot, floored at [`MIN_STRATUM_SAMPLES`].
/// Returns an all-zero batch when no further samples are needed.
pub fn next_batch(
    stats: &[StratumStats],
    n0: u64,
    eps0: f64,
    eps: f64,
    delta: f64,
    step_size: u64,
) -> Allocation {
    assert!(eps > 0.0);
    let z = z_delta(delta);
    let sh: f64 = stats.iter().map(|s| s.sigma * s.h.sqrt()).sum();
    let sh_inv: f64 =
        stats.iter().map(|s| s.sigma / s.h.sqrt().max(f64::MIN_POSITIVE)).sum();
    let sigma_sq = sh * sh_inv;
    if sigma_sq <= 0.0 {
        return Allocation::zeros(stats.len());
    }
    let n0f = n0 as f64;
    let t1 = z * z * sigma_sq / (2.0 * eps * eps) - n0f;
    // At n0 = 0 the eps0 term vanishes and t2 collapses to t1² regardless of
    // eps0 (avoids 0 · inf when eps0 is infinite).
    let t2 = if n0 == 0 {
        t1 * t1
    } else {
        (t1 * t1 + n0f * n0f * (eps0 * eps0 / (eps * eps) - 1.0)).max(0.0)
    };
    let n_tot = (t1 + t2.sqrt()).min(step_size as f64);
    if n_tot <= 0.0 {
        return Allocation::zeros(stats.len());
    }
    let per_stratum: Vec<u64> = stats
        .iter()
        .map(|s| {
            let share = s.sigma / s.h.sqrt().max(f64::MIN_POSITIVE) / sh_inv;
            if share > 0.0 {
                ((share * n_tot).ceil() as u64).max(MIN_STRATUM_SAMPLES)
            } else {
                0
            }
        })
        .collect();
    Allocation { n_total: per_stratum.iter().sum(), per_stratum }
}
