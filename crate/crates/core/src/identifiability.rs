//! Closed-form rank-uniqueness bounds and degrees-of-freedom calculators.
//!
//! `rank_bounds` evaluates the expected generic rank and the unbalanced-size
//! corrections, yielding the largest component count `R̄` below which a
//! generic tensor of the given size admits a unique CPD. The DoF helpers
//! turn that bound into achievable sum-DoF numbers and the two upper bounds
//! used for comparison curves.

use crate::error::{Error, Result};
use crate::tensor::TensorShape;

/// Which branch of the piecewise uniqueness rule applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Largest data dimension dominates: `T_1 >= R^1`.
    UnbalancedT1,
    /// Antenna count dominates: `N >= R^2`.
    UnbalancedN,
    Balanced,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regime::UnbalancedT1 => write!(f, "unbalanced_T1"),
            Regime::UnbalancedN => write!(f, "unbalanced_N"),
            Regime::Balanced => write!(f, "balanced"),
        }
    }
}

/// Rank-uniqueness bounds for one tensor size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankBounds {
    /// Expected generic rank `R^0 = ceil(T*N / (N + sum(T_i - 1)))`.
    pub r0: u64,
    pub r1: u64,
    pub r2: u64,
    /// Largest K below which the generic rank-K CPD is unique.
    pub r_bar: u64,
    pub regime: Regime,
    /// The underlying uniqueness theorem is proven for total sizes up to
    /// 15000 (and omits a few size-specific exceptions); larger shapes are
    /// still evaluated but flagged.
    pub beyond_proven_size: bool,
}

/// Proof-range limit on `N * prod(T_i)` for the uniqueness result.
pub const PROVEN_SIZE_LIMIT: usize = 15000;

/// Evaluates the rank-uniqueness bounds for `shape`.
///
/// Data dimensions are sorted descending internally; the caller's order is
/// not modified.
pub fn rank_bounds(shape: &TensorShape) -> RankBounds {
    let mut dims: Vec<u64> = shape.dims().iter().map(|&d| d as u64).collect();
    dims.sort_unstable_by(|a, b| b.cmp(a));
    let n = shape.antennas() as u64;
    let t: u64 = dims.iter().product();

    let sum_all: u64 = dims.iter().map(|&d| d - 1).sum();
    let r0 = div_ceil(t * n, n + sum_all);

    // R^1 = 2 - N + N * prod_{i>=2} T_i - sum_{i>=2} (T_i - 1)
    let prod_rest: u64 = dims[1..].iter().product();
    let sum_rest: u64 = dims[1..].iter().map(|&d| d - 1).sum();
    let r1_signed = 2i128 - n as i128 + (n * prod_rest) as i128 - sum_rest as i128;
    debug_assert!(r1_signed > 0);
    let r1 = r1_signed.max(1) as u64;

    // R^2 = 1 + T - sum_i (T_i - 1)
    let r2 = 1 + t - sum_all;

    let (r_bar, regime) = if dims[0] >= r1 {
        (r1 - 1, Regime::UnbalancedT1)
    } else if n >= r2 {
        (r2 - 1, Regime::UnbalancedN)
    } else {
        (r0, Regime::Balanced)
    };

    RankBounds {
        r0,
        r1,
        r2,
        r_bar,
        regime,
        beyond_proven_size: shape.total_len() > PROVEN_SIZE_LIMIT,
    }
}

fn div_ceil(a: u64, b: u64) -> u64 {
    (a + b - 1) / b
}

/// Per-user DoF `sum(T_i - 1)` of the shape.
pub fn per_user_dof(shape: &TensorShape) -> u64 {
    shape.dims().iter().map(|&d| (d - 1) as u64).sum()
}

/// Achievable sum-DoF `ka * sum(T_i - 1)` for `ka` active users.
///
/// Errors when `ka` is outside the identifiable range `1..=R̄-1`.
pub fn dof_tbm(shape: &TensorShape, ka: u64) -> Result<u64> {
    let rb = rank_bounds(shape);
    let max = rb.r_bar.saturating_sub(1);
    if ka < 1 || ka > max {
        return Err(Error::RankBoundExceeded { ka, max });
    }
    Ok(ka * per_user_dof(shape))
}

/// Sum-DoF together with the tensor-size and cooperative upper bounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DofReport {
    pub per_user_dof: u64,
    pub sum_dof: u64,
    /// `N * (T - ka)`, zero when `ka >= T`.
    pub upper_bound_tensor: u64,
    /// `M* * (T - M*)` with `M* = min(ka, N, floor(T/2))`.
    pub coop_bound: u64,
    pub m_star: u64,
}

/// DoF bounds for `ka >= 1` active users (no identifiability gating).
pub fn dof_bounds(shape: &TensorShape, ka: u64) -> DofReport {
    let t = shape.block_len() as u64;
    let n = shape.antennas() as u64;
    let per_user = per_user_dof(shape);
    let m_star = ka.min(n).min(t / 2);
    DofReport {
        per_user_dof: per_user,
        sum_dof: ka * per_user,
        upper_bound_tensor: n * t.saturating_sub(ka),
        coop_bound: m_star * (t - m_star),
        m_star,
    }
}

/// One row of the achievable-DoF curve.
#[derive(Debug, Clone, PartialEq)]
pub struct DofPoint {
    pub ka: u64,
    pub sum_dof: u64,
    /// Sum-DoF per channel use, `sum_dof / T`.
    pub per_channel_use: f64,
    /// Marks the `ka = R̄ - 1` endpoint.
    pub endpoint: bool,
}

/// Achievable sum-DoF per channel use for `ka = 1..=R̄-1`.
pub fn dof_curve(shape: &TensorShape) -> Vec<DofPoint> {
    let rb = rank_bounds(shape);
    let t = shape.block_len() as f64;
    let per_user = per_user_dof(shape);
    let last = rb.r_bar.saturating_sub(1);
    (1..=last)
        .map(|ka| DofPoint {
            ka,
            sum_dof: ka * per_user,
            per_channel_use: (ka * per_user) as f64 / t,
            endpoint: ka == last,
        })
        .collect()
}
