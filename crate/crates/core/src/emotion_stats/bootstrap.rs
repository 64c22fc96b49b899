//! Percentile bootstrap with per-replicate deterministic generators.
//!
//! Replicate `r` draws from `ChaCha8Rng::seed_from_u64(seed)` switched to
//! stream `r`, so the output does not depend on how replicates are
//! scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::StatsError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BootstrapConfig {
    pub n_boot: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_boot: 2000,
            level: 0.95,
            seed: 13,
        }
    }
}

impl BootstrapConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BootstrapCI {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub n_boot: usize,
    pub seed: u64,
}

pub fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

/// `n` indices drawn uniformly with replacement from `0..n`.
pub fn resample_indices<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Linearly interpolated quantile of already-sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi || frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Percentile interval of replicate statistics. `None` when empty.
pub fn percentile_interval(mut stats: Vec<f64>, level: f64) -> Option<(f64, f64)> {
    stats.retain(|v| v.is_finite());
    if stats.is_empty() {
        return None;
    }
    stats.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    Some((quantile_sorted(&stats, tail), quantile_sorted(&stats, 1.0 - tail)))
}

fn check(cfg: &BootstrapConfig) -> Result<(), StatsError> {
    if cfg.n_boot == 0 {
        return Err(StatsError::Config("n_boot must be positive".into()));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(StatsError::Config(format!("level must be in (0, 1), got {}", cfg.level)));
    }
    Ok(())
}

/// Runs `n_boot` replicates over `n_units` resampling units. `stat`
/// receives the resampled unit indices and returns one value per tracked
/// statistic (`None` when undefined on that resample). Returns one
/// interval per statistic.
pub fn bootstrap_many<F>(
    n_units: usize,
    n_stats: usize,
    cfg: &BootstrapConfig,
    stat: F,
) -> Result<Vec<Option<(f64, f64)>>, StatsError>
where
    F: Fn(&[usize]) -> Vec<Option<f64>> + Sync,
{
    check(cfg)?;
    if n_units == 0 {
        return Err(StatsError::Empty);
    }
    let replicates: Vec<Vec<Option<f64>>> = (0..cfg.n_boot)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(cfg.seed, r);
            let idx = resample_indices(&mut rng, n_units);
            let v = stat(&idx);
            debug_assert_eq!(v.len(), n_stats);
            v
        })
        .collect();
    Ok((0..n_stats)
        .map(|s| {
            let vals: Vec<f64> = replicates.iter().filter_map(|r| r[s]).collect();
            percentile_interval(vals, cfg.level)
        })
        .collect())
}

/// Percentile CI of a single statistic over resampled units.
pub fn bootstrap_statistic<F>(n_units: usize, point: f64, cfg: &BootstrapConfig, stat: F) -> Result<BootstrapCI, StatsError>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    let (lo, hi) = bootstrap_many(n_units, 1, cfg, |idx| vec![stat(idx)])?
        .pop()
        .flatten()
        .ok_or(StatsError::Empty)?;
    Ok(BootstrapCI {
        point,
        lo,
        hi,
        level: cfg.level,
        n_boot: cfg.n_boot,
        seed: cfg.seed,
    })
}

// Mean computed around a fixed shift so constant data returns the constant
// exactly.
fn shifted_mean(values: &[f64], idx: impl Iterator<Item = usize>, shift: f64) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in idx {
        sum += values[i] - shift;
        n += 1;
    }
    shift + sum / n as f64
}

/// Mean of `values` with an i.i.d. percentile bootstrap CI.
pub fn bootstrap_ci(values: &[f64], cfg: &BootstrapConfig) -> Result<BootstrapCI, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    let shift = values[0];
    let point = shifted_mean(values, 0..values.len(), shift);
    bootstrap_statistic(values.len(), point, cfg, |idx| {
        Some(shifted_mean(values, idx.iter().copied(), shift))
    })
}

/// A resampling unit for cluster-bootstrap means: the shifted sum and the
/// count of the observations it holds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClusterSum {
    pub sum: f64,
    pub count: usize,
}

/// Pooled mean over clusters resampled as whole units.
pub fn cluster_bootstrap_ci(clusters: &[Vec<f64>], cfg: &BootstrapConfig) -> Result<BootstrapCI, StatsError> {
    let shift = clusters
        .iter()
        .find_map(|c| c.first().copied())
        .ok_or(StatsError::Empty)?;
    let sums: Vec<ClusterSum> = clusters
        .iter()
        .map(|c| ClusterSum {
            sum: c.iter().map(|v| v - shift).sum(),
            count: c.len(),
        })
        .collect();
    let pooled = |idx: &mut dyn Iterator<Item = usize>| {
        let (mut s, mut n) = (0.0, 0usize);
        for i in idx {
            s += sums[i].sum;
            n += sums[i].count;
        }
        (n > 0).then(|| shift + s / n as f64)
    };
    let point = pooled(&mut (0..sums.len())).ok_or(StatsError::Empty)?;
    bootstrap_statistic(sums.len(), point, cfg, |idx| pooled(&mut idx.iter().copied()))
}
