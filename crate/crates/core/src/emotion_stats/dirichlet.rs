//! Dirichlet maximum-likelihood fitting and differential entropy.

use serde::Serialize;

use super::StatsError;
use crate::special::{digamma, inverse_digamma, ln_gamma};

/// Upper bound on the fitted concentration α₀. Zero-variance data drives
/// the MLE to infinity; fits that reach the cap are flagged unconverged.
pub const ALPHA0_CAP: f64 = 1e7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MleConfig {
    /// Entries are clamped to at least this before renormalizing.
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            tol: 1e-10,
            max_iter: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirichletParams {
    pub alpha: Vec<f64>,
    pub alpha0: f64,
    pub n_samples: usize,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
}

impl DirichletParams {
    pub fn mean(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| a / self.alpha0).collect()
    }
}

/// Clamps entries to ≥ `eps` and renormalizes.
pub fn smooth(p: &[f64], eps: f64) -> Vec<f64> {
    let mut out: Vec<f64> = p.iter().map(|v| v.max(eps)).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

/// Sufficient statistics of a set of smoothed simplex vectors. The
/// Dirichlet likelihood depends on the data only through `n` and the
/// summed log entries; first and second moments seed the fit.
#[derive(Clone, Debug, PartialEq)]
pub struct SuffStats {
    pub n: usize,
    pub sum_log: Vec<f64>,
    pub sum_p: Vec<f64>,
    pub sum_p2: Vec<f64>,
}

impl SuffStats {
    pub fn zeros(k: usize) -> Self {
        Self {
            n: 0,
            sum_log: vec![0.0; k],
            sum_p: vec![0.0; k],
            sum_p2: vec![0.0; k],
        }
    }

    pub fn dim(&self) -> usize {
        self.sum_log.len()
    }

    /// Smooths each sample with `eps` and accumulates.
    pub fn from_samples<S: AsRef<[f64]>>(samples: &[S], eps: f64) -> Result<Self, StatsError> {
        let k = samples.first().map(|s| s.as_ref().len()).unwrap_or(0);
        let mut st = Self::zeros(k);
        for s in samples {
            st.push(s.as_ref(), eps)?;
        }
        Ok(st)
    }

    pub fn push(&mut self, sample: &[f64], eps: f64) -> Result<(), StatsError> {
        if sample.len() != self.dim() {
            return Err(StatsError::Dimension {
                expected: self.dim(),
                got: sample.len(),
            });
        }
        let p = smooth(sample, eps);
        for (j, v) in p.iter().enumerate() {
            self.sum_log[j] += v.ln();
            self.sum_p[j] += v;
            self.sum_p2[j] += v * v;
        }
        self.n += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &SuffStats) {
        self.n += other.n;
        for j in 0..self.dim() {
            self.sum_log[j] += other.sum_log[j];
            self.sum_p[j] += other.sum_p[j];
            self.sum_p2[j] += other.sum_p2[j];
        }
    }

    fn mean_log(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.sum_log.iter().map(|s| s / n).collect()
    }
}

/// Log-likelihood of `samples` under Dir(alpha). Samples must be strictly
/// positive (smooth them first).
pub fn dirichlet_log_likelihood<S: AsRef<[f64]>>(alpha: &[f64], samples: &[S]) -> Result<f64, StatsError> {
    check_alpha(alpha)?;
    if samples.is_empty() {
        return Err(StatsError::Empty);
    }
    let k = alpha.len();
    let mut sum_log = vec![0.0; k];
    for s in samples {
        let s = s.as_ref();
        if s.len() != k {
            return Err(StatsError::Dimension { expected: k, got: s.len() });
        }
        for (j, &p) in s.iter().enumerate() {
            if !(p > 0.0) {
                return Err(StatsError::Domain(crate::special::DomainError {
                    function: "dirichlet_log_likelihood",
                    arg: p,
                }));
            }
            sum_log[j] += p.ln();
        }
    }
    log_likelihood_from_sums(alpha, samples.len() as f64, &sum_log)
}

fn log_likelihood_from_sums(alpha: &[f64], n: f64, sum_log: &[f64]) -> Result<f64, StatsError> {
    let alpha0: f64 = alpha.iter().sum();
    let mut norm = ln_gamma(alpha0)?;
    let mut data = 0.0;
    for (a, s) in alpha.iter().zip(sum_log) {
        norm -= ln_gamma(*a)?;
        data += (a - 1.0) * s;
    }
    Ok(n * norm + data)
}

fn check_alpha(alpha: &[f64]) -> Result<(), StatsError> {
    if alpha.is_empty() {
        return Err(StatsError::Empty);
    }
    match alpha.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        Some(a) => Err(StatsError::Domain(crate::special::DomainError {
            function: "dirichlet alpha",
            arg: *a,
        })),
        None => Ok(()),
    }
}

/// Fits a Dirichlet to `samples` by maximum likelihood (Minka's
/// fixed-point iteration with inverse digamma).
pub fn dirichlet_mle<S: AsRef<[f64]>>(samples: &[S], cfg: &MleConfig) -> Result<DirichletParams, StatsError> {
    let stats = SuffStats::from_samples(samples, cfg.epsilon)?;
    dirichlet_mle_from_stats(&stats, cfg)
}

pub fn dirichlet_mle_from_stats(stats: &SuffStats, cfg: &MleConfig) -> Result<DirichletParams, StatsError> {
    if stats.n < 2 {
        return Err(StatsError::InsufficientData {
            subject: String::new(),
            n: stats.n,
            min: 2,
        });
    }
    let k = stats.dim();
    let n = stats.n as f64;
    let mean: Vec<f64> = stats.sum_p.iter().map(|s| s / n).collect();
    let second: Vec<f64> = stats.sum_p2.iter().map(|s| s / n).collect();
    let mean_log = stats.mean_log();

    let max_var = mean
        .iter()
        .zip(&second)
        .map(|(m, m2)| m2 - m * m)
        .fold(0.0f64, f64::max);
    if max_var < 1e-13 {
        // Identical samples: the likelihood grows without bound in α₀.
        let total: f64 = mean.iter().sum();
        let alpha: Vec<f64> = mean.iter().map(|m| m / total * ALPHA0_CAP).collect();
        return finish(alpha, stats, false, 0);
    }

    let mut alpha = moment_init(&mean, &second);
    let mut ll = log_likelihood_from_sums(&alpha, n, &stats.sum_log)?;
    let mut next = vec![0.0; k];
    for iter in 1..=cfg.max_iter {
        let alpha0: f64 = alpha.iter().sum();
        let psi0 = digamma(alpha0)?;
        for j in 0..k {
            next[j] = inverse_digamma(psi0 + mean_log[j])?;
        }
        let next0: f64 = next.iter().sum();
        if next0 > ALPHA0_CAP {
            let alpha: Vec<f64> = next.iter().map(|a| a / next0 * ALPHA0_CAP).collect();
            return finish(alpha, stats, false, iter);
        }
        let delta = next
            .iter()
            .zip(&alpha)
            .map(|(a, b)| (a - b).abs() / b.max(1.0))
            .fold(0.0f64, f64::max);
        let ll_next = log_likelihood_from_sums(&next, n, &stats.sum_log)?;
        debug_assert!(
            ll_next >= ll - 1e-9 * ll.abs().max(1.0),
            "Dirichlet log-likelihood decreased: {ll} -> {ll_next}"
        );
        ll = ll_next;
        std::mem::swap(&mut alpha, &mut next);
        if delta <= cfg.tol {
            return finish(alpha, stats, true, iter);
        }
    }
    finish(alpha, stats, false, cfg.max_iter)
}

/// Method-of-moments start: α = α₀·mean with α₀ averaged on the log scale
/// across coordinates. Falls back to all-ones on degenerate moments.
fn moment_init(mean: &[f64], second: &[f64]) -> Vec<f64> {
    let k = mean.len();
    let mut acc = 0.0;
    let mut used = 0;
    for j in 0..k.saturating_sub(1) {
        let s = (mean[j] - second[j]) / (second[j] - mean[j] * mean[j]);
        if s.is_finite() && s > 0.0 {
            acc += s.ln();
            used += 1;
        }
    }
    if used == 0 {
        return vec![1.0; k];
    }
    let alpha0 = (acc / used as f64).exp();
    let alpha: Vec<f64> = mean.iter().map(|m| alpha0 * m).collect();
    if alpha.iter().all(|a| a.is_finite() && *a > 0.0) {
        alpha
    } else {
        vec![1.0; k]
    }
}

fn finish(alpha: Vec<f64>, stats: &SuffStats, converged: bool, iterations: usize) -> Result<DirichletParams, StatsError> {
    let log_likelihood = log_likelihood_from_sums(&alpha, stats.n as f64, &stats.sum_log)?;
    Ok(DirichletParams {
        alpha0: alpha.iter().sum(),
        alpha,
        n_samples: stats.n,
        converged,
        iterations,
        log_likelihood,
    })
}

/// Differential entropy (nats) of Dir(alpha).
pub fn dirichlet_entropy(alpha: &[f64]) -> Result<f64, StatsError> {
    check_alpha(alpha)?;
    let k = alpha.len() as f64;
    let alpha0: f64 = alpha.iter().sum();
    let mut ln_b = -ln_gamma(alpha0)?;
    let mut tail = 0.0;
    for &a in alpha {
        ln_b += ln_gamma(a)?;
        tail += (a - 1.0) * digamma(a)?;
    }
    Ok(ln_b + (alpha0 - k) * digamma(alpha0)? - tail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::sample_dirichlet_raw;
    use proptest::prelude::*;

    #[test]
    fn uniform_alpha_entropy() {
        let h = dirichlet_entropy(&[1.0; 7]).unwrap();
        assert!((h + 720f64.ln()).abs() < 1e-9);
        assert!((h + 6.5793).abs() < 1e-4);
    }

    #[test]
    fn concentration_lowers_entropy() {
        let h1 = dirichlet_entropy(&[1.0; 7]).unwrap();
        let h10 = dirichlet_entropy(&[10.0; 7]).unwrap();
        assert!(h10 < h1);
        let dir = [2.0, 1.0, 1.0, 1.0, 5.0, 1.0, 1.0];
        let mut prev = f64::INFINITY;
        for c in [1.0, 1.5, 2.0, 4.0, 10.0, 100.0] {
            let a: Vec<f64> = dir.iter().map(|x| x * c).collect();
            let h = dirichlet_entropy(&a).unwrap();
            assert!(h < prev, "c={c}");
            prev = h;
        }
    }

    #[test]
    fn entropy_rejects_non_positive() {
        assert!(dirichlet_entropy(&[1.0, 0.0, 1.0]).is_err());
        assert!(dirichlet_entropy(&[1.0, -2.0]).is_err());
    }

    #[test]
    fn log_likelihood_uniform_alpha() {
        let samples = sample_dirichlet_raw(&[0.7, 1.5, 2.0, 1.0, 3.0, 0.4, 1.0], 25, 3);
        let ll = dirichlet_log_likelihood(&[1.0; 7], &samples).unwrap();
        assert!((ll - 25.0 * 720f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn log_likelihood_requires_positive_entries() {
        let s = vec![vec![0.0, 0.5, 0.5]];
        assert!(dirichlet_log_likelihood(&[1.0, 1.0, 1.0], &s).is_err());
    }

    #[test]
    fn likelihood_increases_with_precision_at_the_mean() {
        let mean = [0.1, 0.05, 0.05, 0.2, 0.4, 0.1, 0.1];
        let mut prev = f64::NEG_INFINITY;
        for a0 in [1.0, 10.0, 100.0, 1000.0] {
            let alpha: Vec<f64> = mean.iter().map(|m| m * a0).collect();
            let ll = dirichlet_log_likelihood(&alpha, &[mean]).unwrap();
            assert!(ll > prev);
            prev = ll;
        }
    }

    #[test]
    fn mle_recovers_known_alpha() {
        let truth = [2.0, 1.0, 1.0, 1.0, 5.0, 1.0, 1.0];
        let samples = sample_dirichlet_raw(&truth, 5000, 11);
        let fit = dirichlet_mle(&samples, &MleConfig::default()).unwrap();
        assert!(fit.converged);
        for (a, t) in fit.alpha.iter().zip(truth) {
            assert!((a - t).abs() / t < 0.05, "{a} vs {t}");
        }
    }

    #[test]
    fn mle_uniform_samples_are_capped() {
        let samples = vec![[1.0 / 7.0; 7]; 60];
        let fit = dirichlet_mle(&samples, &MleConfig::default()).unwrap();
        assert!(!fit.converged);
        let a0 = fit.alpha[0];
        assert!(fit.alpha.iter().all(|a| (a - a0).abs() <= 1e-8 * a0));
        assert!((fit.alpha0 - ALPHA0_CAP).abs() < 1e-3);
    }

    #[test]
    fn mle_needs_two_samples() {
        let samples = vec![[1.0 / 7.0; 7]];
        assert!(matches!(
            dirichlet_mle(&samples, &MleConfig::default()),
            Err(StatsError::InsufficientData { .. })
        ));
    }

    #[test]
    fn unconverged_fit_is_flagged() {
        let samples = sample_dirichlet_raw(&[3.0, 1.0, 2.0], 200, 5);
        let cfg = MleConfig { max_iter: 1, ..MleConfig::default() };
        let fit = dirichlet_mle(&samples, &cfg).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 1);
    }

    #[test]
    fn mle_permutation_equivariance() {
        let samples = sample_dirichlet_raw(&[2.0, 1.0, 0.5, 1.0, 5.0, 1.5, 1.0], 800, 2);
        let perm = [4, 0, 6, 2, 1, 5, 3];
        let permuted: Vec<Vec<f64>> = samples
            .iter()
            .map(|s| perm.iter().map(|&p| s[p]).collect())
            .collect();
        let cfg = MleConfig::default();
        let a = dirichlet_mle(&samples, &cfg).unwrap();
        let b = dirichlet_mle(&permuted, &cfg).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert!((b.alpha[i] - a.alpha[p]).abs() <= 1e-8 * a.alpha[p]);
        }
    }

    #[test]
    fn fitted_mean_matches_sample_mean() {
        let samples = sample_dirichlet_raw(&[4.0, 2.0, 3.0, 6.0, 10.0, 2.0, 3.0], 3000, 8);
        let cfg = MleConfig::default();
        let fit = dirichlet_mle(&samples, &cfg).unwrap();
        let st = SuffStats::from_samples(&samples, cfg.epsilon).unwrap();
        for (m, s) in fit.mean().iter().zip(&st.sum_p) {
            let sample_mean = s / st.n as f64;
            assert!((m - sample_mean).abs() / sample_mean < 0.02);
        }
    }

    #[test]
    fn merged_stats_equal_pooled_stats() {
        let a = sample_dirichlet_raw(&[1.0, 2.0, 3.0], 40, 1);
        let b = sample_dirichlet_raw(&[1.0, 2.0, 3.0], 30, 2);
        let mut sa = SuffStats::from_samples(&a, 1e-6).unwrap();
        sa.merge(&SuffStats::from_samples(&b, 1e-6).unwrap());
        let all: Vec<_> = a.into_iter().chain(b).collect();
        let pooled = SuffStats::from_samples(&all, 1e-6).unwrap();
        assert_eq!(sa.n, pooled.n);
        for j in 0..3 {
            assert!((sa.sum_log[j] - pooled.sum_log[j]).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn entropy_permutation_invariant(alpha in proptest::collection::vec(0.05f64..50.0, 7), rot in 0usize..7) {
            let mut rotated = alpha.clone();
            rotated.rotate_left(rot);
            let a = dirichlet_entropy(&alpha).unwrap();
            let b = dirichlet_entropy(&rotated).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn log_likelihood_permutation_invariant(seed in 0u64..1000, rot in 1usize..7) {
            let alpha = [0.5, 1.0, 2.0, 3.0, 0.8, 1.2, 4.0];
            let samples = sample_dirichlet_raw(&alpha, 20, seed);
            let rot_s: Vec<Vec<f64>> = samples.iter().map(|s| { let mut v = s.clone(); v.rotate_left(rot); v }).collect();
            let mut rot_a = alpha.to_vec();
            rot_a.rotate_left(rot);
            let smooth_a: Vec<Vec<f64>> = samples.iter().map(|s| smooth(s, 1e-6)).collect();
            let smooth_b: Vec<Vec<f64>> = rot_s.iter().map(|s| smooth(s, 1e-6)).collect();
            let a = dirichlet_log_likelihood(&alpha, &smooth_a).unwrap();
            let b = dirichlet_log_likelihood(&rot_a, &smooth_b).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }
}
