//! Pseudo-label filtering with two-component Gaussian mixtures.
//!
//! Teacher confidences at each feature-pyramid level are modeled as a
//! mixture of a "positive" and a "negative" Gaussian fitted by EM. The
//! selection threshold of a level is where the posterior probability of the
//! positive component reaches one half. MPF fits one mixture per level; CPF
//! pools every level into a single fit.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Feature-pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    P3,
    P4,
    P5,
    P6,
    P7,
}

impl Level {
    pub const ALL: [Level; 5] = [Level::P3, Level::P4, Level::P5, Level::P6, Level::P7];

    pub fn name(&self) -> &'static str {
        match self {
            Level::P3 => "P3",
            Level::P4 => "P4",
            Level::P5 => "P5",
            Level::P6 => "P6",
            Level::P7 => "P7",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "P3" | "3" => Ok(Level::P3),
            "P4" | "4" => Ok(Level::P4),
            "P5" | "5" => Ok(Level::P5),
            "P6" | "6" => Ok(Level::P6),
            "P7" | "7" => Ok(Level::P7),
            other => Err(Error::invalid(format!("unknown pyramid level '{other}'"))),
        }
    }
}

fn check_scores(scores: &[f64]) -> Result<()> {
    match scores.iter().find(|&&s| !(s > 0.0 && s < 1.0)) {
        Some(bad) => Err(Error::invalid(format!("score {bad} outside (0, 1)"))),
        None => Ok(()),
    }
}

/// Teacher confidences produced at one pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelScores {
    pub level: Level,
    pub scores: Vec<f64>,
}

impl LevelScores {
    pub fn new(level: Level, scores: Vec<f64>) -> Result<Self> {
        check_scores(&scores)?;
        Ok(Self { level, scores })
    }
}

/// How a fitted mixture becomes a selection threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdRule {
    /// Where the positive posterior crosses 0.5 below the positive mean.
    #[default]
    PosteriorBoundary,
    /// The positive mean itself (the argmax of the positive density),
    /// clamped to the observed range.
    PositiveMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    /// Stop once the log-likelihood changes by less than this and no mean
    /// or weight moves by more than `parameter_tolerance`.
    pub tolerance: f64,
    pub parameter_tolerance: f64,
    pub max_iterations: usize,
    pub variance_floor: f64,
    /// Levels with fewer scores inherit the pooled threshold.
    pub min_level_scores: usize,
    pub rule: ThresholdRule,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            parameter_tolerance: 1e-6,
            max_iterations: 300,
            variance_floor: 1e-6,
            min_level_scores: 20,
            rule: ThresholdRule::PosteriorBoundary,
        }
    }
}

/// Fitted two-component mixture. The positive component always has the
/// larger mean.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub w_p: f64,
    pub w_n: f64,
    pub mu_p: f64,
    pub mu_n: f64,
    pub var_p: f64,
    pub var_n: f64,
    /// Number of M-steps performed.
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood of the initial parameters and after every M-step.
    pub log_likelihood: Vec<f64>,
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (std::f64::consts::TAU * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl GmmFit {
    /// Posterior probability that `c` came from the positive component.
    pub fn posterior_positive(&self, c: f64) -> f64 {
        let lp = self.w_p.ln() + log_normal(c, self.mu_p, self.var_p);
        let ln = self.w_n.ln() + log_normal(c, self.mu_n, self.var_n);
        let total = log_sum_exp(lp, ln);
        if total == f64::NEG_INFINITY {
            return 0.5;
        }
        (lp - total).exp()
    }

    /// Mixture density at `c`.
    pub fn density(&self, c: f64) -> f64 {
        self.w_p * log_normal(c, self.mu_p, self.var_p).exp() + self.w_n * log_normal(c, self.mu_n, self.var_n).exp()
    }
}

fn distinct_count_at_least(scores: &[f64], k: usize) -> bool {
    let mut seen: Vec<f64> = Vec::with_capacity(k);
    for &s in scores {
        if !seen.contains(&s) {
            seen.push(s);
            if seen.len() >= k {
                return true;
            }
        }
    }
    false
}

/// Fits the two-component mixture by EM.
///
/// Initialization is data-determined: the positive mean starts at the
/// largest score, the negative mean at the smallest, both variances at 1
/// and both weights at 0.5. There is no randomness.
pub fn fit_gmm(scores: &[f64], config: &FilterConfig) -> Result<GmmFit> {
    check_scores(scores)?;
    if !distinct_count_at_least(scores, 2) {
        return Err(Error::degenerate(format!(
            "mixture fit needs at least two distinct scores (got {} scores)",
            scores.len()
        )));
    }
    let n = scores.len() as f64;
    let floor = config.variance_floor;
    let mut p = GmmFit {
        w_p: 0.5,
        w_n: 0.5,
        mu_p: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mu_n: scores.iter().copied().fold(f64::INFINITY, f64::min),
        var_p: 1.0,
        var_n: 1.0,
        iterations: 0,
        converged: false,
        log_likelihood: Vec::new(),
    };
    let mut resp = vec![0.0; scores.len()];
    let mut prev = (f64::NAN, f64::NAN, f64::NAN);

    loop {
        // E-step: responsibilities and the log-likelihood of the current
        // parameters.
        let (log_wp, log_wn) = (p.w_p.ln(), p.w_n.ln());
        let mut ll = 0.0;
        for (r, &c) in resp.iter_mut().zip(scores) {
            let lp = log_wp + log_normal(c, p.mu_p, p.var_p);
            let ln = log_wn + log_normal(c, p.mu_n, p.var_n);
            let total = log_sum_exp(lp, ln);
            ll += total;
            *r = (lp - total).exp();
        }
        if !ll.is_finite() {
            return Err(Error::numerical("mixture log-likelihood is not finite"));
        }
        // A flat likelihood alone is not enough: started from unit
        // variances, both components sit near a symmetric saddle where the
        // likelihood gain is second order in their still-small separation.
        let settled = (p.mu_p - prev.0).abs() < config.parameter_tolerance
            && (p.mu_n - prev.1).abs() < config.parameter_tolerance
            && (p.w_p - prev.2).abs() < config.parameter_tolerance;
        let done = settled
            && p.log_likelihood
                .last()
                .is_some_and(|&prev| (ll - prev).abs() < config.tolerance);
        p.log_likelihood.push(ll);
        prev = (p.mu_p, p.mu_n, p.w_p);
        if done {
            p.converged = true;
            break;
        }
        if p.iterations >= config.max_iterations {
            break;
        }

        // M-step.
        let n_p: f64 = resp.iter().sum();
        let n_n = n - n_p;
        if n_p > 0.0 {
            p.mu_p = resp.iter().zip(scores).map(|(r, c)| r * c).sum::<f64>() / n_p;
            p.var_p = (resp
                .iter()
                .zip(scores)
                .map(|(r, c)| r * (c - p.mu_p).powi(2))
                .sum::<f64>()
                / n_p)
                .max(floor);
        }
        if n_n > 0.0 {
            p.mu_n = resp.iter().zip(scores).map(|(r, c)| (1.0 - r) * c).sum::<f64>() / n_n;
            p.var_n = (resp
                .iter()
                .zip(scores)
                .map(|(r, c)| (1.0 - r) * (c - p.mu_n).powi(2))
                .sum::<f64>()
                / n_n)
                .max(floor);
        }
        p.w_p = n_p / n;
        p.w_n = 1.0 - p.w_p;
        p.iterations += 1;
    }

    if p.mu_p < p.mu_n {
        std::mem::swap(&mut p.mu_p, &mut p.mu_n);
        std::mem::swap(&mut p.var_p, &mut p.var_n);
        std::mem::swap(&mut p.w_p, &mut p.w_n);
    }
    Ok(p)
}

/// A selection threshold and whether it came from the fallback path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold {
    pub tau: f64,
    /// The positive posterior never reaches 0.5 near the positive mean;
    /// `tau` is the largest score.
    pub fallback: bool,
}

/// Real roots of `a x² + b x + c`, computed without cancellation.
fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a.abs() <= 1e-12 * b.abs().max(f64::MIN_POSITIVE) {
        return if b != 0.0 { vec![-c / b] } else { vec![] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return vec![0.0];
    }
    vec![q / a, c / q]
}

/// Left end of the interval around `m` on which the positive posterior is
/// at least one half, searched down to `lo`.
fn boundary_below(fit: &GmmFit, lo: f64, m: f64) -> f64 {
    // Log posterior odds as a quadratic A c² + B c + C.
    let (vp, vn) = (fit.var_p, fit.var_n);
    let a = 0.5 / vn - 0.5 / vp;
    let b = fit.mu_p / vp - fit.mu_n / vn;
    let c =
        (fit.w_p / fit.w_n).ln() - 0.5 * (vp / vn).ln() - fit.mu_p.powi(2) / (2.0 * vp) + fit.mu_n.powi(2) / (2.0 * vn);
    quadratic_roots(a, b, c)
        .into_iter()
        .filter(|r| r.is_finite() && *r >= lo && *r < m)
        .fold(lo, f64::max)
}

/// Turns a fitted mixture into a selection threshold within the observed
/// score range.
///
/// With [`ThresholdRule::PosteriorBoundary`], `tau` is where the positive
/// posterior crosses one half on the way up to the positive mean. A score
/// is selected iff it lies at or above that crossing, which for observed
/// scores is the same set as "posterior ≥ 0.5" whenever the posterior is
/// monotone between the two means. The crossing below the positive mean is
/// used, so a wide positive component that also dominates the far left
/// tail does not drag `tau` down to the minimum.
pub fn threshold_from_fit(fit: &GmmFit, scores: &[f64], rule: ThresholdRule) -> Result<Threshold> {
    if scores.is_empty() {
        return Err(Error::invalid("threshold needs at least one score"));
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let m = fit.mu_p.clamp(lo, hi);
    let fallback = Threshold {
        tau: hi,
        fallback: true,
    };
    let tau = match rule {
        ThresholdRule::PositiveMode => m,
        ThresholdRule::PosteriorBoundary => {
            if fit.w_p <= 0.0 || fit.posterior_positive(m) < 0.5 {
                return Ok(fallback);
            }
            if fit.w_n <= 0.0 {
                lo
            } else {
                boundary_below(fit, lo, m)
            }
        }
    };
    Ok(Threshold {
        tau: tau.clamp(lo, hi),
        fallback: false,
    })
}

/// Result of the pooled (class-agnostic) filter.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledThreshold {
    pub fit: GmmFit,
    pub threshold: Threshold,
}

pub fn cpf_filter(per_level: &[LevelScores], config: &FilterConfig) -> Result<PooledThreshold> {
    let pooled: Vec<f64> = per_level.iter().flat_map(|l| l.scores.iter().copied()).collect();
    let fit = fit_gmm(&pooled, config)?;
    let threshold = threshold_from_fit(&fit, &pooled, config.rule)?;
    Ok(PooledThreshold { fit, threshold })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdSource {
    /// Fitted on the level's own scores.
    Level,
    /// Inherited from the pooled fit because the level was degenerate.
    Pooled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelThreshold {
    pub level: Level,
    pub tau: f64,
    pub source: ThresholdSource,
    pub fallback: bool,
    /// The fit the threshold came from.
    pub fit: GmmFit,
}

/// One threshold per level, in level order.
///
/// A level with fewer than `min_level_scores` scores or fewer than two
/// distinct values inherits the pooled threshold.
pub fn mpf_filter(per_level: &[LevelScores], config: &FilterConfig) -> Result<Vec<LevelThreshold>> {
    let mut levels: Vec<&LevelScores> = per_level.iter().collect();
    levels.sort_by_key(|l| l.level);
    if let Some(pair) = levels.windows(2).find(|p| p[0].level == p[1].level) {
        return Err(Error::invalid(format!("level {} given twice", pair[0].level)));
    }
    for l in &levels {
        check_scores(&l.scores)?;
    }

    let usable = |l: &LevelScores| l.scores.len() >= config.min_level_scores && distinct_count_at_least(&l.scores, 2);
    let pooled = if levels.iter().all(|l| usable(l)) {
        None
    } else {
        Some(cpf_filter(per_level, config)?)
    };

    levels
        .into_iter()
        .map(|l| {
            if usable(l) {
                let fit = fit_gmm(&l.scores, config)?;
                let t = threshold_from_fit(&fit, &l.scores, config.rule)?;
                Ok(LevelThreshold {
                    level: l.level,
                    tau: t.tau,
                    source: ThresholdSource::Level,
                    fallback: t.fallback,
                    fit,
                })
            } else {
                let pooled = pooled.as_ref().expect("pooled fit computed for degenerate levels");
                Ok(LevelThreshold {
                    level: l.level,
                    tau: pooled.threshold.tau,
                    source: ThresholdSource::Pooled,
                    fallback: pooled.threshold.fallback,
                    fit: pooled.fit.clone(),
                })
            }
        })
        .collect()
}

/// A teacher prediction eligible to become a pseudo-label.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<T> {
    pub level: Level,
    pub score: f64,
    pub payload: T,
}

/// Keeps candidates scoring at least their level's threshold, in order.
pub fn select_pseudo_labels<T>(
    candidates: Vec<Candidate<T>>,
    thresholds: &[LevelThreshold],
) -> Result<Vec<Candidate<T>>> {
    let tau_of = |level: Level| thresholds.iter().find(|t| t.level == level).map(|t| t.tau);
    let mut kept = Vec::new();
    for c in candidates {
        let tau = tau_of(c.level).ok_or_else(|| Error::invalid(format!("no threshold for level {}", c.level)))?;
        if c.score >= tau {
            kept.push(c);
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn clip(x: f64) -> f64 {
        x.clamp(1e-6, 1.0 - 1e-6)
    }

    fn planted(seed: u64, n: usize, mu_n: f64, mu_p: f64, sigma: f64) -> Vec<f64> {
        let mut rng = SeededRng::new(seed);
        let mut v: Vec<f64> = (0..n).map(|_| clip(rng.normal(mu_n, sigma))).collect();
        v.extend((0..n).map(|_| clip(rng.normal(mu_p, sigma))));
        v
    }

    #[test]
    fn level_parsing() {
        assert_eq!("p5".parse::<Level>().unwrap(), Level::P5);
        assert_eq!("7".parse::<Level>().unwrap(), Level::P7);
        assert!("P8".parse::<Level>().is_err());
    }

    #[test]
    fn recovers_planted_mixture() {
        let scores = planted(1, 500, 0.15, 0.85, 0.05);
        let fit = fit_gmm(&scores, &FilterConfig::default()).unwrap();
        assert!((fit.mu_n - 0.15).abs() < 0.02 && (fit.mu_p - 0.85).abs() < 0.02);
        assert!((fit.w_p - 0.5).abs() < 0.05);
        assert!((fit.w_p + fit.w_n - 1.0).abs() < 1e-9);
        assert!(fit.converged);
        let t = threshold_from_fit(&fit, &scores, ThresholdRule::PosteriorBoundary).unwrap();
        assert!(t.tau > 0.3 && t.tau < 0.7, "{t:?}");
        let (n, half) = (scores.len(), scores.len() / 2);
        let correct = scores
            .iter()
            .enumerate()
            .filter(|(i, &s)| (s >= t.tau) == (*i >= half))
            .count();
        assert!(correct as f64 >= 0.99 * n as f64);
    }

    #[test]
    fn flat_likelihood_near_saddle_is_not_convergence() {
        // Balanced, narrow-range data: unit-variance starts leave EM crawling
        // away from the symmetric saddle with a likelihood that barely moves.
        let scores = planted(5, 200, 0.05, 0.35, 0.03);
        let short = fit_gmm(
            &scores,
            &FilterConfig {
                max_iterations: 50,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!short.converged);
        let long = fit_gmm(
            &scores,
            &FilterConfig {
                max_iterations: 5000,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(long.converged);
        assert!((long.mu_n - 0.05).abs() < 0.02 && (long.mu_p - 0.35).abs() < 0.02);
    }

    #[test]
    fn constant_scores_are_degenerate() {
        let err = fit_gmm(&[0.4; 30], &FilterConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
        assert!(fit_gmm(&[0.4, 1.2], &FilterConfig::default()).is_err());
    }

    #[test]
    fn single_cluster_stays_in_range() {
        let mut rng = SeededRng::new(4);
        let scores: Vec<f64> = (0..400).map(|_| clip(rng.normal(0.5, 0.05))).collect();
        let fit = fit_gmm(&scores, &FilterConfig::default()).unwrap();
        let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(fit.mu_n >= lo && fit.mu_p <= hi);
        assert!(fit.mu_p >= fit.mu_n);
    }

    #[test]
    fn pure_positive_fit_selects_everything() {
        let fit = GmmFit {
            w_p: 1.0,
            w_n: 0.0,
            mu_p: 0.8,
            mu_n: 0.2,
            var_p: 0.01,
            var_n: 0.01,
            iterations: 0,
            converged: true,
            log_likelihood: vec![],
        };
        let scores = [0.3, 0.9, 0.1, 0.6];
        let t = threshold_from_fit(&fit, &scores, ThresholdRule::PosteriorBoundary).unwrap();
        assert_eq!(t.tau, 0.1);
        assert!(!t.fallback);
    }

    #[test]
    fn symmetric_components_split_at_midpoint() {
        let fit = GmmFit {
            w_p: 0.5,
            w_n: 0.5,
            mu_p: 0.8,
            mu_n: 0.2,
            var_p: 0.01,
            var_n: 0.01,
            iterations: 0,
            converged: true,
            log_likelihood: vec![],
        };
        let scores: Vec<f64> = (1..1000).map(|i| i as f64 / 1000.0).collect();
        let t = threshold_from_fit(&fit, &scores, ThresholdRule::PosteriorBoundary).unwrap();
        assert!((t.tau - 0.5).abs() <= 0.02);
        assert!((t.tau - 0.5).abs() < 1e-9);
        let mode = threshold_from_fit(&fit, &scores, ThresholdRule::PositiveMode).unwrap();
        assert!((mode.tau - 0.8).abs() < 1e-12);
    }

    #[test]
    fn wide_positive_tail_does_not_pull_threshold_down() {
        let fit = GmmFit {
            w_p: 0.5,
            w_n: 0.5,
            mu_p: 0.8,
            mu_n: 0.3,
            var_p: 0.04,
            var_n: 0.0025,
            iterations: 0,
            converged: true,
            log_likelihood: vec![],
        };
        // The positive posterior is above 0.5 again at the far left.
        assert!(fit.posterior_positive(0.01) > 0.5);
        let scores = [0.01, 0.3, 0.45, 0.6, 0.9];
        let t = threshold_from_fit(&fit, &scores, ThresholdRule::PosteriorBoundary).unwrap();
        assert!(t.tau > 0.3 && t.tau < 0.6, "{t:?}");
        assert!((fit.posterior_positive(t.tau) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn unreachable_boundary_falls_back_to_max() {
        let fit = GmmFit {
            w_p: 1e-9,
            w_n: 1.0 - 1e-9,
            mu_p: 0.99,
            mu_n: 0.2,
            var_p: 1e-4,
            var_n: 0.5,
            iterations: 0,
            converged: true,
            log_likelihood: vec![],
        };
        let t = threshold_from_fit(&fit, &[0.1, 0.3, 0.5], ThresholdRule::PosteriorBoundary).unwrap();
        assert!(t.fallback);
        assert_eq!(t.tau, 0.5);
    }

    #[test]
    fn sparse_levels_inherit_pooled_threshold() {
        let big = LevelScores::new(Level::P3, planted(2, 200, 0.2, 0.8, 0.05)).unwrap();
        let tiny = LevelScores::new(Level::P6, vec![0.3, 0.9, 0.7]).unwrap();
        let empty = LevelScores::new(Level::P7, vec![]).unwrap();
        let cfg = FilterConfig::default();
        let out = mpf_filter(&[tiny.clone(), big.clone(), empty.clone()], &cfg).unwrap();
        assert_eq!(
            out.iter().map(|t| t.level).collect::<Vec<_>>(),
            vec![Level::P3, Level::P6, Level::P7]
        );
        let pooled = cpf_filter(&[tiny, big, empty], &cfg).unwrap();
        assert_eq!(out[0].source, ThresholdSource::Level);
        assert_eq!(out[1].source, ThresholdSource::Pooled);
        assert_eq!(out[1].tau, pooled.threshold.tau);
        assert_eq!(out[2].tau, pooled.threshold.tau);
    }

    #[test]
    fn all_degenerate_is_an_error() {
        let a = LevelScores::new(Level::P3, vec![0.5; 40]).unwrap();
        let b = LevelScores::new(Level::P4, vec![]).unwrap();
        let err = mpf_filter(&[a, b], &FilterConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn duplicate_levels_rejected() {
        let a = LevelScores::new(Level::P3, vec![0.1, 0.9]).unwrap();
        assert!(mpf_filter(&[a.clone(), a], &FilterConfig::default()).is_err());
    }

    #[test]
    fn selection_boundaries() {
        let fit = fit_gmm(&[0.1, 0.2, 0.8, 0.9], &FilterConfig::default()).unwrap();
        let th = vec![LevelThreshold {
            level: Level::P4,
            tau: 0.5,
            source: ThresholdSource::Level,
            fallback: false,
            fit,
        }];
        let cands = vec![
            Candidate {
                level: Level::P4,
                score: 0.2,
                payload: 'a',
            },
            Candidate {
                level: Level::P4,
                score: 0.5,
                payload: 'b',
            },
            Candidate {
                level: Level::P4,
                score: 0.7,
                payload: 'c',
            },
        ];
        let kept = select_pseudo_labels(cands, &th).unwrap();
        assert_eq!(kept.iter().map(|c| c.payload).collect::<String>(), "bc");

        let low = vec![Candidate {
            level: Level::P4,
            score: 0.1,
            payload: (),
        }];
        assert!(select_pseudo_labels(low, &th).unwrap().is_empty());

        let missing = vec![Candidate {
            level: Level::P5,
            score: 0.9,
            payload: (),
        }];
        assert!(select_pseudo_labels(missing, &th).is_err());
    }
}
