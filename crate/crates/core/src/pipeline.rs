//! Teacher–student staging and a planted-score simulation of the
//! pseudo-label loop.
//!
//! The simulator stands in for a detector: every round it draws teacher
//! confidences per pyramid level from known positive and negative
//! Gaussians, filters them with MPF or CPF, and scores the selection
//! against the planted labels.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::filtering::{
    cpf_filter, mpf_filter, select_pseudo_labels, Candidate, FilterConfig, Level, LevelScores, LevelThreshold,
    ThresholdSource,
};
use crate::rng::SeededRng;

pub const DEFAULT_EMA_MOMENTUM: f64 = 0.999;
pub const DEFAULT_BURN_IN_ITERS: u64 = 12_800;

/// Simulated scores are clamped into this closed range so they stay
/// strictly inside (0, 1).
const SCORE_CLAMP: f64 = 1e-6;

/// Flat model parameters shared between student and teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &ParamVector) -> Result<f64> {
        check_dims(self, other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt())
    }
}

fn check_dims(a: &ParamVector, b: &ParamVector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "parameter dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `momentum · teacher + (1 − momentum) · student`, componentwise.
pub fn ema_update(teacher: &ParamVector, student: &ParamVector, momentum: f64) -> Result<ParamVector> {
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::invalid(format!("momentum {momentum} outside [0, 1]")));
    }
    check_dims(teacher, student)?;
    Ok(ParamVector::new(
        teacher
            .values
            .iter()
            .zip(&student.values)
            .map(|(t, s)| momentum * t + (1.0 - momentum) * s)
            .collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    BurnIn,
    SelfTraining,
}

/// Training stage clock. The stage is derived from the iteration count, so
/// it can never disagree with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageState {
    pub iteration: u64,
    pub burn_in_iters: u64,
}

impl StageState {
    pub fn new(burn_in_iters: u64) -> Self {
        Self {
            iteration: 0,
            burn_in_iters,
        }
    }

    pub fn stage(&self) -> Stage {
        if self.iteration < self.burn_in_iters {
            Stage::BurnIn
        } else {
            Stage::SelfTraining
        }
    }

    pub fn advance(self) -> Self {
        advance_stage(self)
    }
}

impl Default for StageState {
    fn default() -> Self {
        Self::new(DEFAULT_BURN_IN_ITERS)
    }
}

pub fn advance_stage(state: StageState) -> StageState {
    StageState {
        iteration: state.iteration.saturating_add(1),
        ..state
    }
}

/// Score generator of one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelParams {
    pub n_pos: usize,
    pub n_neg: usize,
    pub mu_p: f64,
    pub mu_n: f64,
    pub sigma: f64,
    /// Per-round shift that pushes the means apart.
    #[serde(default)]
    pub drift: f64,
}

impl LevelParams {
    fn validate(&self, level: Level) -> Result<()> {
        let ok = self.mu_p.is_finite()
            && self.mu_n.is_finite()
            && self.drift.is_finite()
            && self.sigma.is_finite()
            && self.sigma > 0.0;
        if !ok {
            return Err(Error::invalid(format!(
                "level {level}: means and drift must be finite and sigma positive"
            )));
        }
        Ok(())
    }

    /// Component means at a zero-based round.
    pub fn means_at(&self, round: usize) -> (f64, f64) {
        let shift = self.drift * round as f64;
        (self.mu_p + shift, self.mu_n - shift)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    rounds: usize,
    seed: Option<u64>,
    #[serde(default)]
    levels: BTreeMap<String, LevelParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub rounds: usize,
    /// `None` leaves the choice to the caller.
    pub seed: Option<u64>,
    /// Sorted by level, no duplicates.
    pub levels: Vec<(Level, LevelParams)>,
}

impl SimScenario {
    pub fn new(rounds: usize, seed: Option<u64>, mut levels: Vec<(Level, LevelParams)>) -> Result<Self> {
        levels.sort_by_key(|(l, _)| *l);
        if let Some(w) = levels.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid(format!("level {} given twice", w[0].0)));
        }
        let s = Self { rounds, seed, levels };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::invalid("scenario needs at least one round"));
        }
        for (level, p) in &self.levels {
            p.validate(*level)?;
        }
        if self.levels.iter().all(|(_, p)| p.n_pos == 0) {
            return Err(Error::invalid("scenario plants no positives"));
        }
        Ok(())
    }

    /// Parses the TOML scenario format:
    ///
    /// ```toml
    /// rounds = 3
    /// seed = 7            # optional
    ///
    /// [levels.P3]
    /// n_pos = 100
    /// n_neg = 300
    /// mu_p = 0.30
    /// mu_n = 0.05
    /// sigma = 0.035
    /// drift = 0.0         # optional
    /// ```
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                line,
                message: e.message().to_string(),
            }
        })?;
        let levels = raw
            .levels
            .into_iter()
            .map(|(k, v)| Ok((k.parse::<Level>()?, v)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(raw.rounds, raw.seed, levels)
    }

    /// Level-shifted mixtures: each level's boundary sits 0.2 above the
    /// previous one, so one pooled threshold cannot serve them all.
    pub fn shifted_levels(rounds: usize, seed: Option<u64>) -> Self {
        let level = |mu_n: f64, mu_p: f64| LevelParams {
            n_pos: 100,
            n_neg: 300,
            mu_p,
            mu_n,
            sigma: 0.035,
            drift: 0.0,
        };
        Self::new(
            rounds,
            seed,
            vec![
                (Level::P3, level(0.05, 0.30)),
                (Level::P4, level(0.25, 0.50)),
                (Level::P5, level(0.45, 0.70)),
                (Level::P6, level(0.65, 0.90)),
            ],
        )
        .expect("built-in scenario is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FilterMode {
    Mpf,
    Cpf,
}

impl FilterMode {
    pub fn name(&self) -> &'static str {
        match self {
            FilterMode::Mpf => "mpf",
            FilterMode::Cpf => "cpf",
        }
    }
}

/// Selection quality counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub true_pos: usize,
    pub selected: usize,
    pub planted_pos: usize,
}

impl Confusion {
    /// Selecting nothing is vacuously precise.
    pub fn precision(&self) -> f64 {
        if self.selected == 0 {
            1.0
        } else {
            self.true_pos as f64 / self.selected as f64
        }
    }

    /// With nothing planted there is nothing to miss.
    pub fn recall(&self) -> f64 {
        if self.planted_pos == 0 {
            1.0
        } else {
            self.true_pos as f64 / self.planted_pos as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, o: &Confusion) {
        self.true_pos += o.true_pos;
        self.selected += o.selected;
        self.planted_pos += o.planted_pos;
    }
}

/// One report line. `level == None` is the all-level aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRow {
    pub round: usize,
    pub level: Option<Level>,
    pub tau: Option<f64>,
    pub counts: Confusion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub mode: FilterMode,
    pub seed: u64,
    pub rows: Vec<RoundRow>,
}

impl SimReport {
    /// Mean over rounds of the all-level F1.
    pub fn mean_f1(&self) -> f64 {
        let f: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.level.is_none())
            .map(|r| r.counts.f1())
            .collect();
        f.iter().sum::<f64>() / f.len().max(1) as f64
    }

    pub const CSV_HEADER: &'static str = "round,level,tau,precision,recall,f1,n_selected";

    pub fn write_csv_rows(&self, mut out: impl Write, prefix: &str) -> Result<()> {
        for r in &self.rows {
            let level = r.level.map_or("all", |l| l.name());
            let tau = r.tau.map_or(String::new(), |t| format!("{t:.6}"));
            writeln!(
                out,
                "{prefix}{},{level},{tau},{:.6},{:.6},{:.6},{}",
                r.round,
                r.counts.precision(),
                r.counts.recall(),
                r.counts.f1(),
                r.counts.selected
            )?;
        }
        Ok(())
    }
}

fn draw(rng: &mut SeededRng, mean: f64, sigma: f64) -> f64 {
    rng.normal(mean, sigma).clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
}

/// Runs every round of `scenario` with the given seed.
pub fn run_simulation(scenario: &SimScenario, mode: FilterMode, seed: u64, config: &FilterConfig) -> Result<SimReport> {
    scenario.validate()?;
    let mut rng = SeededRng::new(seed);
    let mut rows = Vec::new();

    for round in 0..scenario.rounds {
        let mut per_level = Vec::with_capacity(scenario.levels.len());
        let mut candidates = Vec::new();
        for (level, p) in &scenario.levels {
            let (mu_p, mu_n) = p.means_at(round);
            let mut scores = Vec::with_capacity(p.n_pos + p.n_neg);
            for _ in 0..p.n_neg {
                let s = draw(&mut rng, mu_n, p.sigma);
                scores.push(s);
                candidates.push(Candidate {
                    level: *level,
                    score: s,
                    payload: false,
                });
            }
            for _ in 0..p.n_pos {
                let s = draw(&mut rng, mu_p, p.sigma);
                scores.push(s);
                candidates.push(Candidate {
                    level: *level,
                    score: s,
                    payload: true,
                });
            }
            per_level.push(LevelScores::new(*level, scores)?);
        }

        let thresholds: Vec<LevelThreshold> = match mode {
            FilterMode::Mpf => mpf_filter(&per_level, config)?,
            FilterMode::Cpf => {
                let pooled = cpf_filter(&per_level, config)?;
                scenario
                    .levels
                    .iter()
                    .map(|(level, _)| LevelThreshold {
                        level: *level,
                        tau: pooled.threshold.tau,
                        source: ThresholdSource::Pooled,
                        fallback: pooled.threshold.fallback,
                        fit: pooled.fit.clone(),
                    })
                    .collect()
            }
        };

        let mut counts: BTreeMap<Level, Confusion> = scenario
            .levels
            .iter()
            .map(|(l, p)| {
                (
                    *l,
                    Confusion {
                        planted_pos: p.n_pos,
                        ..Confusion::default()
                    },
                )
            })
            .collect();
        for c in select_pseudo_labels(candidates, &thresholds)? {
            let entry = counts.get_mut(&c.level).expect("level from scenario");
            entry.selected += 1;
            entry.true_pos += usize::from(c.payload);
        }

        let mut all = Confusion::default();
        for t in &thresholds {
            let c = counts[&t.level];
            all.add(&c);
            rows.push(RoundRow {
                round,
                level: Some(t.level),
                tau: Some(t.tau),
                counts: c,
            });
        }
        rows.push(RoundRow {
            round,
            level: None,
            tau: None,
            counts: all,
        });
    }

    Ok(SimReport { mode, seed, rows })
}

/// Head-to-head MPF vs CPF over several seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSummary {
    pub mpf: Vec<SimReport>,
    pub cpf: Vec<SimReport>,
    pub mean_mpf_f1: f64,
    pub mean_cpf_f1: f64,
    pub mpf_wins: usize,
    pub cpf_wins: usize,
    pub ties: usize,
    /// One-sided sign-test p-value for "MPF beats CPF".
    pub p_value: f64,
}

pub fn paired_comparison(scenario: &SimScenario, seeds: &[u64], config: &FilterConfig) -> Result<PairedSummary> {
    if seeds.is_empty() {
        return Err(Error::invalid("paired comparison needs at least one seed"));
    }
    let mut mpf = Vec::with_capacity(seeds.len());
    let mut cpf = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        mpf.push(run_simulation(scenario, FilterMode::Mpf, seed, config)?);
        cpf.push(run_simulation(scenario, FilterMode::Cpf, seed, config)?);
    }
    let (mut mpf_wins, mut cpf_wins, mut ties) = (0, 0, 0);
    for (m, c) in mpf.iter().zip(&cpf) {
        let (fm, fc) = (m.mean_f1(), c.mean_f1());
        if fm > fc {
            mpf_wins += 1;
        } else if fc > fm {
            cpf_wins += 1;
        } else {
            ties += 1;
        }
    }
    let n = seeds.len() as f64;
    Ok(PairedSummary {
        mean_mpf_f1: mpf.iter().map(SimReport::mean_f1).sum::<f64>() / n,
        mean_cpf_f1: cpf.iter().map(SimReport::mean_f1).sum::<f64>() / n,
        p_value: sign_test_p_value(mpf_wins, mpf_wins + cpf_wins),
        mpf,
        cpf,
        mpf_wins,
        cpf_wins,
        ties,
    })
}

/// `P(X ≥ wins)` for `X ~ Binomial(trials, 1/2)`. Ties are dropped before
/// calling this.
pub fn sign_test_p_value(wins: usize, trials: usize) -> f64 {
    if wins == 0 || trials == 0 {
        return 1.0;
    }
    let wins = wins.min(trials);
    // ln C(trials, k) built incrementally from k = 0.
    let ln_half = trials as f64 * 0.5f64.ln();
    let mut ln_c = 0.0;
    let mut total = 0.0;
    for k in 0..=trials {
        if k > 0 {
            ln_c += ((trials - k + 1) as f64).ln() - (k as f64).ln();
        }
        if k >= wins {
            total += (ln_c + ln_half).exp();
        }
    }
    total.min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_examples() {
        let t = ParamVector::new(vec![1.0, 2.0]);
        let s = ParamVector::new(vec![0.0, 4.0]);
        assert_eq!(ema_update(&t, &s, 0.0).unwrap(), s);
        assert_eq!(ema_update(&t, &s, 1.0).unwrap(), t);
        assert_eq!(ema_update(&t, &s, 0.5).unwrap().values(), &[0.5, 3.0]);
        assert!(ema_update(&t, &ParamVector::new(vec![1.0]), 0.5).is_err());
        assert!(ema_update(&t, &s, 1.5).is_err());
    }

    #[test]
    fn stage_boundary() {
        let fresh = StageState::default();
        assert_eq!(fresh.burn_in_iters, 12_800);
        assert_eq!(fresh.stage(), Stage::BurnIn);
        let last = StageState {
            iteration: 12_799,
            burn_in_iters: 12_800,
        };
        assert_eq!(last.stage(), Stage::BurnIn);
        assert_eq!(last.advance().stage(), Stage::SelfTraining);
        let deep = StageState {
            iteration: 50_000,
            burn_in_iters: 12_800,
        };
        assert_eq!(deep.advance().stage(), Stage::SelfTraining);
    }

    #[test]
    fn scenario_parsing() {
        let text = "rounds = 2\nseed = 9\n[levels.P4]\nn_pos = 10\nn_neg = 20\nmu_p = 0.8\nmu_n = 0.2\nsigma = 0.05\n";
        let s = SimScenario::from_toml(text).unwrap();
        assert_eq!(s.rounds, 2);
        assert_eq!(s.seed, Some(9));
        assert_eq!(s.levels[0].0, Level::P4);
        assert_eq!(s.levels[0].1.drift, 0.0);

        let zero = text.replace("rounds = 2", "rounds = 0");
        assert!(matches!(SimScenario::from_toml(&zero), Err(Error::InvalidInput(_))));
        let no_pos = text.replace("n_pos = 10", "n_pos = 0");
        assert!(SimScenario::from_toml(&no_pos).is_err());
        let bad_key = format!("{text}bogus = 1\n");
        assert!(matches!(SimScenario::from_toml(&bad_key), Err(Error::Parse { .. })));
        let bad_level = text.replace("P4", "P9");
        assert!(SimScenario::from_toml(&bad_level).is_err());
    }

    #[test]
    fn drift_separates_means() {
        let p = LevelParams {
            n_pos: 1,
            n_neg: 1,
            mu_p: 0.6,
            mu_n: 0.4,
            sigma: 0.1,
            drift: 0.05,
        };
        let (a, b) = p.means_at(2);
        assert!((a - 0.7).abs() < 1e-12 && (b - 0.3).abs() < 1e-12);
    }

    #[test]
    fn well_separated_mpf_is_accurate() {
        let level = LevelParams {
            n_pos: 200,
            n_neg: 200,
            mu_p: 0.8,
            mu_n: 0.2,
            sigma: 0.05,
            drift: 0.0,
        };
        let s = SimScenario::new(4, None, vec![(Level::P3, level), (Level::P5, level)]).unwrap();
        let r = run_simulation(&s, FilterMode::Mpf, 3, &FilterConfig::default()).unwrap();
        for row in r.rows.iter().filter(|r| r.level.is_none()) {
            assert!(row.counts.f1() >= 0.95, "round {} f1 {}", row.round, row.counts.f1());
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let s = SimScenario::shifted_levels(2, None);
        let cfg = FilterConfig::default();
        let a = run_simulation(&s, FilterMode::Cpf, 11, &cfg).unwrap();
        let b = run_simulation(&s, FilterMode::Cpf, 11, &cfg).unwrap();
        assert_eq!(a, b);
        let c = run_simulation(&s, FilterMode::Cpf, 12, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sign_test_values() {
        assert!((sign_test_p_value(1, 1) - 0.5).abs() < 1e-15);
        assert!((sign_test_p_value(10, 10) - 2f64.powi(-10)).abs() < 1e-18);
        // P(X ≥ 2 | n = 3) = 4/8
        assert!((sign_test_p_value(2, 3) - 0.5).abs() < 1e-12);
        assert_eq!(sign_test_p_value(0, 5), 1.0);
    }

    #[test]
    fn confusion_conventions() {
        let none = Confusion {
            true_pos: 0,
            selected: 0,
            planted_pos: 5,
        };
        assert_eq!(none.precision(), 1.0);
        assert_eq!(none.recall(), 0.0);
        assert_eq!(none.f1(), 0.0);
        let empty = Confusion::default();
        assert_eq!(empty.f1(), 1.0);
    }
}
