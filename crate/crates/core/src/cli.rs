//! `spwood` command-line interface.
//!
//! Exit codes: 0 success, 1 I/O or internal failure (including a failed
//! gradient check), 2 usage error, 3 invalid or unparsable input, 4
//! degenerate input.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataset::{self, AnnotationSet, SparseMethod, SparsifyConfig, WeakTarget};
use crate::error::{Error, Result};
use crate::filtering::{self, FilterConfig, Level, LevelScores, ThresholdRule};
use crate::geometry::{normalize_angle, OrientedBox, PointAnnotation};
use crate::layout::{self, pgm};
use crate::losses::{self, gradcheck, Augmentation, FocalParams, LossValueGrad, SampleKind};
use crate::pipeline::{self, FilterMode, SimReport, SimScenario};
use crate::rng::{SeededRng, DEFAULT_SEED};

/// Largest relative error accepted by `eval-loss --check-grad`.
pub const GRAD_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(
    name = "spwood",
    version,
    about = "Sparse partial weakly-supervised oriented detection toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split images into labeled/unlabeled and thin out labeled instances.
    Sparsify(SparsifyArgs),
    /// Fit per-level (or pooled) score mixtures and print thresholds.
    FitGmm(FitGmmArgs),
    /// Evaluate loss terms and optionally audit their gradients.
    EvalLoss(EvalLossArgs),
    /// Run the planted-score pseudo-label simulation.
    Simulate(SimulateArgs),
    /// Compare per-category counts of two annotation directories.
    Report(ReportArgs),
    /// Derive per-point masks and scale targets from an image.
    Watershed(WatershedArgs),
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Random seed. Falls back to $SPWOOD_SEED, then to the scenario's seed
    /// (simulate only), then to the built-in default.
    #[arg(long, env = "SPWOOD_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Single,
    Overall,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WeakArg {
    Rbox,
    Hbox,
    Point,
}

#[derive(Debug, Args)]
pub struct SparsifyArgs {
    /// Directory of DOTA annotation files (*.txt).
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Single)]
    pub method: MethodArg,
    /// Fraction of images that keep labels.
    #[arg(long, default_value_t = 1.0)]
    pub partial: f64,
    /// Fraction of instances kept within labeled images.
    #[arg(long, default_value_t = 0.1)]
    pub sparse: f64,
    /// Also write weakened labels of the kept instances to <out>/weak.
    #[arg(long, value_enum)]
    pub weak: Option<WeakArg>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GmmModeArg {
    Mpf,
    Cpf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RuleArg {
    /// Where the positive posterior crosses 0.5 below the positive mean.
    Boundary,
    /// The positive mean itself, clamped to the observed range.
    Mode,
}

#[derive(Debug, Args)]
pub struct FitGmmArgs {
    /// CSV of `level,score` rows; a `level,score` header and `#` comments
    /// are allowed.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = GmmModeArg::Mpf)]
    pub mode: GmmModeArg,
    #[arg(long, value_enum, default_value_t = RuleArg::Boundary)]
    pub rule: RuleArg,
    /// Levels with fewer scores inherit the pooled threshold.
    #[arg(long, default_value_t = 20)]
    pub min_level_scores: usize,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct EvalLossArgs {
    /// Loss entries, one per line (see README for the grammar).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Compare analytic gradients with central finite differences. Without
    /// --input, checks seeded random interior points of every loss.
    #[arg(long)]
    pub check_grad: bool,
    /// Random points per loss for the input-free gradient check.
    #[arg(long, default_value_t = 100)]
    pub points: usize,
    /// Output file (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SimModeArg {
    Mpf,
    Cpf,
    /// Run both filters over several seeds and compare.
    Paired,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML scenario; the built-in level-shifted scenario when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SimModeArg::Mpf)]
    pub mode: SimModeArg,
    /// Number of consecutive seeds in paired mode.
    #[arg(long, default_value_t = 50)]
    pub seeds: usize,
    /// Rounds of the built-in scenario.
    #[arg(long, default_value_t = 3)]
    pub rounds: usize,
    /// Report CSV (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Annotations produced by the single sparse method.
    #[arg(long)]
    pub single: PathBuf,
    /// Annotations produced by the overall sparse method.
    #[arg(long)]
    pub overall: PathBuf,
    /// Stats CSV (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WatershedArgs {
    /// 8-bit binary PGM (P5) image.
    #[arg(long)]
    pub image: PathBuf,
    /// Point annotations, one `x y category [theta]` per line.
    #[arg(long)]
    pub points: PathBuf,
    /// Output directory for masks and targets.csv.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidInput(_) | Error::Parse { .. } => 3,
        Error::Degenerate(_) => 4,
        Error::Numerical(_) | Error::Io(_) => 1,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Normal output goes to `out`, diagnostics to `err`.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{rendered}")
            } else {
                write!(err, "{rendered}")
            };
            return code;
        }
    };
    let cmdline = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join(" ");
    match run(&cli, &cmdline, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command. `Ok` carries the exit code for commands that
/// report per-entry failures without aborting.
pub fn run(cli: &Cli, cmdline: &str, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::Sparsify(a) => cmd_sparsify(a, cmdline, out),
        Command::FitGmm(a) => cmd_fit_gmm(a, cmdline, out),
        Command::EvalLoss(a) => cmd_eval_loss(a, cmdline, out, err),
        Command::Simulate(a) => cmd_simulate(a, cmdline, out),
        Command::Report(a) => cmd_report(a, cmdline, out),
        Command::Watershed(a) => cmd_watershed(a, cmdline, out),
    }
}

fn comment_header(cmdline: &str, seed: Option<u64>) -> String {
    let seed = seed.map_or("none".to_string(), |s| s.to_string());
    format!(
        "# spwood {} | command: {cmdline} | seed: {seed}\n",
        env!("CARGO_PKG_VERSION")
    )
}

fn emit(path: Option<&Path>, content: &str, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, content)?;
        }
        None => out.write_all(content.as_bytes())?,
    }
    Ok(())
}

fn cmd_sparsify(a: &SparsifyArgs, cmdline: &str, out: &mut dyn Write) -> Result<i32> {
    let seed = a.seed.seed.unwrap_or(DEFAULT_SEED);
    let set = AnnotationSet::load_dir(&a.input)?;
    let config = |method| SparsifyConfig {
        method,
        partial_ratio: a.partial,
        sparse_ratio: a.sparse,
        seed,
    };
    // Both methods draw the same image split, so the stats compare like
    // with like.
    let single = dataset::sparsify(&set, &config(SparseMethod::Single))?;
    let overall = dataset::sparsify(&set, &config(SparseMethod::Overall))?;
    let chosen = match a.method {
        MethodArg::Single => &single,
        MethodArg::Overall => &overall,
    };

    chosen.labeled.write_dir(&a.out.join("annotations"))?;
    let mut unlabeled = String::new();
    for id in &chosen.unlabeled_ids {
        unlabeled.push_str(id);
        unlabeled.push('\n');
    }
    fs::write(a.out.join("unlabeled_images.txt"), unlabeled)?;

    let stats = dataset::compare_stats(&single.labeled, &overall.labeled);
    let mut csv = comment_header(cmdline, Some(seed));
    csv.push_str(dataset::CategoryStats::CSV_HEADER);
    csv.push('\n');
    for line in stats.csv_lines() {
        csv.push_str(&line);
        csv.push('\n');
    }
    fs::write(a.out.join("stats.csv"), csv)?;

    if let Some(weak) = a.weak {
        let target = match weak {
            WeakArg::Rbox => WeakTarget::RBox,
            WeakArg::Hbox => WeakTarget::HBox,
            WeakArg::Point => WeakTarget::Point,
        };
        let dir = a.out.join("weak");
        fs::create_dir_all(&dir)?;
        for img in chosen.labeled.images() {
            let mut text = String::new();
            for r in &img.records {
                text.push_str(&dataset::weaken(r, target)?.to_line());
                text.push('\n');
            }
            fs::write(dir.join(format!("{}.txt", img.image_id)), text)?;
        }
    }

    let input_counts = set.category_counts();
    let kept = chosen.labeled.category_counts();
    let mut names: Vec<&String> = input_counts.keys().collect();
    names.sort_by(|x, y| dataset::category_order(x, y));
    writeln!(
        out,
        "labeled images: {}, unlabeled images: {}",
        chosen.labeled.len(),
        chosen.unlabeled_ids.len()
    )?;
    writeln!(out, "category,input,kept")?;
    for name in names {
        writeln!(
            out,
            "{name},{},{}",
            input_counts[name],
            kept.get(name).copied().unwrap_or(0)
        )?;
    }
    Ok(0)
}

/// Reads `level,score` rows grouped by level.
pub fn parse_level_scores(text: &str) -> Result<Vec<LevelScores>> {
    let mut by_level: std::collections::BTreeMap<Level, Vec<f64>> = Default::default();
    let mut seen_data = false;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = t.split(',').map(str::trim).collect();
        if !seen_data && fields.first().is_some_and(|f| f.eq_ignore_ascii_case("level")) {
            seen_data = true;
            continue;
        }
        seen_data = true;
        let parse_err = |message: String| Error::Parse { line: line_no, message };
        if fields.len() != 2 {
            return Err(parse_err(format!(
                "expected `level,score`, found {} fields",
                fields.len()
            )));
        }
        let level: Level = fields[0]
            .parse()
            .map_err(|_| parse_err(format!("unknown level '{}'", fields[0])))?;
        let score: f64 = fields[1]
            .parse()
            .map_err(|_| parse_err(format!("bad score '{}'", fields[1])))?;
        if !(score > 0.0 && score < 1.0) {
            return Err(parse_err(format!("score {score} outside (0, 1)")));
        }
        by_level.entry(level).or_default().push(score);
    }
    by_level
        .into_iter()
        .map(|(level, scores)| LevelScores::new(level, scores))
        .collect()
}

fn cmd_fit_gmm(a: &FitGmmArgs, cmdline: &str, out: &mut dyn Write) -> Result<i32> {
    let levels = parse_level_scores(&fs::read_to_string(&a.input)?)?;
    if levels.is_empty() {
        return Err(Error::invalid("no scores in input"));
    }
    let config = FilterConfig {
        min_level_scores: a.min_level_scores,
        rule: match a.rule {
            RuleArg::Boundary => ThresholdRule::PosteriorBoundary,
            RuleArg::Mode => ThresholdRule::PositiveMode,
        },
        ..FilterConfig::default()
    };
    let thresholds = match a.mode {
        GmmModeArg::Mpf => filtering::mpf_filter(&levels, &config)?,
        GmmModeArg::Cpf => {
            let pooled = filtering::cpf_filter(&levels, &config)?;
            levels
                .iter()
                .map(|l| filtering::LevelThreshold {
                    level: l.level,
                    tau: pooled.threshold.tau,
                    source: filtering::ThresholdSource::Pooled,
                    fallback: pooled.threshold.fallback,
                    fit: pooled.fit.clone(),
                })
                .collect()
        }
    };
    let mut csv = comment_header(cmdline, a.seed.seed);
    csv.push_str("level,w_p,mu_p,var_p,w_n,mu_n,var_n,tau,converged\n");
    for t in &thresholds {
        let f = &t.fit;
        let _ = writeln!(
            csv,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            t.level, f.w_p, f.mu_p, f.var_p, f.w_n, f.mu_n, f.var_n, t.tau, f.converged
        );
    }
    emit(a.out.as_deref(), &csv, out)?;
    Ok(0)
}

/// One parsed `eval-loss` entry: a differentiable function of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossCase {
    pub kind: LossKind,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    /// `x = [p_t]`.
    Cls { sample: SampleKind, params: FocalParams },
    /// `x = [theta_aug, theta_orig]`.
    Angle { aug: Augmentation },
    /// `x` = boxes as `(cx, cy, w, h, theta)` runs.
    Overlap,
    /// `x = [w, h]` of the prediction; center and angle do not enter.
    Watershed {
        cx: f64,
        cy: f64,
        theta: f64,
        tw: f64,
        th: f64,
    },
    /// `x` = the six supervised parts.
    Supervised,
    /// `x` = student `[conf, centerness, 4 margins]` of one location.
    Unsup { teacher: [f64; 6] },
    /// `x = [supervised, unsupervised]`.
    Total,
}

impl LossCase {
    pub fn name(&self) -> &'static str {
        match self.kind {
            LossKind::Cls { .. } => "cls",
            LossKind::Angle { .. } => "angle",
            LossKind::Overlap => "overlap",
            LossKind::Watershed { .. } => "watershed",
            LossKind::Supervised => "supervised",
            LossKind::Unsup { .. } => "unsup",
            LossKind::Total => "total",
        }
    }

    pub fn evaluate_at(&self, x: &[f64]) -> Result<LossValueGrad> {
        match &self.kind {
            LossKind::Cls { sample, params } => losses::sparse_cls_loss(x[0], *sample, params),
            LossKind::Angle { aug } => losses::angle_loss(x[0], x[1], *aug, losses::DEFAULT_SMOOTH_L1_BETA),
            LossKind::Overlap => {
                let boxes: Vec<OrientedBox> = x
                    .chunks(5)
                    .map(|c| OrientedBox::from_array([c[0], c[1], c[2], c[3], c[4]]))
                    .collect();
                for b in &boxes {
                    b.validate()?;
                }
                losses::gaussian_overlap_loss(&boxes)
            }
            LossKind::Watershed { cx, cy, theta, tw, th } => {
                let b = OrientedBox::from_array([*cx, *cy, x[0], x[1], *theta]);
                losses::watershed_loss(&b, *tw, *th)
            }
            LossKind::Supervised => {
                let w = losses::SupervisedWeights::default();
                let parts = losses::SupervisedParts::from_array([x[0], x[1], x[2], x[3], x[4], x[5]]);
                Ok(LossValueGrad {
                    value: losses::total_supervised_loss(&parts, &w),
                    grad: vec![w.cls, w.cen, w.bbox, w.angle, w.overlap, w.watershed],
                })
            }
            LossKind::Unsup { teacher } => {
                let t = losses::PredictionTriple::new(
                    vec![teacher[0]],
                    vec![teacher[1]],
                    vec![[teacher[2], teacher[3], teacher[4], teacher[5]]],
                )?;
                let s = losses::PredictionTriple::new(vec![x[0]], vec![x[1]], vec![[x[2], x[3], x[4], x[5]]])?;
                losses::unsupervised_loss(&t, &s, losses::DEFAULT_SMOOTH_L1_BETA)
            }
            LossKind::Total => Ok(LossValueGrad {
                value: losses::total_loss(x[0], x[1]),
                grad: vec![1.0, 1.0],
            }),
        }
    }

    pub fn evaluate(&self) -> Result<LossValueGrad> {
        self.evaluate_at(&self.x)
    }

    /// Largest relative error between the analytic gradient and central
    /// differences.
    pub fn gradient_error(&self) -> Result<f64> {
        let analytic = self.evaluate()?;
        let f = |x: &[f64]| self.evaluate_at(x).map_or(f64::NAN, |v| v.value);
        let numeric = gradcheck::central_difference(f, &self.x, gradcheck::DEFAULT_STEP);
        if numeric.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("finite difference left the loss domain"));
        }
        Ok(gradcheck::max_relative_error(&analytic.grad, &numeric))
    }
}

fn numbers(tokens: &[&str]) -> std::result::Result<Vec<f64>, String> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("bad number '{t}'"))
        })
        .collect()
}

/// Parses one `eval-loss` line. Errors are plain messages; the caller adds
/// the line number.
pub fn parse_loss_line(line: &str) -> std::result::Result<LossCase, String> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    let (head, rest) = tokens.split_first().ok_or("empty entry")?;
    let arity = |n: usize| {
        if rest.len() == n {
            Ok(())
        } else {
            Err(format!("{head} expects {n} values, found {}", rest.len()))
        }
    };
    match *head {
        "cls" => {
            let (kind, vals) = rest.split_first().ok_or("cls expects pos|neg")?;
            let sample = match *kind {
                "pos" => SampleKind::Positive,
                "neg" => SampleKind::Negative,
                other => return Err(format!("cls sample kind must be pos or neg, found '{other}'")),
            };
            let v = numbers(vals)?;
            let params = match v.len() {
                1 => FocalParams::default(),
                5 => FocalParams::new(v[1], v[2], v[3], v[4]).map_err(|e| e.to_string())?,
                n => return Err(format!("cls expects p or p alpha gamma omega thr, found {n} values")),
            };
            Ok(LossCase {
                kind: LossKind::Cls { sample, params },
                x: vec![v[0]],
            })
        }
        "angle" => {
            let (mode, vals) = rest.split_first().ok_or("angle expects flip|rot")?;
            let v = numbers(vals)?;
            match (*mode, v.len()) {
                ("flip", 2) => Ok(LossCase {
                    kind: LossKind::Angle {
                        aug: Augmentation::Flip,
                    },
                    x: v,
                }),
                ("rot", 3) => Ok(LossCase {
                    kind: LossKind::Angle {
                        aug: Augmentation::Rotate(v[0]),
                    },
                    x: v[1..].to_vec(),
                }),
                _ => Err("angle expects `flip a o` or `rot r a o`".to_string()),
            }
        }
        "overlap" => {
            let v = numbers(rest)?;
            if v.is_empty() || v.len() % 5 != 0 {
                return Err("overlap expects boxes of 5 values (cx cy w h theta)".to_string());
            }
            Ok(LossCase {
                kind: LossKind::Overlap,
                x: v,
            })
        }
        "watershed" => {
            arity(7)?;
            let v = numbers(rest)?;
            Ok(LossCase {
                kind: LossKind::Watershed {
                    cx: v[0],
                    cy: v[1],
                    theta: v[4],
                    tw: v[5],
                    th: v[6],
                },
                x: vec![v[2], v[3]],
            })
        }
        "supervised" => {
            arity(6)?;
            Ok(LossCase {
                kind: LossKind::Supervised,
                x: numbers(rest)?,
            })
        }
        "unsup" => {
            arity(12)?;
            let v = numbers(rest)?;
            Ok(LossCase {
                kind: LossKind::Unsup {
                    teacher: [v[0], v[2], v[4], v[5], v[6], v[7]],
                },
                x: vec![v[1], v[3], v[8], v[9], v[10], v[11]],
            })
        }
        "total" => {
            arity(2)?;
            Ok(LossCase {
                kind: LossKind::Total,
                x: numbers(rest)?,
            })
        }
        other => Err(format!("unknown loss '{other}'")),
    }
}

fn fmt_grad(g: &[f64]) -> String {
    g.iter().map(|v| format!("{v:.10}")).collect::<Vec<_>>().join(" ")
}

/// Seeded interior points of every loss, kept away from the kinks and
/// jumps where finite differences are meaningless.
pub fn random_loss_cases(rng: &mut SeededRng, per_loss: usize) -> Vec<LossCase> {
    let mut cases = Vec::new();
    for _ in 0..per_loss {
        let params = FocalParams {
            alpha: rng.uniform(0.1, 0.9),
            gamma: rng.uniform(0.0, 3.0),
            omega: rng.uniform(0.1, 1.0),
            thr: rng.uniform(0.2, 0.8),
        };
        let sample = if rng.next_f64() < 0.5 {
            SampleKind::Positive
        } else {
            SampleKind::Negative
        };
        let p = loop {
            let p = rng.uniform(0.05, 0.95);
            if (p - params.thr).abs() > 1e-3 {
                break p;
            }
        };
        cases.push(LossCase {
            kind: LossKind::Cls { sample, params },
            x: vec![p],
        });
    }
    while cases.len() < 2 * per_loss {
        let aug = if rng.next_f64() < 0.5 {
            Augmentation::Flip
        } else {
            Augmentation::Rotate(rng.uniform(-1.5, 1.5))
        };
        let (a, o) = (rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
        let raw = match aug {
            Augmentation::Flip => a + o,
            Augmentation::Rotate(r) => a - o - r,
        };
        let res = normalize_angle(raw).abs();
        if res < 1.5 && (res - losses::DEFAULT_SMOOTH_L1_BETA).abs() > 1e-3 {
            cases.push(LossCase {
                kind: LossKind::Angle { aug },
                x: vec![a, o],
            });
        }
    }
    for _ in 0..per_loss {
        let n = 2 + rng.below(3) as usize;
        let x = (0..n)
            .flat_map(|_| {
                [
                    rng.uniform(0.0, 20.0),
                    rng.uniform(0.0, 20.0),
                    rng.uniform(2.0, 10.0),
                    rng.uniform(2.0, 10.0),
                    rng.uniform(-1.5, 1.5),
                ]
            })
            .collect();
        cases.push(LossCase {
            kind: LossKind::Overlap,
            x,
        });
    }
    for _ in 0..per_loss {
        cases.push(LossCase {
            kind: LossKind::Watershed {
                cx: rng.uniform(0.0, 100.0),
                cy: rng.uniform(0.0, 100.0),
                theta: rng.uniform(-1.5, 1.5),
                tw: rng.uniform(4.0, 60.0),
                th: rng.uniform(4.0, 60.0),
            },
            x: vec![rng.uniform(4.0, 60.0), rng.uniform(4.0, 60.0)],
        });
    }
    for _ in 0..per_loss {
        cases.push(LossCase {
            kind: LossKind::Supervised,
            x: (0..6).map(|_| rng.uniform(0.0, 5.0)).collect(),
        });
    }
    while cases.len() < 6 * per_loss {
        let teacher = [
            rng.uniform(0.0, 1.0),
            rng.uniform(0.0, 1.0),
            rng.uniform(0.0, 50.0),
            rng.uniform(0.0, 50.0),
            rng.uniform(0.0, 50.0),
            rng.uniform(0.0, 50.0),
        ];
        let x = vec![
            rng.uniform(0.05, 0.95),
            rng.uniform(0.05, 0.95),
            rng.uniform(0.0, 50.0),
            rng.uniform(0.0, 50.0),
            rng.uniform(0.0, 50.0),
            rng.uniform(0.0, 50.0),
        ];
        let near_kink =
            (0..4).any(|k| ((x[2 + k] - teacher[2 + k]).abs() - losses::DEFAULT_SMOOTH_L1_BETA).abs() < 1e-3);
        if !near_kink {
            cases.push(LossCase {
                kind: LossKind::Unsup { teacher },
                x,
            });
        }
    }
    for _ in 0..per_loss {
        cases.push(LossCase {
            kind: LossKind::Total,
            x: vec![rng.uniform(0.0, 20.0), rng.uniform(0.0, 5.0)],
        });
    }
    cases
}

fn cmd_eval_loss(a: &EvalLossArgs, cmdline: &str, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let mut report = String::new();
    let mut code = 0;

    match &a.input {
        Some(path) => {
            report.push_str(&comment_header(cmdline, a.seed.seed));
            let text = fs::read_to_string(path)?;
            let mut worst: f64 = 0.0;
            for (i, line) in text.lines().enumerate() {
                let t = line.trim();
                if t.is_empty() || t.starts_with('#') {
                    continue;
                }
                let line_no = i + 1;
                let case = match parse_loss_line(t) {
                    Ok(c) => c,
                    Err(msg) => {
                        let _ = writeln!(report, "line {line_no}: error: {msg}");
                        code = 3;
                        continue;
                    }
                };
                match case.evaluate() {
                    Ok(v) => {
                        let _ = write!(
                            report,
                            "line {line_no}: {} value={} grad=[{}]",
                            case.name(),
                            v.value,
                            fmt_grad(&v.grad)
                        );
                        if a.check_grad {
                            match case.gradient_error() {
                                Ok(e) => {
                                    worst = worst.max(e);
                                    let _ = write!(report, " rel_err={e:.3e}");
                                }
                                Err(e) => {
                                    let _ = write!(report, " rel_err=error({e})");
                                    code = code.max(1);
                                }
                            }
                        }
                        report.push('\n');
                    }
                    Err(e) => {
                        let _ = writeln!(report, "line {line_no}: {} error: {e}", case.name());
                        code = 3;
                    }
                }
            }
            if a.check_grad {
                let status = if worst < GRAD_TOLERANCE { "ok" } else { "FAIL" };
                let _ = writeln!(report, "max_rel_err={worst:.3e} {status}");
                if worst >= GRAD_TOLERANCE && code == 0 {
                    code = 1;
                }
            }
        }
        None if a.check_grad => {
            let seed = a.seed.seed.unwrap_or(DEFAULT_SEED);
            report.push_str(&comment_header(cmdline, Some(seed)));
            let cases = random_loss_cases(&mut SeededRng::new(seed), a.points);
            let mut per_loss: Vec<(&'static str, f64, usize)> = Vec::new();
            for case in &cases {
                let e = case.gradient_error().unwrap_or(f64::INFINITY);
                match per_loss.iter_mut().find(|(n, _, _)| *n == case.name()) {
                    Some(entry) => {
                        entry.1 = entry.1.max(e);
                        entry.2 += 1;
                    }
                    None => per_loss.push((case.name(), e, 1)),
                }
            }
            let mut worst: f64 = 0.0;
            for (name, e, n) in &per_loss {
                worst = worst.max(*e);
                let _ = writeln!(report, "{name} points={n} max_rel_err={e:.3e}");
            }
            let status = if worst < GRAD_TOLERANCE { "ok" } else { "FAIL" };
            let _ = writeln!(report, "max_rel_err={worst:.3e} {status}");
            if worst >= GRAD_TOLERANCE {
                code = 1;
            }
        }
        None => {
            writeln!(err, "error: eval-loss needs --input, --check-grad, or both")?;
            return Ok(2);
        }
    }
    emit(a.out.as_deref(), &report, out)?;
    Ok(code)
}

fn cmd_simulate(a: &SimulateArgs, cmdline: &str, out: &mut dyn Write) -> Result<i32> {
    let scenario = match &a.scenario {
        Some(p) => SimScenario::from_toml(&fs::read_to_string(p)?)?,
        None => {
            if a.rounds == 0 {
                return Err(Error::invalid("scenario needs at least one round"));
            }
            SimScenario::shifted_levels(a.rounds, None)
        }
    };
    let seed = a.seed.seed.or(scenario.seed).unwrap_or(DEFAULT_SEED);
    let config = FilterConfig::default();
    let mut csv = comment_header(cmdline, Some(seed));

    let single = |mode| -> Result<String> {
        let report = pipeline::run_simulation(&scenario, mode, seed, &config)?;
        let mut buf = Vec::new();
        report.write_csv_rows(&mut buf, "")?;
        Ok(String::from_utf8(buf).expect("ASCII CSV"))
    };
    match a.mode {
        SimModeArg::Mpf => {
            csv.push_str(SimReport::CSV_HEADER);
            csv.push('\n');
            csv.push_str(&single(FilterMode::Mpf)?);
        }
        SimModeArg::Cpf => {
            csv.push_str(SimReport::CSV_HEADER);
            csv.push('\n');
            csv.push_str(&single(FilterMode::Cpf)?);
        }
        SimModeArg::Paired => {
            if a.seeds == 0 {
                return Err(Error::invalid("--seeds must be at least 1"));
            }
            let seeds: Vec<u64> = (0..a.seeds as u64).map(|i| seed.wrapping_add(i)).collect();
            let summary = pipeline::paired_comparison(&scenario, &seeds, &config)?;
            csv.push_str("seed,mode,");
            csv.push_str(SimReport::CSV_HEADER);
            csv.push('\n');
            let mut buf = Vec::new();
            for (m, c) in summary.mpf.iter().zip(&summary.cpf) {
                for r in [m, c] {
                    r.write_csv_rows(&mut buf, &format!("{},{},", r.seed, r.mode.name()))?;
                }
            }
            csv.push_str(&String::from_utf8(buf).expect("ASCII CSV"));
            let _ = writeln!(
                csv,
                "# summary: seeds={} mean_f1_mpf={:.6} mean_f1_cpf={:.6} mpf_wins={} cpf_wins={} ties={} sign_test_p={:.3e}",
                seeds.len(),
                summary.mean_mpf_f1,
                summary.mean_cpf_f1,
                summary.mpf_wins,
                summary.cpf_wins,
                summary.ties,
                summary.p_value
            );
        }
    }
    emit(a.out.as_deref(), &csv, out)?;
    Ok(0)
}

fn cmd_report(a: &ReportArgs, cmdline: &str, out: &mut dyn Write) -> Result<i32> {
    let single = AnnotationSet::load_dir(&a.single)?;
    let overall = AnnotationSet::load_dir(&a.overall)?;
    let stats = dataset::compare_stats(&single, &overall);
    let mut csv = comment_header(cmdline, None);
    csv.push_str(dataset::CategoryStats::CSV_HEADER);
    csv.push('\n');
    for line in stats.csv_lines() {
        csv.push_str(&line);
        csv.push('\n');
    }
    emit(a.out.as_deref(), &csv, out)?;
    Ok(0)
}

/// Reads `x y category [theta]` lines. Categories are numbered in order of
/// first appearance.
fn parse_points(text: &str) -> Result<(Vec<PointAnnotation>, Vec<String>, Vec<f64>)> {
    let mut points = Vec::new();
    let mut names = Vec::new();
    let mut thetas = Vec::new();
    let mut categories: Vec<String> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        let f: Vec<&str> = t.split_whitespace().collect();
        if !(f.len() == 3 || f.len() == 4) {
            return Err(parse_err("expected `x y category [theta]`".to_string()));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(format!("bad number '{s}'")))
        };
        let (x, y) = (num(f[0])?, num(f[1])?);
        let theta = if f.len() == 4 { num(f[3])? } else { 0.0 };
        let cat = match categories.iter().position(|c| c == f[2]) {
            Some(k) => k,
            None => {
                categories.push(f[2].to_string());
                categories.len() - 1
            }
        };
        points.push(PointAnnotation::new(x, y, cat as u32));
        names.push(f[2].to_string());
        thetas.push(theta);
    }
    Ok((points, names, thetas))
}

fn cmd_watershed(a: &WatershedArgs, cmdline: &str, out: &mut dyn Write) -> Result<i32> {
    let image = pgm::read(fs::File::open(&a.image)?)?;
    let (points, names, thetas) = parse_points(&fs::read_to_string(&a.points)?)?;
    let cells = layout::voronoi_partition(&points, image.width(), image.height())?;
    let masks = layout::watershed_segment(&image, &cells)?;
    fs::create_dir_all(&a.out)?;
    let mut csv = comment_header(cmdline, None);
    csv.push_str("index,x,y,category,theta,w_t,h_t,valid,pixels\n");
    for (i, mask) in masks.iter().enumerate() {
        pgm::write_mask(fs::File::create(a.out.join(format!("mask_{i:04}.pgm")))?, mask)?;
        let target = layout::scale_target_from_mask(mask, thetas[i]);
        let _ = writeln!(
            csv,
            "{i},{},{},{},{},{:.3},{:.3},{},{}",
            points[i].x,
            points[i].y,
            names[i],
            thetas[i],
            target.w_t,
            target.h_t,
            target.valid,
            mask.count()
        );
    }
    fs::write(a.out.join("targets.csv"), &csv)?;
    writeln!(out, "wrote {} masks to {}", masks.len(), a.out.display())?;
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn loss_line_grammar() {
        let c = parse_loss_line("cls pos 0.3").unwrap();
        assert_eq!(c.x, vec![0.3]);
        let c = parse_loss_line("angle rot 0.5 0.2 0.1").unwrap();
        assert_eq!(
            c.kind,
            LossKind::Angle {
                aug: Augmentation::Rotate(0.5)
            }
        );
        assert_eq!(c.x, vec![0.2, 0.1]);
        assert!(parse_loss_line("overlap 1 2 3 4").is_err());
        assert!(parse_loss_line("supervised 1 1 1").is_err());
        assert!(parse_loss_line("nope 1").is_err());
        let s = parse_loss_line("supervised 1 1 1 1 1 1").unwrap().evaluate().unwrap();
        assert!((s.value - 18.2).abs() < 1e-12);
        assert!(parse_loss_line("cls pos 1.0").unwrap().evaluate().is_err());
    }

    #[test]
    fn unsup_line_layout() {
        let c = parse_loss_line("unsup 0.9 0.6 0.8 0.5 1 2 3 4 1.5 2 3 4").unwrap();
        assert_eq!(
            c.kind,
            LossKind::Unsup {
                teacher: [0.9, 0.8, 1.0, 2.0, 3.0, 4.0]
            }
        );
        assert_eq!(c.x, vec![0.6, 0.5, 1.5, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn level_score_csv() {
        let text = "# c\nlevel,score\nP3,0.2\nP4,0.9\nP3,0.4\n";
        let v = parse_level_scores(text).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[0].scores, vec![0.2, 0.4]);
        match parse_level_scores("P3,0.2\nP3,abc\n").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
        assert!(parse_level_scores("P3,1.0\n").is_err());
    }

    #[test]
    fn random_cases_pass_gradient_check() {
        let cases = random_loss_cases(&mut SeededRng::new(5), 10);
        assert_eq!(cases.len(), 70);
        for c in &cases {
            let e = c.gradient_error().unwrap();
            assert!(e < GRAD_TOLERANCE, "{} at {:?}: {e}", c.name(), c.x);
        }
    }
}
