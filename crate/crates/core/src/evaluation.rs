//! Registration-error statistics and strategy comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ReplayOptions};
use crate::error::{Error, Result};
use crate::navigator::{self, OffsetSchedule, Schedule, TraversalLog};
use crate::registration::RegistrationConfig;
use crate::simulator::WorldConfig;
use crate::strategy::StrategyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameKey {
    pub traversal: u32,
    pub location: usize,
}

/// Per-frame errors `|delta - gamma|` of one strategy. Failed registrations
/// carry the failure penalty and are flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSequence {
    pub strategy: String,
    pub values: Vec<f64>,
    pub keys: Vec<FrameKey>,
    pub failed: Vec<bool>,
}

impl ErrorSequence {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }

    pub fn failures(&self) -> usize {
        self.failed.iter().filter(|&&f| f).count()
    }

    /// Unkeyed sequence, for statistics on plain numbers.
    pub fn from_values(strategy: &str, values: Vec<f64>) -> Self {
        let n = values.len();
        ErrorSequence {
            strategy: strategy.to_string(),
            keys: (0..n).map(|i| FrameKey { traversal: 0, location: i }).collect(),
            failed: vec![false; n],
            values,
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn registration_errors(strategy: &str, logs: &[TraversalLog], failure_penalty_px: f64) -> ErrorSequence {
    let mut seq = ErrorSequence {
        strategy: strategy.to_string(),
        values: Vec::new(),
        keys: Vec::new(),
        failed: Vec::new(),
    };
    for log in logs {
        for r in &log.records {
            seq.keys.push(FrameKey {
                traversal: log.traversal,
                location: r.location,
            });
            match r.delta_px {
                Some(delta) => {
                    seq.values.push((delta - r.gamma_px).abs());
                    seq.failed.push(false);
                }
                None => {
                    seq.values.push(failure_penalty_px);
                    seq.failed.push(true);
                }
            }
        }
    }
    seq
}

/// `p(eps_t) = |{i : eps_i <= eps_t}| / N` for each threshold.
pub fn error_cdf(errors: &[f64], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    if errors.is_empty() {
        return Err(Error::InvalidInput("error sequence is empty".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| (t, sorted.partition_point(|&e| e <= t) as f64 / n))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: usize,
    pub p_value: f64,
    pub significant: bool,
    /// Mean of `a - b`.
    pub mean_difference: f64,
}

/// Student's paired-sample test on `d_i = a_i - b_i`, two-sided.
pub fn paired_t_test(a: &ErrorSequence, b: &ErrorSequence, alpha: f64) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "paired test needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.keys != b.keys {
        return Err(Error::InvalidInput("paired sequences are not aligned by frame".into()));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidInput("paired test needs at least two pairs".into()));
    }
    let d: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
    let md = mean(&d);
    let var = d.iter().map(|x| (x - md).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let df = n - 1;
    let (t, p_value) = if sd == 0.0 {
        if md == 0.0 {
            (0.0, 1.0)
        } else {
            (md.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = md / (sd / (n as f64).sqrt());
        (t, student_t_two_sided_p(t, df as f64))
    };
    Ok(TTestResult {
        t,
        df,
        p_value,
        significant: p_value < alpha,
        mean_difference: md,
    })
}

/// Two-sided tail probability `P(|T| >= |t|)` of Student's t with `df`
/// degrees of freedom: `I_{df / (df + t^2)}(df / 2, 1 / 2)`.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

/// Lanczos approximation (g = 7, n = 9), accurate to ~1e-15 for x > 0.
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut sum = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        sum += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + sum.ln()
}

/// `I_x(a, b)` by the continued fraction (modified Lentz), using the
/// symmetry `I_x(a, b) = 1 - I_{1-x}(b, a)` where it converges faster.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let guard = |v: f64| if v.abs() < TINY { TINY } else { v };
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 / guard(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        let step = d * c;
        h *= step;
        if (step - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Restricts every sequence to the frame keys present in all of them.
/// Returns the aligned sequences and the number of dropped frames.
pub fn align(sequences: &[ErrorSequence]) -> (Vec<ErrorSequence>, usize) {
    let mut counts: BTreeMap<FrameKey, usize> = BTreeMap::new();
    for s in sequences {
        for k in &s.keys {
            *counts.entry(*k).or_default() += 1;
        }
    }
    let common: std::collections::BTreeSet<FrameKey> = counts
        .iter()
        .filter(|(_, &c)| c == sequences.len())
        .map(|(k, _)| *k)
        .collect();
    let dropped = counts.len() - common.len();
    let aligned = sequences
        .iter()
        .map(|s| {
            let mut rows: Vec<(FrameKey, f64, bool)> = s
                .keys
                .iter()
                .zip(&s.values)
                .zip(&s.failed)
                .filter(|((k, _), _)| common.contains(k))
                .map(|((k, v), f)| (*k, *v, *f))
                .collect();
            rows.sort_by_key(|r| r.0);
            ErrorSequence {
                strategy: s.strategy.clone(),
                keys: rows.iter().map(|r| r.0).collect(),
                values: rows.iter().map(|r| r.1).collect(),
                failed: rows.iter().map(|r| r.2).collect(),
            }
        })
        .collect();
    (aligned, dropped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    /// Error recorded for a failed registration; `None` means half the image width.
    pub failure_penalty_px: Option<f64>,
    pub alpha: f64,
    pub cdf_thresholds_px: Vec<f64>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            failure_penalty_px: None,
            alpha: 0.01,
            cdf_thresholds_px: (0..=100).map(f64::from).collect(),
        }
    }
}

impl EvaluationConfig {
    pub fn penalty(&self, image_width: f64) -> f64 {
        self.failure_penalty_px.unwrap_or(image_width / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub name: String,
    pub frames: usize,
    pub mean_error_px: f64,
    pub median_error_px: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    #[serde(flatten)]
    pub result: TTestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub mode: String,
    pub alpha: f64,
    pub failure_penalty_px: f64,
    pub dropped_frames: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stream_sha256: Option<String>,
    pub strategies: Vec<StrategySummary>,
    /// Strategy names by ascending mean error.
    pub ranking: Vec<String>,
    pub t_tests: Vec<PairwiseTest>,
    pub cdf_thresholds_px: Vec<f64>,
    /// One probability column per strategy, in `strategies` order.
    pub cdf: Vec<Vec<f64>>,
}

impl Report {
    pub fn summary(&self, name: &str) -> Option<&StrategySummary> {
        self.strategies.iter().find(|s| s.name == name)
    }

    pub fn t_test(&self, a: &str, b: &str) -> Option<TTestResult> {
        self.t_tests.iter().find_map(|p| {
            if p.a == a && p.b == b {
                Some(p.result)
            } else if p.a == b && p.b == a {
                Some(TTestResult {
                    t: -p.result.t,
                    mean_difference: -p.result.mean_difference,
                    ..p.result
                })
            } else {
                None
            }
        })
    }

    /// `threshold_px,<strategy>,...` then one row per threshold.
    pub fn cdf_csv(&self) -> String {
        let mut out = String::from("threshold_px");
        for s in &self.strategies {
            out.push(',');
            out.push_str(&s.name);
        }
        out.push('\n');
        for (row, t) in self.cdf_thresholds_px.iter().enumerate() {
            write!(out, "{t}").unwrap();
            for col in &self.cdf {
                write!(out, ",{}", col[row]).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    /// Writes `summary.json` and `cdf.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let summary = dir.join("summary.json");
        std::fs::write(&summary, self.summary_json()).map_err(|e| Error::io(&summary, e))?;
        let cdf = dir.join("cdf.csv");
        std::fs::write(&cdf, self.cdf_csv()).map_err(|e| Error::io(&cdf, e))?;
        Ok(())
    }
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Builds the comparison report from per-strategy error sequences.
pub fn build_report(
    sequences: &[ErrorSequence],
    eval: &EvaluationConfig,
    failure_penalty_px: f64,
    mode: &str,
    stream_sha256: Option<String>,
) -> Result<Report> {
    if sequences.is_empty() {
        return Err(Error::InvalidInput("no strategies to report".into()));
    }
    let (aligned, dropped_frames) = align(sequences);
    let strategies: Vec<StrategySummary> = aligned
        .iter()
        .map(|s| StrategySummary {
            name: s.strategy.clone(),
            frames: s.len(),
            mean_error_px: s.mean(),
            median_error_px: median(&s.values),
            failures: s.failures(),
        })
        .collect();
    let mut ranking: Vec<&StrategySummary> = strategies.iter().collect();
    ranking.sort_by(|a, b| a.mean_error_px.total_cmp(&b.mean_error_px));
    let ranking = ranking.into_iter().map(|s| s.name.clone()).collect();

    let mut t_tests = Vec::new();
    for i in 0..aligned.len() {
        for j in i + 1..aligned.len() {
            t_tests.push(PairwiseTest {
                a: aligned[i].strategy.clone(),
                b: aligned[j].strategy.clone(),
                result: paired_t_test(&aligned[i], &aligned[j], eval.alpha)?,
            });
        }
    }
    let cdf = aligned
        .iter()
        .map(|s| {
            error_cdf(&s.values, &eval.cdf_thresholds_px).map(|rows| rows.into_iter().map(|(_, p)| p).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(Report {
        mode: mode.to_string(),
        alpha: eval.alpha,
        failure_penalty_px,
        dropped_frames,
        stream_sha256,
        strategies,
        ranking,
        t_tests,
        cdf_thresholds_px: eval.cdf_thresholds_px.clone(),
        cdf,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OpenLoop,
    ClosedLoop,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::OpenLoop => "open_loop",
            Mode::ClosedLoop => "closed_loop",
        }
    }
}

/// Where the frames of a comparison come from.
#[derive(Debug, Clone)]
pub enum Source {
    World {
        world: WorldConfig,
        mode: Mode,
        offsets: OffsetSchedule,
        initial_offset_m: f64,
        run_seed: u64,
    },
    Dataset { path: PathBuf, options: ReplayOptions },
}

/// Logs of every strategy for a source, plus the frame-stream hash when all
/// strategies consumed one shared stream.
pub fn run_strategies(
    source: &Source,
    strategies: &[StrategyConfig],
    registration: &RegistrationConfig,
    schedule: &Schedule,
) -> Result<(Vec<Vec<TraversalLog>>, Option<String>, f64)> {
    match source {
        Source::World {
            world,
            mode: Mode::OpenLoop,
            offsets,
            run_seed,
            ..
        } => {
            let run = navigator::run_open_loop(world, strategies, registration, schedule, offsets, *run_seed)?;
            Ok((run.logs, Some(run.stream_hash), world.image_width))
        }
        Source::World {
            world,
            mode: Mode::ClosedLoop,
            initial_offset_m,
            run_seed,
            ..
        } => {
            let logs = strategies
                .par_iter()
                .map(|s| navigator::run_closed_loop(world, s, registration, schedule, *initial_offset_m, *run_seed))
                .collect::<Result<Vec<_>>>()?;
            Ok((logs, None, world.image_width))
        }
        Source::Dataset { path, options } => {
            let dataset = Dataset::read(path)?;
            let (logs, hash) = dataset.replay_all(strategies, registration, options)?;
            Ok((logs, Some(hash), options.image_width))
        }
    }
}

/// Runs every strategy on the same source and compares their registration errors.
pub fn compare_strategies(
    source: &Source,
    strategies: &[StrategyConfig],
    schedule: &Schedule,
    registration: &RegistrationConfig,
    eval: &EvaluationConfig,
) -> Result<(Report, Vec<Vec<TraversalLog>>)> {
    if strategies.is_empty() {
        return Err(Error::InvalidInput("no strategies to compare".into()));
    }
    let mut names: Vec<String> = strategies.iter().map(StrategyConfig::label).collect();
    names.sort();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("strategy names must be unique; set `name` to disambiguate".into()));
    }
    let (logs, hash, width) = run_strategies(source, strategies, registration, schedule)?;
    let penalty = eval.penalty(width);
    let sequences: Vec<ErrorSequence> = strategies
        .iter()
        .zip(&logs)
        .map(|(s, l)| registration_errors(&s.label(), l, penalty))
        .collect();
    let mode = match source {
        Source::World { mode, .. } => mode.name(),
        Source::Dataset { .. } => "replay",
    };
    let report = build_report(&sequences, eval, penalty, mode, hash)?;
    Ok((report, logs))
}
