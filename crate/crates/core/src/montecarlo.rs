//! Repeated-trial harness: sweeps parameter grids, runs independent
//! detection trials in parallel, and aggregates estimates with 95%
//! confidence intervals.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{AdversaryStrategy, Environment, StrategyKind};
use crate::analytic::usage_probabilities;
use crate::circuit::CircuitSource;
use crate::detection::{run_detection, DetectionConfig, DetectionParams};
use crate::directory::{
    load_directory, select_guard_set, synthesize_directory, tag_compromised, Directory,
    DirectoryError, SynthesisSpec,
};
use crate::rng::StreamKey;

#[derive(Debug, thiserror::Error)]
pub enum MonteCarloError {
    #[error("bad experiment config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Directory(#[from] DirectoryError),
    #[error("too few samples for a confidence interval: need >= 2, got {0}")]
    TooFewSamples(usize),
}

/// How circuits are produced.
///
/// `Match` draws hop compromise directly from (g, t) with replacement
/// and no path constraints, and applies the interphase thinning the
/// closed forms assume, so estimates are directly comparable to the
/// analytic module. `Realistic` builds circuits against a bandwidth-
/// weighted directory with /16 and family constraints and per-attempt
/// failures only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Match,
    Realistic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DirectorySource {
    Synthetic { spec: SynthesisSpec },
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub t: Vec<f64>,
    pub g: Vec<f64>,
    pub f: Vec<f64>,
    pub d: Vec<f64>,
    pub n: Vec<u32>,
    pub k: Vec<u32>,
    pub th: Vec<u32>,
    pub trials: u32,
    pub mode: Mode,
    pub strategy: StrategyKind,
    pub randomize_middle: bool,
    pub master_seed: u64,
    /// required in realistic mode, ignored in match mode
    pub directory: Option<DirectorySource>,
    /// guard-set size in realistic mode
    pub guards_g: u32,
    /// phase-1 attempt budget = factor x N
    pub phase1_budget_factor: u64,
}

impl ExperimentConfig {
    /// Sensible single-point defaults; callers override the axes they
    /// sweep.
    pub fn new(master_seed: u64) -> Self {
        ExperimentConfig {
            t: vec![0.2],
            g: vec![1.0 / 3.0],
            f: vec![0.0],
            d: vec![1.0],
            n: vec![10],
            k: vec![3],
            th: vec![2],
            trials: 100,
            mode: Mode::Match,
            strategy: StrategyKind::SimpleSelective,
            randomize_middle: false,
            master_seed,
            directory: None,
            guards_g: 3,
            phase1_budget_factor: 1000,
        }
    }

    pub fn validate(&self) -> Result<(), MonteCarloError> {
        for (axis, name) in [
            (self.t.is_empty(), "t"),
            (self.g.is_empty(), "g"),
            (self.f.is_empty(), "f"),
            (self.d.is_empty(), "d"),
            (self.n.is_empty(), "N"),
            (self.k.is_empty(), "K"),
            (self.th.is_empty(), "Th"),
        ] {
            if axis {
                return Err(MonteCarloError::BadConfig(format!("empty {name} grid")));
            }
        }
        if self.trials < 2 {
            return Err(MonteCarloError::BadConfig(format!(
                "trials must be >= 2, got {}",
                self.trials
            )));
        }
        for &v in self.t.iter().chain(&self.g).chain(&self.d) {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(MonteCarloError::BadConfig(format!("fraction out of [0, 1]: {v}")));
            }
        }
        for &v in &self.f {
            if !(0.0..1.0).contains(&v) || !v.is_finite() {
                return Err(MonteCarloError::BadConfig(format!("f out of [0, 1): {v}")));
            }
        }
        for &n in &self.n {
            for &k in &self.k {
                for &th in &self.th {
                    DetectionParams::new(n, k, th)
                        .map_err(|e| MonteCarloError::BadConfig(e.to_string()))?;
                }
            }
        }
        if self.phase1_budget_factor == 0 {
            return Err(MonteCarloError::BadConfig("phase1_budget_factor must be > 0".into()));
        }
        if self.mode == Mode::Realistic {
            if self.directory.is_none() {
                return Err(MonteCarloError::BadConfig(
                    "realistic mode needs a directory source".into(),
                ));
            }
            if self.guards_g == 0 {
                return Err(MonteCarloError::BadConfig("guards_g must be > 0".into()));
            }
            for &g in &self.g {
                let exact = g * self.guards_g as f64;
                if (exact - exact.round()).abs() > 1e-9 {
                    return Err(MonteCarloError::BadConfig(format!(
                        "g = {g} does not split {} guards into whole counts",
                        self.guards_g
                    )));
                }
            }
        }
        Ok(())
    }

    fn grid(&self) -> Vec<GridPoint> {
        let mut points = Vec::new();
        for &t in &self.t {
            for &g in &self.g {
                for &f in &self.f {
                    for &d in &self.d {
                        for &n in &self.n {
                            for &k in &self.k {
                                for &th in &self.th {
                                    points.push(GridPoint { t, g, f, d, n, k, th });
                                }
                            }
                        }
                    }
                }
            }
        }
        points
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub t: f64,
    pub g: f64,
    pub f: f64,
    pub d: f64,
    pub n: u32,
    pub k: u32,
    pub th: u32,
}

/// Mean with a 95% CI over the trials where the metric was defined.
/// `excluded` counts trials that produced no sample (for FN: no alive
/// compromised circuit was evaluated).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: Option<f64>,
    pub ci95: Option<f64>,
    pub used: u32,
    pub excluded: u32,
}

impl Estimate {
    fn from_samples(samples: &[f64], excluded: u32) -> Estimate {
        match samples.len() {
            0 => Estimate { mean: None, ci95: None, used: 0, excluded },
            1 => Estimate { mean: Some(samples[0]), ci95: None, used: 1, excluded },
            _ => {
                let (mean, hw) = ci_95(samples).expect("len checked");
                Estimate {
                    mean: Some(mean),
                    ci95: Some(hw),
                    used: samples.len() as u32,
                    excluded,
                }
            }
        }
    }
}

/// Normal-approximation interval: mean +/- 1.96 s / sqrt(n), s the
/// sample standard deviation.
pub fn ci_95(samples: &[f64]) -> Result<(f64, f64), MonteCarloError> {
    if samples.len() < 2 {
        return Err(MonteCarloError::TooFewSamples(samples.len()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, 1.96 * var.sqrt() / n.sqrt()))
}

/// Per-point estimates. FN and FP come in two conventions: the default
/// excludes trials where the metric is undefined (reported via
/// `excluded`); the `_incl_zero` variant scores those trials as 0, which
/// is the convention the closed-form mixtures use, so that variant is
/// the one to compare against the analytic module.
///
/// The usage shares (`pr_cxc`, `pr_hhh`, `pr_others`) and `psi` are
/// ratios of counts pooled across trials, with a delta-method interval
/// over the per-trial count vectors. A single detection round accepts
/// only a handful of circuits, so per-trial ratios would carry a
/// small-sample bias of several percent; pooling removes it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointEstimates {
    pub fn_rate: Estimate,
    pub fn_rate_incl_zero: Estimate,
    pub fp_rate: Estimate,
    pub fp_rate_incl_zero: Estimate,
    pub pr_cxc: Estimate,
    pub pr_hhh: Estimate,
    pub pr_others: Estimate,
    pub psi: Estimate,
    pub eta: Estimate,
    pub phase1_attempts: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub point: GridPoint,
    pub estimates: PointEstimates,
    pub trials: u32,
    pub failed_trials: u32,
    /// first failure message, when any trial failed
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSeries {
    pub points: Vec<PointResult>,
}

#[derive(Debug, Clone, Copy)]
struct TrialOutcome {
    cxc_eval: u32,
    cxc_acc: u32,
    hhh_eval: u32,
    hhh_acc: u32,
    other_eval: u32,
    other_acc: u32,
    attempts: u64,
    probes: u64,
}

enum PreparedDirectory {
    None,
    Ready(Directory),
}

/// Runs the full sweep. Deterministic per master seed: trial RNG streams
/// are keyed by (master seed, point index, trial index), trials run in
/// parallel, and results are reduced in index order, so the output is
/// bit-identical across runs and thread counts.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EstimateSeries, MonteCarloError> {
    cfg.validate()?;

    let base_dir = match (&cfg.mode, &cfg.directory) {
        (Mode::Realistic, Some(DirectorySource::Synthetic { spec })) => {
            PreparedDirectory::Ready(synthesize_directory(spec, cfg.master_seed)?)
        }
        (Mode::Realistic, Some(DirectorySource::Csv { path })) => {
            PreparedDirectory::Ready(load_directory(path)?)
        }
        _ => PreparedDirectory::None,
    };

    let root = StreamKey::root(cfg.master_seed);
    let points = cfg.grid();
    let mut out = Vec::with_capacity(points.len());
    for (point_idx, point) in points.into_iter().enumerate() {
        let point_key = root.child(point_idx as u64);

        // one tagged directory per point; the tag seed folds in the
        // point index so repeated t values stay independent
        let tagged = match &base_dir {
            PreparedDirectory::Ready(dir) => {
                let (tagged, _) =
                    tag_compromised(dir, point.t, cfg.master_seed ^ point_idx as u64)?;
                Some(tagged)
            }
            PreparedDirectory::None => None,
        };

        let outcomes: Vec<Result<TrialOutcome, String>> = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| run_trial(cfg, &point, tagged.as_ref(), point_key.child(trial as u64)))
            .collect();

        out.push(aggregate(point, cfg.trials, outcomes));
    }
    Ok(EstimateSeries { points: out })
}

fn run_trial(
    cfg: &ExperimentConfig,
    point: &GridPoint,
    dir: Option<&Directory>,
    key: StreamKey,
) -> Result<TrialOutcome, String> {
    let params = DetectionParams::new(point.n, point.k, point.th).map_err(|e| e.to_string())?;
    let strat = AdversaryStrategy { kind: cfg.strategy, drop_rate: point.d };
    let env = Environment::new(point.f);
    let det_cfg = DetectionConfig {
        params,
        strat,
        env,
        randomize_middle: cfg.randomize_middle,
        interphase_thinning: cfg.mode == Mode::Match,
        phase1_attempt_budget: cfg.phase1_budget_factor * point.n as u64,
    };

    let result = match cfg.mode {
        Mode::Match => {
            let mut source =
                CircuitSource::model(point.g, point.t).map_err(|e| e.to_string())?;
            run_detection(&det_cfg, &mut source, key).map_err(|e| e.to_string())?
        }
        Mode::Realistic => {
            let dir = dir.expect("realistic mode carries a directory");
            let mut guard_rng = key.child(3).rng();
            let guards = select_guard_set(dir, cfg.guards_g, point.g, &mut guard_rng)
                .map_err(|e| e.to_string())?;
            let mut source = CircuitSource::network(dir, &guards);
            run_detection(&det_cfg, &mut source, key).map_err(|e| e.to_string())?
        }
    };

    let mut o = TrialOutcome {
        cxc_eval: 0,
        cxc_acc: 0,
        hhh_eval: 0,
        hhh_acc: 0,
        other_eval: 0,
        other_acc: 0,
        attempts: result.phase1_attempts,
        probes: result.phase2_probes,
    };
    for e in &result.evaluations {
        if e.pre_failed {
            continue;
        }
        let acc = e.accepted as u32;
        if e.class.is_cxc() {
            o.cxc_eval += 1;
            o.cxc_acc += acc;
        } else if e.class == crate::circuit::CircuitClass::Hhh {
            o.hhh_eval += 1;
            o.hhh_acc += acc;
        } else {
            o.other_eval += 1;
            o.other_acc += acc;
        }
    }
    Ok(o)
}

fn aggregate(
    point: GridPoint,
    trials: u32,
    outcomes: Vec<Result<TrialOutcome, String>>,
) -> PointResult {
    let mut failure = None;
    let mut ok = Vec::with_capacity(outcomes.len());
    for r in outcomes {
        match r {
            Ok(o) => ok.push(o),
            Err(e) => {
                if failure.is_none() {
                    failure = Some(e);
                }
            }
        }
    }
    let failed = trials - ok.len() as u32;

    let mut fn_s = Vec::new();
    let mut fn_z = Vec::new();
    let mut fp_s = Vec::new();
    let mut fp_z = Vec::new();
    let mut counts = Vec::new();
    let mut eta_s = Vec::new();
    let mut att_s = Vec::new();
    let (mut fn_excl, mut fp_excl, mut eta_excl) = (0u32, 0u32, 0u32);

    for o in &ok {
        if o.cxc_eval > 0 {
            let v = o.cxc_acc as f64 / o.cxc_eval as f64;
            fn_s.push(v);
            fn_z.push(v);
        } else {
            fn_excl += 1;
            fn_z.push(0.0);
        }
        if o.hhh_eval > 0 {
            let v = (o.hhh_eval - o.hhh_acc) as f64 / o.hhh_eval as f64;
            fp_s.push(v);
            fp_z.push(v);
        } else {
            fp_excl += 1;
            fp_z.push(0.0);
        }
        counts.push([o.cxc_acc as f64, o.hhh_acc as f64, o.other_acc as f64]);
        let accepted_total = o.cxc_acc + o.hhh_acc + o.other_acc;
        if accepted_total > 0 {
            eta_s.push((o.attempts + o.probes) as f64 / accepted_total as f64);
        } else {
            eta_excl += 1;
        }
        att_s.push(o.attempts as f64);
    }

    let usage = pooled_usage(&counts, point.d, failed);

    PointResult {
        point,
        estimates: PointEstimates {
            fn_rate: Estimate::from_samples(&fn_s, fn_excl + failed),
            fn_rate_incl_zero: Estimate::from_samples(&fn_z, failed),
            fp_rate: Estimate::from_samples(&fp_s, fp_excl + failed),
            fp_rate_incl_zero: Estimate::from_samples(&fp_z, failed),
            pr_cxc: usage.pr_cxc,
            pr_hhh: usage.pr_hhh,
            pr_others: usage.pr_others,
            psi: usage.psi,
            eta: Estimate::from_samples(&eta_s, eta_excl + failed),
            phase1_attempts: Estimate::from_samples(&att_s, failed),
        },
        trials,
        failed_trials: failed,
        failure,
    }
}

struct UsageEstimates {
    pr_cxc: Estimate,
    pr_hhh: Estimate,
    pr_others: Estimate,
    psi: Estimate,
}

/// Usage shares from counts pooled over all trials, intervals by the
/// delta method on the per-trial (cxc, hhh, other) vectors. The security
/// metric is 1 - PrCXC: the displayed redefinition already folds its
/// (1-d) weight into the share's denominator, so applying the weight
/// again through the standalone formula would count it twice.
fn pooled_usage(counts: &[[f64; 3]], d: f64, failed: u32) -> UsageEstimates {
    let n = counts.len();
    let undefined = |excluded: u32| Estimate { mean: None, ci95: None, used: 0, excluded };
    if n == 0 {
        let e = undefined(failed);
        return UsageEstimates { pr_cxc: e, pr_hhh: e, pr_others: e, psi: e };
    }
    let nf = n as f64;
    let mean = |j: usize| counts.iter().map(|v| v[j]).sum::<f64>() / nf;
    let (mx, my, mz) = (mean(0), mean(1), mean(2));
    let (pc, ph, po) = match usage_probabilities(mx, my, mz, d) {
        Ok(shares) => shares,
        Err(_) => {
            // nothing was accepted in any trial
            let e = undefined(failed + n as u32);
            return UsageEstimates { pr_cxc: e, pr_hhh: e, pr_others: e, psi: e };
        }
    };

    let cov = if n >= 2 {
        let m = [mx, my, mz];
        let mut s = [[0.0f64; 3]; 3];
        for v in counts {
            for i in 0..3 {
                for j in 0..3 {
                    s[i][j] += (v[i] - m[i]) * (v[j] - m[j]);
                }
            }
        }
        for row in &mut s {
            for x in row {
                *x /= nf - 1.0;
            }
        }
        Some(s)
    } else {
        None
    };
    let w = 1.0 - d;
    let den = mx + my + w * mz;
    let hw = |grad: [f64; 3]| {
        cov.map(|s| {
            let mut var = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    var += grad[i] * s[i][j] * grad[j];
                }
            }
            // clamp: quadratic forms can go negative by rounding
            1.96 * (var.max(0.0) / nf).sqrt()
        })
    };
    let d2 = den * den;
    let ci_pc = hw([(den - mx) / d2, -mx / d2, -w * mx / d2]);
    let ci_ph = hw([-my / d2, (den - my) / d2, -w * my / d2]);
    let ci_po = hw([-w * mz / d2, -w * mz / d2, w * (den - w * mz) / d2]);
    let est = |mean: f64, ci: Option<f64>| Estimate {
        mean: Some(mean),
        ci95: ci,
        used: n as u32,
        excluded: failed,
    };
    UsageEstimates {
        pr_cxc: est(pc, ci_pc),
        pr_hhh: est(ph, ci_ph),
        pr_others: est(po, ci_po),
        psi: est(1.0 - pc, ci_pc),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyComparison {
    pub simple: EstimateSeries,
    pub shrewd: EstimateSeries,
}

/// Runs the same sweep under both drop strategies with identical seeds,
/// for side-by-side security comparison.
pub fn compare_strategies(cfg: &ExperimentConfig) -> Result<StrategyComparison, MonteCarloError> {
    let mut simple_cfg = cfg.clone();
    simple_cfg.strategy = StrategyKind::SimpleSelective;
    let mut shrewd_cfg = cfg.clone();
    shrewd_cfg.strategy = StrategyKind::Shrewd;
    Ok(StrategyComparison {
        simple: run_experiment(&simple_cfg)?,
        shrewd: run_experiment(&shrewd_cfg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_95_examples() {
        let constant = vec![0.4; 20];
        let (m, hw) = ci_95(&constant).unwrap();
        assert!((m - 0.4).abs() < 1e-12);
        assert!(hw.abs() < 1e-12);

        let mut half: Vec<f64> = vec![0.0; 50];
        half.extend(vec![1.0; 50]);
        let (m, hw) = ci_95(&half).unwrap();
        assert!((m - 0.5).abs() < 1e-15);
        assert!((hw - 0.09849370589540278).abs() < 1e-12, "{hw}");

        assert!(ci_95(&[0.5]).is_err());
        assert!(ci_95(&[]).is_err());
    }

    #[test]
    fn config_validation_catches_bad_grids() {
        let mut cfg = ExperimentConfig::new(1);
        cfg.t.clear();
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::new(1);
        cfg.trials = 1;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::new(1);
        cfg.k = vec![10];
        assert!(cfg.validate().is_err(), "K = N must be rejected");

        let mut cfg = ExperimentConfig::new(1);
        cfg.mode = Mode::Realistic;
        assert!(cfg.validate().is_err(), "realistic mode needs a directory");
    }

    #[test]
    fn experiment_is_deterministic() {
        let mut cfg = ExperimentConfig::new(77);
        cfg.trials = 40;
        cfg.f = vec![0.23];
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn benign_point_has_no_errors() {
        let mut cfg = ExperimentConfig::new(5);
        cfg.t = vec![0.0];
        cfg.g = vec![0.0];
        cfg.trials = 10;
        let series = run_experiment(&cfg).unwrap();
        let p = &series.points[0];
        assert_eq!(p.failed_trials, 0);
        assert_eq!(p.estimates.fp_rate.mean, Some(0.0));
        assert_eq!(p.estimates.psi.mean, Some(1.0));
        assert_eq!(p.estimates.phase1_attempts.mean, Some(10.0));
    }

    #[test]
    fn hopeless_point_records_failures_not_panics() {
        // g=1, t=0: every circuit CHH, full drop, nothing survives
        let mut cfg = ExperimentConfig::new(6);
        cfg.t = vec![0.0];
        cfg.g = vec![1.0];
        cfg.trials = 3;
        cfg.phase1_budget_factor = 10;
        let series = run_experiment(&cfg).unwrap();
        let p = &series.points[0];
        assert_eq!(p.failed_trials, 3);
        assert!(p.failure.as_deref().unwrap_or("").contains("budget"));
        assert_eq!(p.estimates.fn_rate.mean, None);
    }

    #[test]
    fn strategies_coincide_exactly_at_zero_drop() {
        let mut cfg = ExperimentConfig::new(9);
        cfg.d = vec![0.0];
        cfg.f = vec![0.23];
        cfg.trials = 30;
        let pair = compare_strategies(&cfg).unwrap();
        assert_eq!(pair.simple, pair.shrewd);
    }

    #[test]
    fn realistic_mode_runs_with_synthetic_directory() {
        let mut cfg = ExperimentConfig::new(11);
        cfg.mode = Mode::Realistic;
        cfg.directory = Some(DirectorySource::Synthetic {
            spec: SynthesisSpec { n_relays: 300, ..SynthesisSpec::default() },
        });
        cfg.trials = 10;
        cfg.f = vec![0.1];
        let series = run_experiment(&cfg).unwrap();
        let p = &series.points[0];
        assert_eq!(p.failed_trials, 0, "{:?}", p.failure);
        assert!(p.estimates.phase1_attempts.mean.unwrap() >= 10.0);
    }

    #[test]
    fn grid_order_is_row_major_in_declared_axis_order() {
        let mut cfg = ExperimentConfig::new(1);
        cfg.d = vec![0.0, 1.0];
        cfg.g = vec![0.0, 1.0 / 3.0];
        let pts = cfg.grid();
        assert_eq!(pts.len(), 4);
        assert_eq!((pts[0].g, pts[0].d), (0.0, 0.0));
        assert_eq!((pts[1].g, pts[1].d), (0.0, 1.0));
        assert_eq!((pts[2].g, pts[2].d), (1.0 / 3.0, 0.0));
    }
}
