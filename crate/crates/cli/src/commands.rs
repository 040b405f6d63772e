//! The four subcommands. Each resolves its flag subset, runs the library,
//! and emits CSV (stdout without --out, files plus manifest with it).

use probesim::adversary::StrategyKind;
use probesim::analytic::{
    self, compute_n, crossover_tuning, param_ranges, AnalyticError, ModelParams, ThBracket,
};
use probesim::directory::SynthesisSpec;
use probesim::montecarlo::{
    compare_strategies, run_experiment, DirectorySource, Estimate, ExperimentConfig, Mode,
    MonteCarloError, PointEstimates, PointResult,
};

use crate::config::{self, NSpec, RangeSpec};
use crate::emit::{self, opt_sig6, sig6, RunManifest, NA};
use crate::{Failure, Flags, ModeArg, StrategyArg};

/// Default usage rate the pool-size rule is quoted for: six circuits per
/// hour, one per ten-minute interval.
const CIRCUITS_PER_HOUR: u32 = 6;

fn map_analytic(e: AnalyticError) -> Failure {
    match e {
        AnalyticError::BadParam(_) => Failure::Usage(e.to_string()),
        _ => Failure::Runtime(e.to_string()),
    }
}

fn map_mc(e: MonteCarloError) -> Failure {
    match e {
        MonteCarloError::BadConfig(_) => Failure::Usage(e.to_string()),
        _ => Failure::Runtime(e.to_string()),
    }
}

/// Degenerate closed-form cells render as the NA marker; anything else
/// is a real failure.
fn cell(r: Result<f64, AnalyticError>) -> Result<String, Failure> {
    match r {
        Ok(v) => Ok(sig6(v)),
        Err(AnalyticError::Degenerate(_)) => Ok(NA.to_string()),
        Err(e) => Err(map_analytic(e)),
    }
}

fn range_str(spec: RangeSpec) -> String {
    match spec {
        RangeSpec::One(v) => v.to_string(),
        RangeSpec::Span { lo, hi } => format!("{lo}..{hi}"),
        RangeSpec::UpToK => "1..K".to_string(),
    }
}

fn resolve_n(spec: Option<NSpec>, t: f64, g: f64, fallback: u32) -> Result<u32, Failure> {
    match spec {
        None => Ok(fallback),
        Some(NSpec::Given(v)) => Ok(v),
        Some(NSpec::Auto) => compute_n(t, g, CIRCUITS_PER_HOUR).map_err(map_analytic),
    }
}

pub fn analytic(flags: &Flags) -> Result<(), Failure> {
    let s = config::resolve(flags, &[1.0])?;
    let g = s.scalar_g()?;
    let d = s.scalar_d()?;
    if d != 1.0 {
        return Err(Failure::Usage(
            "the closed forms model the full-drop attack; --d must be 1".into(),
        ));
    }
    let n = resolve_n(s.n, s.t, g, 10)?;
    if n < 2 {
        return Err(Failure::Usage(format!("N must be at least 2, got {n}")));
    }

    let k_spec = s.k.unwrap_or(RangeSpec::Span { lo: 1, hi: n - 1 });
    let (k_lo, k_hi) = match k_spec {
        RangeSpec::One(v) => (v, v),
        RangeSpec::Span { lo, hi } => (lo, hi),
        RangeSpec::UpToK => return Err(Failure::Usage("--K cannot use the ..K form".into())),
    };
    if k_hi >= n {
        return Err(Failure::Usage(format!(
            "K must stay below N: requested K up to {k_hi} with N = {n}"
        )));
    }
    let th_spec = s.th.unwrap_or(RangeSpec::UpToK);

    let mut rows = Vec::new();
    for k in k_lo..=k_hi {
        let (th_lo, th_hi) = match th_spec {
            RangeSpec::One(v) => (v, v),
            RangeSpec::Span { lo, hi } => (lo, hi.min(k)),
            RangeSpec::UpToK => (1, k),
        };
        for th in th_lo..=th_hi.min(k) {
            let p = ModelParams { t: s.t, g, f: s.f, d: 1.0, n, k, th };
            rows.push(vec![
                k.to_string(),
                th.to_string(),
                cell(analytic::fn_rate_failures(&p))?,
                cell(analytic::fp_rate_failures(&p))?,
                cell(analytic::psi(&p))?,
                cell(analytic::eta(&p))?,
            ]);
        }
    }
    if rows.is_empty() {
        return Err(Failure::Usage("the requested (K, Th) grid is empty".into()));
    }

    let resolved = serde_json::json!({
        "command": "analytic",
        "t": s.t, "g": g, "f": s.f, "d": 1.0, "n": n,
        "k": range_str(k_spec), "th": range_str(th_spec),
        "seed": s.seed,
    });
    let hash = config::config_hash(&resolved);
    let text = emit::csv_text("analytic", &hash, s.seed, "K,Th,fn,fp,psi,eta", &rows);

    match &s.out {
        Some(dir) => {
            emit::announce_seed(s.seed, s.seed_was_chosen);
            let mut manifest = RunManifest::new("analytic", &hash, s.seed, resolved);
            emit::write_outputs(dir, &[("analytic.csv".into(), text)], &mut manifest)
        }
        None => emit::print_text(&text),
    }
}

struct MetricColumn {
    file: &'static str,
    pick: fn(&PointEstimates) -> &Estimate,
}

/// FN and FP use the include-zero convention, the one the closed forms
/// marginalize over, so these series line up with `analytic` output.
const METRICS: [MetricColumn; 6] = [
    MetricColumn { file: "fn.csv", pick: |e| &e.fn_rate_incl_zero },
    MetricColumn { file: "fp.csv", pick: |e| &e.fp_rate_incl_zero },
    MetricColumn { file: "pr_cxc.csv", pick: |e| &e.pr_cxc },
    MetricColumn { file: "pr_hhh.csv", pick: |e| &e.pr_hhh },
    MetricColumn { file: "psi.csv", pick: |e| &e.psi },
    MetricColumn { file: "eta.csv", pick: |e| &e.eta },
];

fn sorted_by_grid(points: &[PointResult]) -> Vec<&PointResult> {
    let mut refs: Vec<&PointResult> = points.iter().collect();
    refs.sort_by(|a, b| {
        a.point
            .d
            .total_cmp(&b.point.d)
            .then(a.point.g.total_cmp(&b.point.g))
    });
    refs
}

fn metric_rows(points: &[&PointResult], pick: fn(&PointEstimates) -> &Estimate) -> Vec<Vec<String>> {
    points
        .iter()
        .map(|p| {
            let e = pick(&p.estimates);
            vec![sig6(p.point.d), sig6(p.point.g), opt_sig6(e.mean), opt_sig6(e.ci95)]
        })
        .collect()
}

pub fn simulate(flags: &Flags) -> Result<(), Failure> {
    let full_grid: Vec<f64> = (0..=10).map(|i| f64::from(i) / 10.0).collect();
    let s = config::resolve(flags, &full_grid)?;

    if s.n == Some(NSpec::Auto) && s.g.len() > 1 {
        return Err(Failure::Usage(
            "--N auto needs a single --g value to size the pool from".into(),
        ));
    }
    let n = resolve_n(s.n, s.t, s.g.first().copied().unwrap_or(0.0), 10)?;
    let k = match s.k.unwrap_or(RangeSpec::One(3)) {
        RangeSpec::One(v) => v,
        _ => return Err(Failure::Usage("simulate takes a single --K value".into())),
    };
    let th = match s.th.unwrap_or(RangeSpec::One(2)) {
        RangeSpec::One(v) => v,
        _ => return Err(Failure::Usage("simulate takes a single --Th value".into())),
    };

    let directory = match (s.mode, &s.dir) {
        (ModeArg::Realistic, Some(path)) => Some(DirectorySource::Csv { path: path.clone() }),
        (ModeArg::Realistic, None) => {
            Some(DirectorySource::Synthetic { spec: SynthesisSpec::default() })
        }
        (ModeArg::Match, Some(_)) => {
            eprintln!("note: --dir only applies to realistic mode; ignoring it");
            None
        }
        (ModeArg::Match, None) => None,
    };

    let cfg = ExperimentConfig {
        t: vec![s.t],
        g: s.g.clone(),
        f: vec![s.f],
        d: s.d.clone(),
        n: vec![n],
        k: vec![k],
        th: vec![th],
        trials: s.trials,
        mode: match s.mode {
            ModeArg::Match => Mode::Match,
            ModeArg::Realistic => Mode::Realistic,
        },
        strategy: match s.strategy {
            StrategyArg::None => StrategyKind::None,
            StrategyArg::Simple => StrategyKind::SimpleSelective,
            StrategyArg::Shrewd => StrategyKind::Shrewd,
        },
        randomize_middle: s.randomize_middle,
        master_seed: s.seed,
        directory,
        guards_g: s.guards_g,
        phase1_budget_factor: s.phase1_budget_factor,
    };

    let resolved = serde_json::json!({
        "command": "simulate",
        "experiment": serde_json::to_value(&cfg)
            .map_err(|e| Failure::Runtime(format!("config serialization: {e}")))?,
    });
    let hash = config::config_hash(&resolved);

    emit::announce_seed(s.seed, s.seed_was_chosen);

    // shrewd runs are paired: the same sweep under both strategies with
    // identical seeds, plus the per-metric series of the shrewd arm
    let (series, paired) = if s.strategy == StrategyArg::Shrewd {
        let cmp = compare_strategies(&cfg).map_err(map_mc)?;
        (cmp.shrewd.clone(), Some(cmp))
    } else {
        (run_experiment(&cfg).map_err(map_mc)?, None)
    };

    let ordered = sorted_by_grid(&series.points);
    let mut files = Vec::new();
    for m in METRICS {
        let rows = metric_rows(&ordered, m.pick);
        files.push((m.file.to_string(), emit::csv_text("simulate", &hash, s.seed, "d,g,mean,ci95", &rows)));
    }

    if let Some(cmp) = paired {
        let simple = sorted_by_grid(&cmp.simple.points);
        let shrewd = sorted_by_grid(&cmp.shrewd.points);
        let rows: Vec<Vec<String>> = simple
            .iter()
            .zip(&shrewd)
            .map(|(si, sh)| {
                let (a, b) = (&si.estimates.psi, &sh.estimates.psi);
                let gap = match (b.mean, a.mean) {
                    (Some(x), Some(y)) => sig6(x - y),
                    _ => NA.to_string(),
                };
                vec![
                    sig6(si.point.d),
                    sig6(si.point.g),
                    opt_sig6(a.mean),
                    opt_sig6(a.ci95),
                    opt_sig6(b.mean),
                    opt_sig6(b.ci95),
                    gap,
                ]
            })
            .collect();
        files.push((
            "strategy_comparison.csv".to_string(),
            emit::csv_text(
                "simulate",
                &hash,
                s.seed,
                "d,g,psi_simple,ci95_simple,psi_shrewd,ci95_shrewd,gap",
                &rows,
            ),
        ));
    }

    let dir = emit::out_dir_or(&s.out, "out");
    let mut manifest = RunManifest::new("simulate", &hash, s.seed, resolved);
    emit::write_outputs(&dir, &files, &mut manifest)
}

fn bracket_cells(b: ThBracket) -> (String, String) {
    match b {
        ThBracket::Pair { lo, hi } => (lo.to_string(), hi.to_string()),
        ThBracket::BelowRange => ("below".to_string(), "below".to_string()),
        ThBracket::AboveRange => ("above".to_string(), "above".to_string()),
    }
}

pub fn crossover(flags: &Flags) -> Result<(), Failure> {
    let s = config::resolve(flags, &[1.0])?;
    let g = s.scalar_g()?;
    let d = s.scalar_d()?;
    if d != 1.0 {
        return Err(Failure::Usage(
            "crossover curves model the full-drop attack; --d must be 1".into(),
        ));
    }

    let (show_lo, k_max) = match s.k.unwrap_or(RangeSpec::One(10)) {
        RangeSpec::One(v) => (1, v),
        RangeSpec::Span { lo, hi } => (lo, hi),
        RangeSpec::UpToK => return Err(Failure::Usage("--K cannot use the ..K form".into())),
    };
    // the scan needs N > K; one spare slot is the tightest pool that
    // admits every requested K
    let n = resolve_n(s.n, s.t, g, k_max + 1)?;

    let points = crossover_tuning(s.t, g, s.f, 1.0, n, k_max).map_err(map_analytic)?;
    let rows: Vec<Vec<String>> = points
        .iter()
        .filter(|p| p.k >= show_lo)
        .map(|p| {
            let (lo, hi) = bracket_cells(p.no_failure);
            let (lo_f, hi_f) = bracket_cells(p.with_failures);
            vec![p.k.to_string(), lo, hi, lo_f, hi_f]
        })
        .collect();

    let resolved = serde_json::json!({
        "command": "crossover",
        "t": s.t, "g": g, "f": s.f, "d": 1.0, "n": n,
        "k_max": k_max, "k_from": show_lo,
        "seed": s.seed,
    });
    let hash = config::config_hash(&resolved);
    let text = emit::csv_text(
        "crossover",
        &hash,
        s.seed,
        "K,th_lo,th_hi,th_lo_failures,th_hi_failures",
        &rows,
    );

    match &s.out {
        Some(dir) => {
            emit::announce_seed(s.seed, s.seed_was_chosen);
            let mut manifest = RunManifest::new("crossover", &hash, s.seed, resolved);
            emit::write_outputs(dir, &[("crossover.csv".into(), text)], &mut manifest)
        }
        None => emit::print_text(&text),
    }
}

pub fn params(flags: &Flags) -> Result<(), Failure> {
    let s = config::resolve(flags, &[1.0])?;
    let g = s.scalar_g()?;
    for (v, name) in [(s.t, "t"), (g, "g")] {
        if !(0.0..=1.0).contains(&v) || !v.is_finite() {
            return Err(Failure::Usage(format!("--{name} must lie in [0, 1], got {v}")));
        }
    }

    let mut lines = Vec::new();
    let computed = match compute_n(s.t, g, CIRCUITS_PER_HOUR) {
        Ok(v) => {
            lines.push(format!(
                "pool size N for {CIRCUITS_PER_HOUR} usable circuits per hour at t = {}, g = {}: {v}",
                sig6(s.t),
                sig6(g)
            ));
            Some(v)
        }
        Err(AnalyticError::Degenerate(msg)) => {
            lines.push(format!("pool size undefined: {msg}"));
            None
        }
        Err(e) => return Err(map_analytic(e)),
    };
    let n = match s.n {
        Some(NSpec::Given(v)) => Some(v),
        _ => computed,
    };

    match n {
        None => lines.push("tuning ranges skipped: no usable pool size".to_string()),
        Some(n) => {
            lines.push(format!("pool size used for tuning ranges: N = {n}"));
            match param_ranges(s.t, g, n) {
                Ok(r) => {
                    lines.push(format!("expected correlated circuits in the pool: {}", sig6(r.n_cxc)));
                    lines.push(format!(
                        "candidate-multiplier interval: ({}, {}){}",
                        sig6(r.m_lo),
                        sig6(r.m_hi),
                        if r.empty { "  [empty: compromised mass >= honest mass]" } else { "" }
                    ));
                    lines.push(format!(
                        "K interval (open): ({}, {})",
                        sig6(r.k_lo),
                        sig6(r.k_hi)
                    ));
                    lines.push("threshold rule: pick Th in (K - expected correlated, K]".to_string());
                    if let Some(RangeSpec::One(k)) = s.k {
                        lines.push(format!(
                            "at K = {k}: Th in ({}, {k}]",
                            sig6(r.th_lo_for(f64::from(k)))
                        ));
                    }
                }
                Err(AnalyticError::BadParam(msg)) => {
                    lines.push(format!("tuning ranges undefined: {msg}"));
                }
                Err(e) => return Err(map_analytic(e)),
            }
        }
    }

    let resolved = serde_json::json!({
        "command": "params",
        "t": s.t, "g": g, "n": n, "seed": s.seed,
    });
    let hash = config::config_hash(&resolved);
    let mut text = format!(
        "# probesim {} params\n# config {hash}\n# seed {}\n",
        env!("CARGO_PKG_VERSION"),
        s.seed
    );
    for line in &lines {
        text.push_str(line);
        text.push('\n');
    }

    match &s.out {
        Some(dir) => {
            emit::announce_seed(s.seed, s.seed_was_chosen);
            let mut manifest = RunManifest::new("params", &hash, s.seed, resolved);
            emit::write_outputs(dir, &[("params.txt".into(), text)], &mut manifest)
        }
        None => emit::print_text(&text),
    }
}
