//! Two-phase circuit vetting: accumulate N working circuits, then probe
//! each against exits borrowed from the others and keep the ones that
//! reach the acceptance threshold.

use crate::adversary::{attempt_retrieval, AdversaryStrategy, Environment};
use crate::circuit::{
    make_probe_circuit, probe_compatible, Circuit, CircuitClass, CircuitError,
    CircuitSource,
};
use crate::rng::StreamKey;

#[derive(Debug, thiserror::Error)]
pub enum DetectionError {
    #[error("bad detection parameters: {0}")]
    BadParams(String),
    #[error(
        "phase 1 attempt budget exhausted: built {built} of {wanted} circuits in {attempts} attempts"
    )]
    BudgetExhausted { wanted: u32, built: u32, attempts: u64 },
    #[error(transparent)]
    Circuit(#[from] CircuitError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionParams {
    n: u32,
    k: u32,
    th: u32,
}

impl DetectionParams {
    pub fn new(n: u32, k: u32, th: u32) -> Result<Self, DetectionError> {
        if n < 2 {
            return Err(DetectionError::BadParams(format!("N must be >= 2, got {n}")));
        }
        if k < 1 || k >= n {
            return Err(DetectionError::BadParams(format!(
                "K must satisfy 1 <= K < N, got K={k}, N={n}"
            )));
        }
        if th < 1 || th > k {
            return Err(DetectionError::BadParams(format!(
                "Th must satisfy 1 <= Th <= K, got Th={th}, K={k}"
            )));
        }
        Ok(DetectionParams { n, k, th })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn th(&self) -> u32 {
        self.th
    }
}

#[derive(Debug, Clone)]
pub struct Phase1Run {
    pub circuits: Vec<Circuit>,
    pub attempts: u64,
}

/// Builds circuits until `n` have each passed one retrieval attempt.
/// `attempt_budget` bounds the loop: configurations where nothing can
/// survive (all-compromised guards with full dropping and no
/// correlatable exits) would otherwise never terminate.
pub fn phase1(
    source: &mut CircuitSource,
    strat: &AdversaryStrategy,
    env: &Environment,
    n: u32,
    attempt_budget: u64,
    key: StreamKey,
) -> Result<Phase1Run, DetectionError> {
    let mut circuits = Vec::with_capacity(n as usize);
    let mut attempts = 0u64;
    while circuits.len() < n as usize {
        if attempts >= attempt_budget {
            return Err(DetectionError::BudgetExhausted {
                wanted: n,
                built: circuits.len() as u32,
                attempts,
            });
        }
        let mut rng = key.child(attempts).rng();
        let circuit = source.build(&mut rng)?;
        attempts += 1;
        if attempt_retrieval(circuit.class(), strat, env, &mut rng) {
            circuits.push(circuit);
        }
    }
    Ok(Phase1Run { circuits, attempts })
}

/// Verdict on one phase-1 circuit. `k_prime` is the number of probes
/// actually sent (shrunk when fewer compatible candidates exist than K)
/// and `th_prime` the correspondingly clamped threshold. A circuit that
/// died before evaluation carries `pre_failed` and counts as rejected.
#[derive(Debug, Clone, Copy)]
pub struct Evaluation {
    pub circuit: Circuit,
    pub class: CircuitClass,
    pub pre_failed: bool,
    pub k_prime: u32,
    pub th_prime: u32,
    pub successes: u32,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct Phase2Run {
    pub evaluations: Vec<Evaluation>,
    pub probes: u64,
}

/// Probes every circuit in `pool` against exits borrowed from the other
/// pool members: K distinct candidates per circuit, drawn without
/// replacement in seeded random order, skipping candidates whose exit
/// would violate path constraints against the evaluated circuit. With
/// `randomize_middle` each probe swaps in a freshly drawn middle hop.
///
/// A pool smaller than 2 degenerates gracefully: zero candidates mean
/// zero probes and a trivially met threshold, mirroring the K' clamp in
/// the closed-form model.
pub fn phase2(
    pool: &[Circuit],
    params: &DetectionParams,
    strat: &AdversaryStrategy,
    env: &Environment,
    source: &mut CircuitSource,
    randomize_middle: bool,
    key: StreamKey,
) -> Result<Phase2Run, DetectionError> {
    let mut evaluations = Vec::with_capacity(pool.len());
    let mut total_probes = 0u64;

    for (i, base) in pool.iter().enumerate() {
        let eval_key = key.child(i as u64);
        let mut order: Vec<usize> = (0..pool.len()).filter(|&j| j != i).collect();
        {
            use rand::seq::SliceRandom;
            let mut sel_rng = eval_key.child(0).rng();
            order.shuffle(&mut sel_rng);
        }

        let mut successes = 0u32;
        let mut probes = 0u32;
        for (slot, &j) in order.iter().enumerate() {
            if probes == params.k {
                break;
            }
            let mut probe_rng = eval_key.child(2 + slot as u64).rng();
            let cand = &pool[j];
            let middle = if randomize_middle {
                source.fresh_middle(&base.entry, &cand.exit, &mut probe_rng)?
            } else {
                None
            };
            if !probe_compatible(base, &cand.exit, middle.as_ref()) {
                continue;
            }
            let probe = make_probe_circuit(base, cand, middle.as_ref())?;
            probes += 1;
            if attempt_retrieval(probe.class(), strat, env, &mut probe_rng) {
                successes += 1;
            }
        }

        let th_prime = params.th.min(probes);
        evaluations.push(Evaluation {
            circuit: *base,
            class: base.class(),
            pre_failed: false,
            k_prime: probes,
            th_prime,
            successes,
            accepted: successes >= th_prime,
        });
        total_probes += probes as u64;
    }
    Ok(Phase2Run { evaluations, probes: total_probes })
}

#[derive(Debug, Clone, Copy)]
pub struct DetectionConfig {
    pub params: DetectionParams,
    pub strat: AdversaryStrategy,
    pub env: Environment,
    pub randomize_middle: bool,
    /// Analytic-matching failure semantics: each phase-1 circuit dies
    /// once with probability f before evaluation (population thinning),
    /// and probes then face f independently. Off in realistic runs,
    /// where f acts per attempt only.
    pub interphase_thinning: bool,
    pub phase1_attempt_budget: u64,
}

#[derive(Debug, Clone)]
pub struct DetectionResult {
    /// one entry per phase-1 circuit, in build order
    pub evaluations: Vec<Evaluation>,
    pub phase1_attempts: u64,
    pub phase2_probes: u64,
}

impl DetectionResult {
    pub fn accepted(&self) -> impl Iterator<Item = &Evaluation> {
        self.evaluations.iter().filter(|e| e.accepted)
    }

    pub fn rejected(&self) -> impl Iterator<Item = &Evaluation> {
        self.evaluations.iter().filter(|e| !e.accepted)
    }
}

/// Phase 1 followed by phase 2, deterministic per (source, key).
pub fn run_detection(
    cfg: &DetectionConfig,
    source: &mut CircuitSource,
    key: StreamKey,
) -> Result<DetectionResult, DetectionError> {
    cfg.strat.validate().map_err(DetectionError::BadParams)?;
    cfg.env.validate().map_err(DetectionError::BadParams)?;
    let p1 = phase1(
        source,
        &cfg.strat,
        &cfg.env,
        cfg.params.n,
        cfg.phase1_attempt_budget,
        key.child(0),
    )?;

    let f = cfg.env.failure_rate;
    let thin_key = key.child(1);
    let alive_mask: Vec<bool> = p1
        .circuits
        .iter()
        .enumerate()
        .map(|(i, _)| {
            if cfg.interphase_thinning && f > 0.0 {
                use rand::Rng;
                let mut rng = thin_key.child(i as u64).rng();
                rng.gen::<f64>() >= f
            } else {
                true
            }
        })
        .collect();

    let alive: Vec<Circuit> = p1
        .circuits
        .iter()
        .zip(&alive_mask)
        .filter(|(_, &a)| a)
        .map(|(c, _)| *c)
        .collect();

    let p2 = phase2(
        &alive,
        &cfg.params,
        &cfg.strat,
        &cfg.env,
        source,
        cfg.randomize_middle,
        key.child(2),
    )?;

    // stitch evaluations back into phase-1 order, dead circuits rejected
    let mut evaluations = Vec::with_capacity(p1.circuits.len());
    let mut alive_iter = p2.evaluations.into_iter();
    for (circuit, alive) in p1.circuits.iter().zip(&alive_mask) {
        if *alive {
            evaluations.push(alive_iter.next().expect("one evaluation per alive circuit"));
        } else {
            evaluations.push(Evaluation {
                circuit: *circuit,
                class: circuit.class(),
                pre_failed: true,
                k_prime: 0,
                th_prime: 0,
                successes: 0,
                accepted: false,
            });
        }
    }

    Ok(DetectionResult {
        evaluations,
        phase1_attempts: p1.attempts,
        phase2_probes: p2.probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::HopInfo;

    fn hop(id: u64, comp: bool) -> HopInfo {
        HopInfo { id, compromised: comp, subnet: None, family: None }
    }

    fn circuit(id0: u64, e: bool, m: bool, x: bool) -> Circuit {
        Circuit { entry: hop(id0, e), middle: hop(id0 + 1, m), exit: hop(id0 + 2, x) }
    }

    fn params(n: u32, k: u32, th: u32) -> DetectionParams {
        DetectionParams::new(n, k, th).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(DetectionParams::new(1, 1, 1).is_err());
        assert!(DetectionParams::new(10, 10, 2).is_err());
        assert!(DetectionParams::new(10, 3, 0).is_err());
        assert!(DetectionParams::new(10, 3, 4).is_err());
        assert!(DetectionParams::new(10, 3, 3).is_ok());
    }

    #[test]
    fn phase1_without_interference_uses_exactly_n_attempts() {
        let mut src = CircuitSource::model(0.3, 0.2).unwrap();
        let run = phase1(
            &mut src,
            &AdversaryStrategy::none(),
            &Environment::new(0.0),
            10,
            10_000,
            StreamKey::root(1),
        )
        .unwrap();
        assert_eq!(run.circuits.len(), 10);
        assert_eq!(run.attempts, 10);
    }

    #[test]
    fn phase1_survivors_under_full_drop_are_hhh_or_cxc() {
        let mut src = CircuitSource::model(1.0 / 3.0, 0.2).unwrap();
        let run = phase1(
            &mut src,
            &AdversaryStrategy::simple(1.0),
            &Environment::new(0.0),
            50,
            100_000,
            StreamKey::root(2),
        )
        .unwrap();
        for c in &run.circuits {
            let class = c.class();
            assert!(class == CircuitClass::Hhh || class.is_cxc(), "{class:?}");
        }
    }

    #[test]
    fn phase1_attempt_count_matches_survival_probability() {
        // survival ~ gt + (1-g)(1-t)^2 = 0.4933 at t=0.2, g=1/3
        let mut src = CircuitSource::model(1.0 / 3.0, 0.2).unwrap();
        let mut total = 0u64;
        for rep in 0..200u64 {
            let run = phase1(
                &mut src,
                &AdversaryStrategy::simple(1.0),
                &Environment::new(0.0),
                10,
                1_000_000,
                StreamKey::root(3).child(rep),
            )
            .unwrap();
            total += run.attempts;
        }
        let mean = total as f64 / 200.0;
        let expect = 10.0 / (1.0 / 15.0 + (2.0 / 3.0) * 0.64);
        assert!((mean - expect).abs() / expect < 0.05, "mean {mean}, expect {expect}");
    }

    #[test]
    fn phase1_budget_exhaustion_is_an_error() {
        // every circuit CHH, full drop: nothing can ever survive
        let mut src = CircuitSource::model(1.0, 0.0).unwrap();
        let err = phase1(
            &mut src,
            &AdversaryStrategy::simple(1.0),
            &Environment::new(0.0),
            5,
            1000,
            StreamKey::root(4),
        );
        assert!(matches!(err, Err(DetectionError::BudgetExhausted { .. })));
    }

    #[test]
    fn all_honest_pool_is_fully_accepted() {
        let pool: Vec<Circuit> = (0..10).map(|i| circuit(i * 3, false, false, false)).collect();
        let mut src = CircuitSource::model(0.0, 0.0).unwrap();
        let run = phase2(
            &pool,
            &params(10, 3, 2),
            &AdversaryStrategy::simple(1.0),
            &Environment::new(0.0),
            &mut src,
            false,
            StreamKey::root(5),
        )
        .unwrap();
        assert!(run.evaluations.iter().all(|e| e.accepted));
        assert_eq!(run.probes, 30);
    }

    #[test]
    fn all_cxc_pool_is_fully_accepted() {
        let pool: Vec<Circuit> = (0..10).map(|i| circuit(i * 3, true, false, true)).collect();
        let mut src = CircuitSource::model(0.0, 0.0).unwrap();
        let run = phase2(
            &pool,
            &params(10, 3, 2),
            &AdversaryStrategy::simple(1.0),
            &Environment::new(0.0),
            &mut src,
            false,
            StreamKey::root(6),
        )
        .unwrap();
        assert!(run.evaluations.iter().all(|e| e.accepted));
    }

    #[test]
    fn lone_compromised_circuit_is_always_caught() {
        // no compromised candidate exists, so its probes all fail
        for seed in 0..20 {
            let mut pool: Vec<Circuit> =
                (0..9).map(|i| circuit(i * 3, false, false, false)).collect();
            pool.push(circuit(27, true, false, true));
            let mut src = CircuitSource::model(0.0, 0.0).unwrap();
            let run = phase2(
                &pool,
                &params(10, 3, 2),
                &AdversaryStrategy::simple(1.0),
                &Environment::new(0.0),
                &mut src,
                false,
                StreamKey::root(100 + seed),
            )
            .unwrap();
            assert!(!run.evaluations[9].accepted);
            assert!(run.evaluations[..9].iter().all(|e| e.accepted));
        }
    }

    #[test]
    fn probe_outcomes_for_the_four_class_pairings() {
        // evaluatee honest/CXC x candidate honest/CXC at f=0, d=1
        let honest = circuit(0, false, false, false);
        let cxc = circuit(3, true, false, true);
        let strat = AdversaryStrategy::simple(1.0);
        let env = Environment::new(0.0);
        let mut rng = StreamKey::root(7).rng();
        for (base, cand, expect) in [
            (&honest, &honest, true), // HHH goes through
            (&honest, &cxc, false),   // HHC dropped
            (&cxc, &honest, false),   // CHH dropped
            (&cxc, &cxc, true),       // CHC correlates
        ] {
            let probe = make_probe_circuit(base, cand, None).unwrap();
            assert_eq!(attempt_retrieval(probe.class(), &strat, &env, &mut rng), expect);
        }
    }

    #[test]
    fn run_detection_accepts_everything_in_benign_world() {
        let mut src = CircuitSource::model(0.0, 0.0).unwrap();
        let cfg = DetectionConfig {
            params: params(10, 3, 2),
            strat: AdversaryStrategy::none(),
            env: Environment::new(0.0),
            randomize_middle: false,
            interphase_thinning: true,
            phase1_attempt_budget: 10_000,
        };
        let res = run_detection(&cfg, &mut src, StreamKey::root(8)).unwrap();
        assert_eq!(res.evaluations.len(), 10);
        assert_eq!(res.accepted().count(), 10);
        assert_eq!(res.phase1_attempts, 10);
        assert_eq!(res.phase2_probes, 30);
    }

    #[test]
    fn hopeless_guard_set_accepts_only_cxc() {
        // g=1: every surviving circuit has a compromised entry
        let mut src = CircuitSource::model(1.0, 0.2).unwrap();
        let cfg = DetectionConfig {
            params: params(10, 3, 2),
            strat: AdversaryStrategy::simple(1.0),
            env: Environment::new(0.0),
            randomize_middle: false,
            interphase_thinning: true,
            phase1_attempt_budget: 1_000_000,
        };
        let res = run_detection(&cfg, &mut src, StreamKey::root(9)).unwrap();
        assert!(res.accepted().count() > 0);
        for e in res.accepted() {
            assert!(e.class.is_cxc());
        }
    }

    #[test]
    fn thinning_marks_dead_circuits_rejected() {
        let mut src = CircuitSource::model(0.0, 0.0).unwrap();
        let cfg = DetectionConfig {
            params: params(20, 3, 2),
            strat: AdversaryStrategy::none(),
            env: Environment::new(0.4),
            randomize_middle: false,
            interphase_thinning: true,
            phase1_attempt_budget: 100_000,
        };
        let res = run_detection(&cfg, &mut src, StreamKey::root(10)).unwrap();
        let dead = res.evaluations.iter().filter(|e| e.pre_failed).count();
        assert!(dead > 0, "expected some interphase deaths at f=0.4");
        assert!(res.evaluations.iter().filter(|e| e.pre_failed).all(|e| !e.accepted));
        // alive circuits probe only among themselves
        let alive = res.evaluations.len() - dead;
        for e in res.evaluations.iter().filter(|e| !e.pre_failed) {
            assert_eq!(e.k_prime, (3u32).min(alive as u32 - 1));
        }
    }

    #[test]
    fn detection_is_deterministic_per_key() {
        let run = || {
            let mut src = CircuitSource::model(1.0 / 3.0, 0.2).unwrap();
            let cfg = DetectionConfig {
                params: params(10, 3, 2),
                strat: AdversaryStrategy::simple(1.0),
                env: Environment::new(0.23),
                randomize_middle: false,
                interphase_thinning: true,
                phase1_attempt_budget: 1_000_000,
            };
            let res = run_detection(&cfg, &mut src, StreamKey::root(11)).unwrap();
            (
                res.phase1_attempts,
                res.phase2_probes,
                res.evaluations.iter().map(|e| e.accepted).collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }
}
