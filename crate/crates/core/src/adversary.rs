//! Adversary drop strategies and the ambient failure gate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::CircuitClass;

/// What the adversary does with circuits it participates in but cannot
/// correlate. `Simple` tears down everything except fully honest and
/// both-endpoint-compromised circuits. `Shrewd` additionally lets every
/// compromised-exit circuit through, betting that those exits will later
/// be drawn as probe candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    None,
    SimpleSelective,
    Shrewd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversaryStrategy {
    pub kind: StrategyKind,
    /// probability a targeted circuit is dropped; 1 is the pure attack
    pub drop_rate: f64,
}

impl AdversaryStrategy {
    pub fn none() -> Self {
        AdversaryStrategy { kind: StrategyKind::None, drop_rate: 0.0 }
    }

    pub fn simple(drop_rate: f64) -> Self {
        AdversaryStrategy { kind: StrategyKind::SimpleSelective, drop_rate }
    }

    pub fn shrewd(drop_rate: f64) -> Self {
        AdversaryStrategy { kind: StrategyKind::Shrewd, drop_rate }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.drop_rate) || !self.drop_rate.is_finite() {
            return Err(format!("drop rate out of [0, 1]: {}", self.drop_rate));
        }
        Ok(())
    }

    /// Classes this strategy never touches.
    fn spared(&self, class: CircuitClass) -> bool {
        match self.kind {
            StrategyKind::None => true,
            StrategyKind::SimpleSelective => {
                class == CircuitClass::Hhh || class.is_cxc()
            }
            // keeps every compromised-exit circuit in circulation
            StrategyKind::Shrewd => class == CircuitClass::Hhh || class.exit_compromised(),
        }
    }
}

/// Per-retrieval network conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    /// probability an attempted retrieval fails for non-adversarial reasons
    pub failure_rate: f64,
}

impl Environment {
    pub fn new(failure_rate: f64) -> Self {
        Environment { failure_rate }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.failure_rate) || !self.failure_rate.is_finite() {
            return Err(format!("failure rate out of [0, 1): {}", self.failure_rate));
        }
        Ok(())
    }
}

impl Default for Environment {
    fn default() -> Self {
        // long-run ambient circuit failure rate observed in deployment data
        Environment { failure_rate: 0.23 }
    }
}

/// One adversary decision for one retrieval attempt. Decisions are
/// re-sampled per attempt: a circuit spared once may be dropped next
/// time. d = 0 consumes no randomness so strategies coincide exactly
/// there under shared streams.
pub fn circuit_survives_adversary(
    class: CircuitClass,
    strat: &AdversaryStrategy,
    rng: &mut impl Rng,
) -> bool {
    if strat.spared(class) {
        return true;
    }
    if strat.drop_rate <= 0.0 {
        return true;
    }
    rng.gen::<f64>() >= strat.drop_rate
}

/// Full retrieval gate: the adversary decision and an independent
/// ambient-failure draw. The failure draw is consumed even when the
/// adversary already dropped the circuit, so streams stay aligned
/// across strategies.
pub fn attempt_retrieval(
    class: CircuitClass,
    strat: &AdversaryStrategy,
    env: &Environment,
    rng: &mut impl Rng,
) -> bool {
    let survives = circuit_survives_adversary(class, strat, rng);
    let fails = env.failure_rate > 0.0 && rng.gen::<f64>() < env.failure_rate;
    survives && !fails
}

/// Whether using this circuit exposes the user: both endpoints observed.
pub fn is_compromised_usage(class: CircuitClass) -> bool {
    class.is_cxc()
}
