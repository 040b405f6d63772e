//! Circuits: three hops, their compromise class, and probe assembly.

use rand::Rng;

use crate::directory::{
    weighted_sample, Directory, DirectoryError, Exclusions, GuardSet, Role,
};

#[derive(Debug, thiserror::Error)]
pub enum CircuitError {
    #[error(transparent)]
    Directory(#[from] DirectoryError),
    #[error("probe constraint violation: {0}")]
    ConstraintViolation(String),
    #[error("probability out of [0, 1]: {0}")]
    BadProbability(f64),
}

/// One hop as the client experiences it. In network mode `id` is the
/// directory index and `subnet`/`family` carry the interned attributes;
/// in model mode every hop gets a fresh id and no shared attributes, so
/// hops from different circuits never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HopInfo {
    pub id: u64,
    pub compromised: bool,
    pub subnet: Option<u32>,
    pub family: Option<u32>,
}

impl HopInfo {
    pub fn conflicts_with(&self, other: &HopInfo) -> bool {
        if self.id == other.id {
            return true;
        }
        if let (Some(a), Some(b)) = (self.subnet, other.subnet) {
            if a == b {
                return true;
            }
        }
        if let (Some(a), Some(b)) = (self.family, other.family) {
            if a == b {
                return true;
            }
        }
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Circuit {
    pub entry: HopInfo,
    pub middle: HopInfo,
    pub exit: HopInfo,
}

impl Circuit {
    pub fn class(&self) -> CircuitClass {
        CircuitClass::of(
            self.entry.compromised,
            self.middle.compromised,
            self.exit.compromised,
        )
    }
}

/// Compromise pattern of (entry, middle, exit); C = compromised hop,
/// H = honest hop. Endpoint compromise is what matters for correlation,
/// so CHC and CCC form the dangerous group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CircuitClass {
    Hhh,
    Hhc,
    Hch,
    Chh,
    Cch,
    Chc,
    Hcc,
    Ccc,
}

impl CircuitClass {
    pub fn of(entry: bool, middle: bool, exit: bool) -> Self {
        match (entry, middle, exit) {
            (false, false, false) => CircuitClass::Hhh,
            (false, false, true) => CircuitClass::Hhc,
            (false, true, false) => CircuitClass::Hch,
            (true, false, false) => CircuitClass::Chh,
            (true, true, false) => CircuitClass::Cch,
            (true, false, true) => CircuitClass::Chc,
            (false, true, true) => CircuitClass::Hcc,
            (true, true, true) => CircuitClass::Ccc,
        }
    }

    pub fn entry_compromised(self) -> bool {
        matches!(
            self,
            CircuitClass::Chh | CircuitClass::Cch | CircuitClass::Chc | CircuitClass::Ccc
        )
    }

    pub fn exit_compromised(self) -> bool {
        matches!(
            self,
            CircuitClass::Hhc | CircuitClass::Chc | CircuitClass::Hcc | CircuitClass::Ccc
        )
    }

    pub fn middle_compromised(self) -> bool {
        matches!(
            self,
            CircuitClass::Hch | CircuitClass::Cch | CircuitClass::Hcc | CircuitClass::Ccc
        )
    }

    /// Both endpoints compromised: traffic correlation is possible.
    pub fn is_cxc(self) -> bool {
        self.entry_compromised() && self.exit_compromised()
    }

    pub const ALL: [CircuitClass; 8] = [
        CircuitClass::Hhh,
        CircuitClass::Hhc,
        CircuitClass::Hch,
        CircuitClass::Chh,
        CircuitClass::Cch,
        CircuitClass::Chc,
        CircuitClass::Hcc,
        CircuitClass::Ccc,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CircuitClass::Hhh => "HHH",
            CircuitClass::Hhc => "HHC",
            CircuitClass::Hch => "HCH",
            CircuitClass::Chh => "CHH",
            CircuitClass::Cch => "CCH",
            CircuitClass::Chc => "CHC",
            CircuitClass::Hcc => "HCC",
            CircuitClass::Ccc => "CCC",
        }
    }
}

/// Where circuits come from.
///
/// `Model` draws hop compromise directly: the entry is compromised with
/// probability `guard_comp` (the compromised share of the pinned guard
/// set) and middle/exit each with probability `relay_comp` (the
/// compromised bandwidth fraction). This is the regime the closed-form
/// analysis describes. `Network` builds circuits against a directory
/// with bandwidth weighting, a pinned guard set, and /16 + family
/// constraints.
pub enum CircuitSource<'a> {
    Model {
        guard_comp: f64,
        relay_comp: f64,
        next_id: u64,
    },
    Network {
        dir: &'a Directory,
        guards: &'a GuardSet,
    },
}

impl<'a> CircuitSource<'a> {
    pub fn model(guard_comp: f64, relay_comp: f64) -> Result<Self, CircuitError> {
        for p in [guard_comp, relay_comp] {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(CircuitError::BadProbability(p));
            }
        }
        Ok(CircuitSource::Model { guard_comp, relay_comp, next_id: 0 })
    }

    pub fn network(dir: &'a Directory, guards: &'a GuardSet) -> Self {
        CircuitSource::Network { dir, guards }
    }

    /// Builds one circuit. Hops are drawn entry, middle, exit, in that
    /// order; callers relying on reproducibility get it from the rng
    /// stream they pass in.
    pub fn build(&mut self, rng: &mut impl Rng) -> Result<Circuit, CircuitError> {
        match self {
            CircuitSource::Model { guard_comp, relay_comp, next_id } => {
                let mut fresh = |comp: bool| {
                    let hop = HopInfo {
                        id: *next_id,
                        compromised: comp,
                        subnet: None,
                        family: None,
                    };
                    *next_id += 1;
                    hop
                };
                let entry = {
                    let c = rng.gen::<f64>() < *guard_comp;
                    fresh(c)
                };
                let middle = {
                    let c = rng.gen::<f64>() < *relay_comp;
                    fresh(c)
                };
                let exit = {
                    let c = rng.gen::<f64>() < *relay_comp;
                    fresh(c)
                };
                Ok(Circuit { entry, middle, exit })
            }
            CircuitSource::Network { dir, guards } => {
                let entry_idx = guards.sample_entry(rng);
                let mut ex = Exclusions::from_hops(dir, &[entry_idx]);
                let middle_idx = weighted_sample(dir, Role::Middle, &ex, rng)?;
                ex.add_hop(dir, middle_idx);
                let exit_idx = weighted_sample(dir, Role::Exit, &ex, rng)?;
                let hop = |idx: u32| directory_hop(dir, idx);
                Ok(Circuit {
                    entry: hop(entry_idx),
                    middle: hop(middle_idx),
                    exit: hop(exit_idx),
                })
            }
        }
    }

    /// Draws a substitute middle hop compatible with the given entry and
    /// exit, for probes that randomize the middle position. Returns
    /// `None` when the directory has no eligible relay left, in which
    /// case the caller keeps the base circuit's own middle.
    pub fn fresh_middle(
        &mut self,
        entry: &HopInfo,
        exit: &HopInfo,
        rng: &mut impl Rng,
    ) -> Result<Option<HopInfo>, CircuitError> {
        match self {
            CircuitSource::Model { relay_comp, next_id, .. } => {
                let comp = rng.gen::<f64>() < *relay_comp;
                let hop = HopInfo { id: *next_id, compromised: comp, subnet: None, family: None };
                *next_id += 1;
                Ok(Some(hop))
            }
            CircuitSource::Network { dir, .. } => {
                let mut ex = Exclusions::none();
                for h in [entry, exit] {
                    // directory hops carry their index as id
                    if h.subnet.is_some() {
                        ex.add_hop(dir, h.id as u32);
                    }
                }
                match weighted_sample(dir, Role::Middle, &ex, rng) {
                    Ok(idx) => Ok(Some(directory_hop(dir, idx))),
                    Err(DirectoryError::EmptyEligibleSet { .. }) => Ok(None),
                    Err(e) => Err(e.into()),
                }
            }
        }
    }
}

fn directory_hop(dir: &Directory, idx: u32) -> HopInfo {
    let a = dir.attrs(idx);
    HopInfo {
        id: idx as u64,
        compromised: a.compromised,
        subnet: Some(a.subnet),
        family: a.family,
    }
}

/// True when `(base.entry, middle, exit)` is a valid path: no repeated
/// relay, shared /16, or shared family between any two hops. `middle`
/// of `None` means the base circuit's own middle is kept.
pub fn probe_compatible(base: &Circuit, exit: &HopInfo, middle: Option<&HopInfo>) -> bool {
    let mid = middle.unwrap_or(&base.middle);
    !base.entry.conflicts_with(mid)
        && !base.entry.conflicts_with(exit)
        && !mid.conflicts_with(exit)
}

/// Assembles the probe used to test `base`: its entry and (by default)
/// middle are kept, the exit is borrowed from `exit_from`. Passing
/// `middle` substitutes a different middle hop. Fails if the combined
/// hops violate path constraints.
pub fn make_probe_circuit(
    base: &Circuit,
    exit_from: &Circuit,
    middle: Option<&HopInfo>,
) -> Result<Circuit, CircuitError> {
    let exit = exit_from.exit;
    if !probe_compatible(base, &exit, middle) {
        return Err(CircuitError::ConstraintViolation(format!(
            "entry {} / middle {} / exit {} share a relay, subnet, or family",
            base.entry.id,
            middle.unwrap_or(&base.middle).id,
            exit.id
        )));
    }
    Ok(Circuit {
        entry: base.entry,
        middle: *middle.unwrap_or(&base.middle),
        exit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    fn hop(id: u64, comp: bool) -> HopInfo {
        HopInfo { id, compromised: comp, subnet: None, family: None }
    }

    #[test]
    fn class_depends_only_on_compromise_pattern() {
        for (i, &(e, m, x)) in [
            (false, false, false),
            (false, false, true),
            (false, true, false),
            (true, false, false),
            (true, true, false),
            (true, false, true),
            (false, true, true),
            (true, true, true),
        ]
        .iter()
        .enumerate()
        {
            let c = Circuit {
                entry: hop(i as u64 * 3, e),
                middle: hop(i as u64 * 3 + 1, m),
                exit: hop(i as u64 * 3 + 2, x),
            };
            let class = c.class();
            assert_eq!(class, CircuitClass::of(e, m, x));
            assert_eq!(class.entry_compromised(), e);
            assert_eq!(class.middle_compromised(), m);
            assert_eq!(class.exit_compromised(), x);
            assert_eq!(class.is_cxc(), e && x);
        }
    }

    #[test]
    fn cxc_means_chc_or_ccc() {
        for class in CircuitClass::ALL {
            let expect = matches!(class, CircuitClass::Chc | CircuitClass::Ccc);
            assert_eq!(class.is_cxc(), expect, "{class:?}");
        }
    }

    #[test]
    fn model_source_is_reproducible_and_ids_are_fresh() {
        let build_all = || {
            let mut src = CircuitSource::model(1.0 / 3.0, 0.2).unwrap();
            let mut rng = StreamKey::root(4).rng();
            (0..50)
                .map(|_| src.build(&mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        let a = build_all();
        let b = build_all();
        assert_eq!(a, b);
        let mut ids: Vec<u64> = a
            .iter()
            .flat_map(|c| [c.entry.id, c.middle.id, c.exit.id])
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 150);
    }

    #[test]
    fn model_source_rejects_bad_probability() {
        assert!(CircuitSource::model(1.2, 0.2).is_err());
        assert!(CircuitSource::model(0.2, -0.1).is_err());
    }

    #[test]
    fn probe_keeps_entry_and_middle_borrows_exit() {
        let base = Circuit { entry: hop(0, true), middle: hop(1, false), exit: hop(2, false) };
        let other = Circuit { entry: hop(3, false), middle: hop(4, false), exit: hop(5, true) };
        let probe = make_probe_circuit(&base, &other, None).unwrap();
        assert_eq!(probe.entry, base.entry);
        assert_eq!(probe.middle, base.middle);
        assert_eq!(probe.exit, other.exit);
        assert_eq!(probe.class(), CircuitClass::Chc);
    }

    #[test]
    fn probe_rejects_shared_subnet() {
        let mut base =
            Circuit { entry: hop(0, false), middle: hop(1, false), exit: hop(2, false) };
        let mut other =
            Circuit { entry: hop(3, false), middle: hop(4, false), exit: hop(5, false) };
        base.entry.subnet = Some(9);
        other.exit.subnet = Some(9);
        assert!(!probe_compatible(&base, &other.exit, None));
        assert!(matches!(
            make_probe_circuit(&base, &other, None),
            Err(CircuitError::ConstraintViolation(_))
        ));
    }

    #[test]
    fn probe_rejects_same_relay_as_swapped_middle() {
        let base = Circuit { entry: hop(0, false), middle: hop(1, false), exit: hop(2, false) };
        let other = Circuit { entry: hop(3, false), middle: hop(4, false), exit: hop(5, false) };
        let clash = hop(5, true); // same relay as the borrowed exit
        assert!(make_probe_circuit(&base, &other, Some(&clash)).is_err());
    }
}
