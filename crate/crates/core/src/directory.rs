//! Relay directory: synthesis, loading, compromise tagging, and
//! bandwidth-weighted selection under path constraints.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rng::StreamKey;

#[derive(Debug, thiserror::Error)]
pub enum DirectoryError {
    #[error("directory must contain at least {min} relays, got {got}")]
    TooSmall { min: usize, got: usize },
    #[error("duplicate relay id {0:?}")]
    DuplicateId(String),
    #[error("relay {id:?}: {msg}")]
    BadRelay { id: String, msg: String },
    #[error("no relay offers the {0:?} role")]
    EmptyRole(Role),
    #[error("no eligible relay for role {role:?} after exclusions")]
    EmptyEligibleSet { role: Role },
    #[error("compromise fraction must lie in [0, 1], got {0}")]
    BadFraction(f64),
    #[error("guard-set compromise fraction {g} does not split {big_g} guards into whole counts")]
    UnevenGuardSplit { g: f64, big_g: u32 },
    #[error("not enough {kind} guard-capable relays: need {need}, have {have}")]
    GuardShortage { kind: &'static str, need: u32, have: usize },
    #[error("bad directory file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Guard,
    Middle,
    Exit,
}

/// One relay as the directory sees it. `subnet16` is the /16 prefix the
/// relay lives in; relays sharing it never appear twice in one circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relay {
    pub id: String,
    pub bandwidth: u64,
    pub guard: bool,
    pub exit: bool,
    pub middle: bool,
    pub subnet16: String,
    pub family: Option<String>,
    pub compromised: bool,
}

/// Interned per-relay attributes for fast constraint checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelayAttrs {
    pub subnet: u32,
    pub family: Option<u32>,
    pub compromised: bool,
}

#[derive(Debug, Clone)]
struct RolePool {
    members: Vec<u32>,
    // cum_bw[i] = total bandwidth of members[..=i]; supports binary-search draws
    cum_bw: Vec<u64>,
    total_bw: u64,
}

impl RolePool {
    fn build(members: Vec<u32>, relays: &[Relay]) -> Self {
        let mut cum_bw = Vec::with_capacity(members.len());
        let mut acc = 0u64;
        for &m in &members {
            acc += relays[m as usize].bandwidth;
            cum_bw.push(acc);
        }
        RolePool { members, cum_bw, total_bw: acc }
    }

    fn draw(&self, rng: &mut impl Rng) -> u32 {
        debug_assert!(self.total_bw > 0);
        let r = rng.gen_range(0..self.total_bw);
        let i = self.cum_bw.partition_point(|&c| c <= r);
        self.members[i]
    }
}

#[derive(Debug, Clone)]
pub struct Directory {
    relays: Vec<Relay>,
    attrs: Vec<RelayAttrs>,
    guard_pool: RolePool,
    middle_pool: RolePool,
    exit_pool: RolePool,
    total_bandwidth: u64,
}

impl Directory {
    /// Validates and indexes a relay list. Every relay may serve as a
    /// middle; guard and exit are opt-in flags.
    pub fn new(relays: Vec<Relay>) -> Result<Self, DirectoryError> {
        const MIN_RELAYS: usize = 10;
        if relays.len() < MIN_RELAYS {
            return Err(DirectoryError::TooSmall { min: MIN_RELAYS, got: relays.len() });
        }

        let mut seen = HashMap::new();
        for (i, r) in relays.iter().enumerate() {
            if r.id.is_empty() {
                return Err(DirectoryError::BadRelay {
                    id: format!("<row {i}>"),
                    msg: "empty id".into(),
                });
            }
            if seen.insert(r.id.clone(), i).is_some() {
                return Err(DirectoryError::DuplicateId(r.id.clone()));
            }
            if r.bandwidth == 0 {
                return Err(DirectoryError::BadRelay {
                    id: r.id.clone(),
                    msg: "bandwidth must be positive".into(),
                });
            }
            if r.subnet16.is_empty() {
                return Err(DirectoryError::BadRelay {
                    id: r.id.clone(),
                    msg: "empty subnet16".into(),
                });
            }
            if !r.middle {
                return Err(DirectoryError::BadRelay {
                    id: r.id.clone(),
                    msg: "every relay must accept the middle position".into(),
                });
            }
        }

        let mut subnet_ids: HashMap<&str, u32> = HashMap::new();
        let mut family_ids: HashMap<&str, u32> = HashMap::new();
        let attrs: Vec<RelayAttrs> = relays
            .iter()
            .map(|r| {
                let next = subnet_ids.len() as u32;
                let subnet = *subnet_ids.entry(r.subnet16.as_str()).or_insert(next);
                let family = r.family.as_deref().map(|f| {
                    let next = family_ids.len() as u32;
                    *family_ids.entry(f).or_insert(next)
                });
                RelayAttrs { subnet, family, compromised: r.compromised }
            })
            .collect();

        let pool_of = |pred: &dyn Fn(&Relay) -> bool| -> Vec<u32> {
            relays
                .iter()
                .enumerate()
                .filter(|(_, r)| pred(r))
                .map(|(i, _)| i as u32)
                .collect()
        };
        let guards = pool_of(&|r| r.guard);
        let middles = pool_of(&|r| r.middle);
        let exits = pool_of(&|r| r.exit);
        if guards.is_empty() {
            return Err(DirectoryError::EmptyRole(Role::Guard));
        }
        if exits.is_empty() {
            return Err(DirectoryError::EmptyRole(Role::Exit));
        }

        let total_bandwidth = relays.iter().map(|r| r.bandwidth).sum();
        Ok(Directory {
            guard_pool: RolePool::build(guards, &relays),
            middle_pool: RolePool::build(middles, &relays),
            exit_pool: RolePool::build(exits, &relays),
            attrs,
            relays,
            total_bandwidth,
        })
    }

    pub fn len(&self) -> usize {
        self.relays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relays.is_empty()
    }

    pub fn relay(&self, idx: u32) -> &Relay {
        &self.relays[idx as usize]
    }

    pub fn attrs(&self, idx: u32) -> RelayAttrs {
        self.attrs[idx as usize]
    }

    pub fn relays(&self) -> &[Relay] {
        &self.relays
    }

    pub fn total_bandwidth(&self) -> u64 {
        self.total_bandwidth
    }

    /// Bandwidth fraction held by compromised relays, overall and per role.
    pub fn compromised_fraction(&self) -> f64 {
        let comp: u64 = self
            .relays
            .iter()
            .filter(|r| r.compromised)
            .map(|r| r.bandwidth)
            .sum();
        comp as f64 / self.total_bandwidth as f64
    }

    pub fn role_compromised_fraction(&self, role: Role) -> f64 {
        let pool = self.pool(role);
        let comp: u64 = pool
            .members
            .iter()
            .filter(|&&i| self.relays[i as usize].compromised)
            .map(|&i| self.relays[i as usize].bandwidth)
            .sum();
        comp as f64 / pool.total_bw as f64
    }

    fn pool(&self, role: Role) -> &RolePool {
        match role {
            Role::Guard => &self.guard_pool,
            Role::Middle => &self.middle_pool,
            Role::Exit => &self.exit_pool,
        }
    }
}

/// Path constraints accumulated from already-chosen hops: a candidate is
/// rejected if it repeats a relay, shares a /16, or shares a declared
/// family with any of them.
#[derive(Debug, Clone, Default)]
pub struct Exclusions {
    relays: Vec<u32>,
    subnets: Vec<u32>,
    families: Vec<u32>,
}

impl Exclusions {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn from_hops(dir: &Directory, hops: &[u32]) -> Self {
        let mut ex = Exclusions::default();
        for &h in hops {
            ex.add_hop(dir, h);
        }
        ex
    }

    pub fn add_hop(&mut self, dir: &Directory, idx: u32) {
        let a = dir.attrs(idx);
        self.relays.push(idx);
        self.subnets.push(a.subnet);
        if let Some(f) = a.family {
            self.families.push(f);
        }
    }

    pub fn allows(&self, dir: &Directory, idx: u32) -> bool {
        if self.relays.contains(&idx) {
            return false;
        }
        let a = dir.attrs(idx);
        if self.subnets.contains(&a.subnet) {
            return false;
        }
        if let Some(f) = a.family {
            if self.families.contains(&f) {
                return false;
            }
        }
        true
    }
}

/// Draws one relay for `role`, weighted by bandwidth, honouring
/// `exclusions`. Rejection sampling against the full role pool is tried
/// first; if the pool is dominated by excluded mass, falls back to an
/// exact draw over the filtered set so the call cannot spin forever.
pub fn weighted_sample(
    dir: &Directory,
    role: Role,
    exclusions: &Exclusions,
    rng: &mut impl Rng,
) -> Result<u32, DirectoryError> {
    let pool = dir.pool(role);
    const REJECTION_TRIES: u32 = 64;
    for _ in 0..REJECTION_TRIES {
        let idx = pool.draw(rng);
        if exclusions.allows(dir, idx) {
            return Ok(idx);
        }
    }
    let eligible: Vec<u32> = pool
        .members
        .iter()
        .copied()
        .filter(|&i| exclusions.allows(dir, i))
        .collect();
    if eligible.is_empty() {
        return Err(DirectoryError::EmptyEligibleSet { role });
    }
    let filtered = RolePool::build(eligible, &dir.relays);
    Ok(filtered.draw(rng))
}

/// Outcome of compromise tagging. Bandwidth is integral so the achieved
/// fraction rarely equals the target exactly; callers decide whether the
/// residual is acceptable for their run.
#[derive(Debug, Clone, Serialize)]
pub struct TagReport {
    pub target_fraction: f64,
    pub achieved_fraction: f64,
    pub tagged_relays: usize,
    pub guard_fraction: f64,
    pub exit_fraction: f64,
}

/// Marks relays compromised until the tagged bandwidth reaches fraction
/// `t` of the total. Relays are visited in seeded random order; a relay
/// is taken only if it keeps the running total at or below target, then
/// one last relay is taken if crossing the target lands nearer to it
/// than stopping short does. Existing tags are cleared first.
pub fn tag_compromised(
    dir: &Directory,
    t: f64,
    seed: u64,
) -> Result<(Directory, TagReport), DirectoryError> {
    if !(0.0..=1.0).contains(&t) || !t.is_finite() {
        return Err(DirectoryError::BadFraction(t));
    }
    let mut relays = dir.relays.clone();
    for r in &mut relays {
        r.compromised = false;
    }

    let total = dir.total_bandwidth as f64;
    let target = t * total;
    let mut order: Vec<usize> = (0..relays.len()).collect();
    let mut rng: ChaCha8Rng = StreamKey::root(seed).child(0).rng();
    order.shuffle(&mut rng);

    let mut tagged = 0f64;
    let mut count = 0usize;
    let mut best_crossing: Option<usize> = None;
    for i in order {
        let bw = relays[i].bandwidth as f64;
        if tagged + bw <= target {
            relays[i].compromised = true;
            tagged += bw;
            count += 1;
        } else if best_crossing
            .map(|b| bw < relays[b].bandwidth as f64)
            .unwrap_or(true)
        {
            // smallest relay seen that would overshoot; candidate for the
            // final step over the target
            best_crossing = Some(i);
        }
    }
    if let Some(i) = best_crossing {
        let bw = relays[i].bandwidth as f64;
        if (tagged + bw - target).abs() < (target - tagged).abs() {
            relays[i].compromised = true;
            tagged += bw;
            count += 1;
        }
    }

    let out = Directory::new(relays)?;
    let report = TagReport {
        target_fraction: t,
        achieved_fraction: tagged / total,
        tagged_relays: count,
        guard_fraction: out.role_compromised_fraction(Role::Guard),
        exit_fraction: out.role_compromised_fraction(Role::Exit),
    };
    Ok((out, report))
}

/// A client's pinned entry guards. Entry hops are drawn only from here.
#[derive(Debug, Clone)]
pub struct GuardSet {
    members: Vec<u32>,
    cum_bw: Vec<u64>,
    total_bw: u64,
}

impl GuardSet {
    pub fn members(&self) -> &[u32] {
        &self.members
    }

    pub fn sample_entry(&self, rng: &mut impl Rng) -> u32 {
        let r = rng.gen_range(0..self.total_bw);
        let i = self.cum_bw.partition_point(|&c| c <= r);
        self.members[i]
    }
}

/// Picks a guard set of size `big_g` in which exactly `g * big_g`
/// members are compromised. `g` must split the set into whole counts
/// (for G = 3 that means g in {0, 1/3, 2/3, 1}). Members are drawn
/// bandwidth-weighted without replacement from the matching honesty
/// class of guard-capable relays.
pub fn select_guard_set(
    dir: &Directory,
    big_g: u32,
    g: f64,
    rng: &mut impl Rng,
) -> Result<GuardSet, DirectoryError> {
    if !(0.0..=1.0).contains(&g) || !g.is_finite() {
        return Err(DirectoryError::BadFraction(g));
    }
    let comp_exact = g * big_g as f64;
    let comp_n = comp_exact.round();
    if (comp_exact - comp_n).abs() > 1e-9 {
        return Err(DirectoryError::UnevenGuardSplit { g, big_g });
    }
    let comp_n = comp_n as u32;
    let honest_n = big_g - comp_n;

    let class_members = |want_comp: bool| -> Vec<u32> {
        dir.guard_pool
            .members
            .iter()
            .copied()
            .filter(|&i| dir.attrs(i).compromised == want_comp)
            .collect()
    };

    let mut chosen = Vec::with_capacity(big_g as usize);
    for (want_comp, need, kind) in
        [(true, comp_n, "compromised"), (false, honest_n, "honest")]
    {
        let mut avail = class_members(want_comp);
        if (avail.len() as u32) < need {
            return Err(DirectoryError::GuardShortage {
                kind,
                need,
                have: avail.len(),
            });
        }
        for _ in 0..need {
            let pool = RolePool::build(avail.clone(), &dir.relays);
            let pick = pool.draw(rng);
            avail.retain(|&i| i != pick);
            chosen.push(pick);
        }
    }

    let mut cum_bw = Vec::with_capacity(chosen.len());
    let mut acc = 0u64;
    for &m in &chosen {
        acc += dir.relay(m).bandwidth;
        cum_bw.push(acc);
    }
    Ok(GuardSet { members: chosen, cum_bw, total_bw: acc })
}

/// Shape of a synthesized directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisSpec {
    pub n_relays: usize,
    pub bandwidth: BandwidthDist,
    /// target fraction of total bandwidth carried by guard-capable relays
    pub guard_fraction: f64,
    /// target fraction of total bandwidth carried by exit-capable relays
    pub exit_fraction: f64,
    /// fraction of relays that declare a family
    pub family_fraction: f64,
    /// average relays per /16
    pub subnet_density: f64,
}

impl Default for SynthesisSpec {
    fn default() -> Self {
        SynthesisSpec {
            n_relays: 500,
            bandwidth: BandwidthDist::ParetoLike { scale: 100.0, shape: 1.5, cap: 100_000 },
            guard_fraction: 0.45,
            exit_fraction: 0.35,
            family_fraction: 0.15,
            subnet_density: 4.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BandwidthDist {
    Constant { value: u64 },
    Uniform { lo: u64, hi: u64 },
    /// Pareto tail truncated at `cap`; heavy tails are the realistic case
    /// and the one that stresses weighted selection.
    ParetoLike { scale: f64, shape: f64, cap: u64 },
}

impl BandwidthDist {
    fn draw(&self, rng: &mut impl Rng) -> u64 {
        match *self {
            BandwidthDist::Constant { value } => value.max(1),
            BandwidthDist::Uniform { lo, hi } => rng.gen_range(lo.max(1)..=hi.max(lo.max(1))),
            BandwidthDist::ParetoLike { scale, shape, cap } => {
                let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                let v = scale / u.powf(1.0 / shape);
                (v as u64).clamp(1, cap.max(1))
            }
        }
    }
}

/// Generates a directory matching `spec`. Role flags are assigned so the
/// bandwidth shares of guard- and exit-capable relays approach the
/// requested fractions; all relays can be middles.
pub fn synthesize_directory(
    spec: &SynthesisSpec,
    seed: u64,
) -> Result<Directory, DirectoryError> {
    if spec.n_relays < 10 {
        return Err(DirectoryError::TooSmall { min: 10, got: spec.n_relays });
    }
    for (v, name) in [
        (spec.guard_fraction, "guard_fraction"),
        (spec.exit_fraction, "exit_fraction"),
        (spec.family_fraction, "family_fraction"),
    ] {
        if !(0.0..=1.0).contains(&v) || !v.is_finite() {
            return Err(DirectoryError::BadFile(format!("{name} out of [0,1]: {v}")));
        }
    }
    if !(spec.subnet_density >= 1.0) {
        return Err(DirectoryError::BadFile(format!(
            "subnet_density must be >= 1, got {}",
            spec.subnet_density
        )));
    }

    let mut rng: ChaCha8Rng = StreamKey::root(seed).child(1).rng();
    let n = spec.n_relays;
    let n_subnets = ((n as f64 / spec.subnet_density).ceil() as usize).max(1);

    let bandwidths: Vec<u64> = (0..n).map(|_| spec.bandwidth.draw(&mut rng)).collect();
    let total: u64 = bandwidths.iter().sum();

    // Assign a role flag to relays in random order until the flagged
    // bandwidth reaches the target share.
    let assign_flag = |target_fraction: f64, rng: &mut ChaCha8Rng| -> Vec<bool> {
        let target = target_fraction * total as f64;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut flags = vec![false; n];
        let mut acc = 0f64;
        for i in order {
            if acc >= target {
                break;
            }
            flags[i] = true;
            acc += bandwidths[i] as f64;
        }
        flags
    };
    let mut guard_flags = assign_flag(spec.guard_fraction, &mut rng);
    let mut exit_flags = assign_flag(spec.exit_fraction, &mut rng);
    // Directory::new requires both roles nonempty.
    if !guard_flags.iter().any(|&b| b) {
        guard_flags[0] = true;
    }
    if !exit_flags.iter().any(|&b| b) {
        exit_flags[n - 1] = true;
    }

    let n_families = ((n as f64 * spec.family_fraction / 3.0).ceil() as usize).max(1);
    let relays: Vec<Relay> = (0..n)
        .map(|i| {
            let family = if rng.gen::<f64>() < spec.family_fraction {
                Some(format!("fam{:03}", rng.gen_range(0..n_families)))
            } else {
                None
            };
            Relay {
                id: format!("r{i:05}"),
                bandwidth: bandwidths[i],
                guard: guard_flags[i],
                exit: exit_flags[i],
                middle: true,
                subnet16: format!("s{:04}", rng.gen_range(0..n_subnets)),
                family,
                compromised: false,
            }
        })
        .collect();

    Directory::new(relays)
}

/// Loads a directory from CSV with header
/// `id,bandwidth,guard,exit,subnet16,family`. `family` may be empty;
/// `guard`/`exit` are 0 or 1. Compromise tags are not part of the file;
/// apply [`tag_compromised`] afterwards.
pub fn load_directory(path: &Path) -> Result<Directory, DirectoryError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;

    let expect = ["id", "bandwidth", "guard", "exit", "subnet16", "family"];
    let headers = reader
        .headers()
        .map_err(|e| DirectoryError::BadFile(e.to_string()))?
        .clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != expect {
        return Err(DirectoryError::BadFile(format!(
            "expected header {expect:?}, got {got:?}"
        )));
    }

    let parse_flag = |s: &str, id: &str, col: &str| -> Result<bool, DirectoryError> {
        match s {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(DirectoryError::BadRelay {
                id: id.to_string(),
                msg: format!("{col} must be 0 or 1, got {other:?}"),
            }),
        }
    };

    let mut relays = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| DirectoryError::BadFile(e.to_string()))?;
        if rec.len() != expect.len() {
            return Err(DirectoryError::BadFile(format!(
                "row {}: expected {} fields, got {}",
                row + 2,
                expect.len(),
                rec.len()
            )));
        }
        let id = rec[0].to_string();
        let bandwidth: u64 = rec[1].parse().map_err(|_| DirectoryError::BadRelay {
            id: id.clone(),
            msg: format!("bandwidth must be a positive integer, got {:?}", &rec[1]),
        })?;
        let guard = parse_flag(&rec[2], &id, "guard")?;
        let exit = parse_flag(&rec[3], &id, "exit")?;
        let family = if rec[5].is_empty() { None } else { Some(rec[5].to_string()) };
        relays.push(Relay {
            id,
            bandwidth,
            guard,
            exit,
            middle: true,
            subnet16: rec[4].to_string(),
            family,
            compromised: false,
        });
    }
    Directory::new(relays)
}
