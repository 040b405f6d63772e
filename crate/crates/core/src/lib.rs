//! Simulator and closed-form models for selective denial of service
//! against onion-routed circuit construction, and for the probing
//! defense that vets circuits before use.
//!
//! An adversary controlling a bandwidth fraction `t` of relays can tear
//! down every circuit it touches but cannot correlate, biasing the
//! population of circuits that *work* toward fully-compromised ones.
//! The defense builds a pool of N working circuits, then probes each
//! against K exits borrowed from the others and keeps it only if at
//! least Th probes succeed. This crate provides:
//!
//! - [`directory`]: relay directories (synthetic or CSV), bandwidth-
//!   weighted selection under /16 and family constraints, compromise
//!   tagging, guard sets.
//! - [`circuit`]: circuit construction in a constraint-free model mode
//!   and a full network mode, compromise classes, probe assembly.
//! - [`adversary`]: drop strategies and the ambient-failure gate.
//! - [`detection`]: the two-phase vetting algorithm.
//! - [`analytic`]: exact closed forms for error rates, security ψ,
//!   overhead η, strategy endpoint probabilities, and parameter tuning.
//! - [`montecarlo`]: parallel repeated-trial estimation with confidence
//!   intervals, in an analytic-matching mode and a realistic mode.
//! - [`rng`]: counter-addressed deterministic random streams.

pub mod adversary;
pub mod analytic;
pub mod circuit;
pub mod detection;
pub mod directory;
pub mod montecarlo;
pub mod rng;
