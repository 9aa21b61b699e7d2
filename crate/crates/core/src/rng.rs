//! Seeded random streams.
//!
//! The adversary and the protocol draw from disjoint domains: every stream is
//! keyed by a domain tag plus the relevant seed, so the churn schedule can never
//! observe protocol randomness and vice versa.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::ids::{NodeId, Round};

pub type SimRng = Xoshiro256PlusPlus;

const DOMAIN_ADVERSARY: u64 = 0xA17E_5A41_0000_0001;
const DOMAIN_WALK: u64 = 0x5741_4C4B_0000_0002;
const DOMAIN_NODE: u64 = 0x4E4F_4445_0000_0003;
const DOMAIN_SCENARIO: u64 = 0x5343_454E_0000_0004;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one 64-bit key.
pub fn mix(words: &[u64]) -> u64 {
    words.iter().fold(0x243F_6A88_85A3_08D3, |acc, &w| splitmix(acc ^ w))
}

/// Adversary stream for one purpose (graph sampling, churn, rewiring) and round.
pub fn adversary_rng(seed: u64, purpose: u64, round: u64) -> SimRng {
    SimRng::seed_from_u64(mix(&[DOMAIN_ADVERSARY, seed, purpose, round]))
}

/// Token-forwarding stream of one node in one round.
pub fn walk_rng(protocol_seed: u64, node: NodeId, round: Round) -> SimRng {
    SimRng::seed_from_u64(mix(&[DOMAIN_WALK, protocol_seed, node.0 as u64, round as u64]))
}

/// Protocol-decision stream of one node in one round.
pub fn node_rng(protocol_seed: u64, node: NodeId, round: Round) -> SimRng {
    SimRng::seed_from_u64(mix(&[DOMAIN_NODE, protocol_seed, node.0 as u64, round as u64]))
}

/// Scenario driver stream (which nodes store, when retrievals happen).
pub fn scenario_rng(protocol_seed: u64, tag: u64) -> SimRng {
    SimRng::seed_from_u64(mix(&[DOMAIN_SCENARIO, protocol_seed, tag]))
}
