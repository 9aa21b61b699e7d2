//! Random d-regular graphs via the pairing (configuration) model.

use std::sync::Arc;

use rand::Rng;

use crate::ids::NodeId;
use crate::netgen::{spectral, GraphSnapshot, NetError};
use crate::rng::{adversary_rng, SimRng};

/// Whole-graph resampling attempts before giving up on `lambda_max`.
pub const DEFAULT_RETRY_BUDGET: usize = 64;

/// Tolerance used when certifying a snapshot.
pub const CERTIFY_TOL: f64 = 1e-6;

const PURPOSE_GRAPH: u64 = 1;

pub(crate) fn check_params(n: usize, d: usize) -> Result<(), NetError> {
    if d < 2 {
        return Err(NetError::InvalidParams(format!("degree {d} < 2")));
    }
    if n <= d {
        return Err(NetError::InvalidParams(format!("need n > d (n={n}, d={d})")));
    }
    if (n * d) % 2 == 1 {
        return Err(NetError::InvalidParams(format!("n*d = {} is odd", n * d)));
    }
    if n > u32::MAX as usize / 2 {
        return Err(NetError::InvalidParams("n too large".into()));
    }
    Ok(())
}

/// One pairing attempt: stubs are matched uniformly at random, rejecting pairs
/// that would create a self-loop or a parallel edge. Returns `None` if the
/// remaining stubs cannot be matched legally.
pub(crate) fn sample_pairing(n: usize, d: usize, rng: &mut SimRng) -> Option<Vec<u32>> {
    let mut stubs: Vec<u32> = (0..n as u32).flat_map(|u| std::iter::repeat(u).take(d)).collect();
    let mut lists: Vec<Vec<u32>> = vec![Vec::with_capacity(d); n];
    let max_misses = 64 + 4 * d * d;
    while !stubs.is_empty() {
        let mut misses = 0;
        loop {
            let len = stubs.len();
            let i = rng.gen_range(0..len);
            let mut j = rng.gen_range(0..len - 1);
            if j >= i {
                j += 1;
            }
            let (u, v) = (stubs[i], stubs[j]);
            if u != v && !lists[u as usize].contains(&v) {
                lists[u as usize].push(v);
                lists[v as usize].push(u);
                let (hi, lo) = if i > j { (i, j) } else { (j, i) };
                stubs.swap_remove(hi);
                stubs.swap_remove(lo);
                break;
            }
            misses += 1;
            if misses > max_misses {
                return None;
            }
        }
    }
    Some(lists.into_iter().flatten().collect())
}

/// Structural + spectral acceptance test shared by generation and rewiring.
pub(crate) fn certify(g: &GraphSnapshot, lambda_max: f64) -> Result<Option<f64>, NetError> {
    if !g.is_connected() || g.is_bipartite() {
        return Ok(None);
    }
    let lam = spectral::estimate_lambda(g, CERTIFY_TOL)?;
    Ok((lam <= lambda_max).then_some(lam))
}

/// Samples a connected, non-bipartite d-regular graph on ids `0..n` whose
/// estimated `|λ₂|` is at most `lambda_max`.
pub fn build_regular_expander(
    n: usize,
    d: usize,
    lambda_max: f64,
    seed: u64,
) -> Result<GraphSnapshot, NetError> {
    build_regular_expander_with_budget(n, d, lambda_max, seed, DEFAULT_RETRY_BUDGET)
}

pub fn build_regular_expander_with_budget(
    n: usize,
    d: usize,
    lambda_max: f64,
    seed: u64,
    retry_budget: usize,
) -> Result<GraphSnapshot, NetError> {
    check_params(n, d)?;
    if !(lambda_max > 0.0 && lambda_max < 1.0) {
        return Err(NetError::InvalidParams(format!("lambda_max {lambda_max} outside (0,1)")));
    }
    let ids: Arc<Vec<NodeId>> = Arc::new((0..n as u32).map(NodeId).collect());
    for attempt in 0..retry_budget {
        let mut rng = adversary_rng(seed, PURPOSE_GRAPH, attempt as u64);
        let Some(adj) = sample_pairing(n, d, &mut rng) else {
            continue;
        };
        let mut g = GraphSnapshot::from_parts(0, d, ids.clone(), Arc::new(adj), lambda_max, 1.0);
        if let Some(lam) = certify(&g, lambda_max)? {
            g.lambda_estimate = lam;
            return Ok(g);
        }
    }
    Err(NetError::GenerationExhausted { attempts: retry_budget })
}
