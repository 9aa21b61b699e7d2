use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, OnceLock};

use crate::ids::{NodeId, Round};
use crate::netgen::NetError;

/// One round of the adversary's graph sequence.
///
/// Nodes live in fixed *slots*; the adjacency is stored in slot space so that a
/// fresh node replacing a churned one inherits its edge slots. Slot order is
/// also the canonical iteration order of the simulator.
#[derive(Clone, Debug)]
pub struct GraphSnapshot {
    pub round: Round,
    degree: usize,
    ids: Arc<Vec<NodeId>>,
    adj: Arc<Vec<u32>>,
    slot_of: Arc<OnceLock<HashMap<NodeId, u32>>>,
    /// Certified bound on the second-largest absolute eigenvalue of `A/d`.
    pub lambda_bound: f64,
    /// The estimate that was checked against `lambda_bound`.
    pub lambda_estimate: f64,
}

impl GraphSnapshot {
    pub(crate) fn from_parts(
        round: Round,
        degree: usize,
        ids: Arc<Vec<NodeId>>,
        adj: Arc<Vec<u32>>,
        lambda_bound: f64,
        lambda_estimate: f64,
    ) -> Self {
        GraphSnapshot {
            round,
            degree,
            ids,
            adj,
            slot_of: Arc::new(OnceLock::new()),
            lambda_bound,
            lambda_estimate,
        }
    }

    /// Builds a snapshot from explicit neighbor lists (ids `0..n`), checking
    /// regularity and symmetry. The spectral fields are left at `1.0` until
    /// certified.
    pub fn from_neighbor_lists(round: Round, lists: &[Vec<u32>]) -> Result<Self, NetError> {
        let n = lists.len();
        let d = lists.first().map_or(0, Vec::len);
        let mut adj = Vec::with_capacity(n * d);
        for (u, l) in lists.iter().enumerate() {
            if l.len() != d {
                return Err(NetError::Malformed(format!("node {u} has degree {} != {d}", l.len())));
            }
            adj.extend_from_slice(l);
        }
        let ids = (0..n as u32).map(NodeId).collect();
        let g = GraphSnapshot::from_parts(round, d, Arc::new(ids), Arc::new(adj), 1.0, 1.0);
        g.check_structure()?;
        Ok(g)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.ids.len()
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Node ids in slot order.
    #[inline]
    pub fn nodes(&self) -> &[NodeId] {
        &self.ids
    }

    #[inline]
    pub fn id_at(&self, slot: usize) -> NodeId {
        self.ids[slot]
    }

    fn slot_map(&self) -> &HashMap<NodeId, u32> {
        self.slot_of
            .get_or_init(|| self.ids.iter().enumerate().map(|(s, &id)| (id, s as u32)).collect())
    }

    #[inline]
    pub fn slot(&self, id: NodeId) -> Option<usize> {
        self.slot_map().get(&id).map(|&s| s as usize)
    }

    #[inline]
    pub fn contains(&self, id: NodeId) -> bool {
        self.slot_map().contains_key(&id)
    }

    /// Neighbor slots of `slot`.
    #[inline]
    pub fn slot_neighbors(&self, slot: usize) -> &[u32] {
        &self.adj[slot * self.degree..(slot + 1) * self.degree]
    }

    /// Flat slot-space adjacency (`n * d` entries).
    #[inline]
    pub fn adjacency(&self) -> &[u32] {
        &self.adj
    }

    pub(crate) fn adjacency_arc(&self) -> &Arc<Vec<u32>> {
        &self.adj
    }

    pub(crate) fn ids_arc(&self) -> &Arc<Vec<NodeId>> {
        &self.ids
    }

    pub fn neighbors(&self, id: NodeId) -> Option<impl Iterator<Item = NodeId> + '_> {
        let slot = self.slot(id)?;
        Some(self.slot_neighbors(slot).iter().map(move |&s| self.ids[s as usize]))
    }

    /// Regularity, symmetry, no self-loops, no parallel edges.
    pub fn check_structure(&self) -> Result<(), NetError> {
        let n = self.n();
        let d = self.degree;
        if self.adj.len() != n * d {
            return Err(NetError::Malformed("adjacency length".into()));
        }
        for u in 0..n {
            let nb = self.slot_neighbors(u);
            for (i, &v) in nb.iter().enumerate() {
                let v = v as usize;
                if v >= n {
                    return Err(NetError::Malformed(format!("slot {u} points outside graph")));
                }
                if v == u {
                    return Err(NetError::Malformed(format!("self-loop at slot {u}")));
                }
                if nb[..i].contains(&(v as u32)) {
                    return Err(NetError::Malformed(format!("parallel edge {u}-{v}")));
                }
                if !self.slot_neighbors(v).contains(&(u as u32)) {
                    return Err(NetError::Malformed(format!("asymmetric edge {u}-{v}")));
                }
            }
        }
        Ok(())
    }

    pub fn is_connected(&self) -> bool {
        self.two_color().0
    }

    /// A connected graph is bipartite iff a BFS two-colouring succeeds.
    pub fn is_bipartite(&self) -> bool {
        self.two_color().1
    }

    fn two_color(&self) -> (bool, bool) {
        let n = self.n();
        if n == 0 {
            return (true, true);
        }
        let mut color = vec![u8::MAX; n];
        let mut queue = std::collections::VecDeque::new();
        let mut bipartite = true;
        let mut seen = 0;
        color[0] = 0;
        queue.push_back(0usize);
        while let Some(u) = queue.pop_front() {
            seen += 1;
            for &v in self.slot_neighbors(u) {
                let v = v as usize;
                if color[v] == u8::MAX {
                    color[v] = 1 - color[u];
                    queue.push_back(v);
                } else if color[v] == color[u] {
                    bipartite = false;
                }
            }
        }
        (seen == n, bipartite)
    }

    /// Snapshot dump: header `round n d lambda_bound`, then one `u v` line per
    /// undirected edge (by node id, `u < v`, sorted).
    pub fn dump(&self) -> String {
        let mut edges = Vec::with_capacity(self.n() * self.degree / 2);
        for s in 0..self.n() {
            let u = self.ids[s];
            for &t in self.slot_neighbors(s) {
                let v = self.ids[t as usize];
                if u < v {
                    edges.push((u.0, v.0));
                }
            }
        }
        edges.sort_unstable();
        let mut out = String::with_capacity(edges.len() * 12 + 32);
        let _ = writeln!(out, "{} {} {} {}", self.round, self.n(), self.degree, self.lambda_bound);
        for (u, v) in edges {
            let _ = writeln!(out, "{u} {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle(n: u32) -> GraphSnapshot {
        let lists: Vec<Vec<u32>> = (0..n).map(|i| vec![(i + n - 1) % n, (i + 1) % n]).collect();
        GraphSnapshot::from_neighbor_lists(0, &lists).unwrap()
    }

    #[test]
    fn even_cycle_is_bipartite_odd_is_not() {
        assert!(cycle(4).is_bipartite());
        assert!(!cycle(5).is_bipartite());
        assert!(cycle(5).is_connected());
    }

    #[test]
    fn rejects_asymmetric_lists() {
        let lists = vec![vec![1, 2], vec![0, 2], vec![1, 3], vec![2, 0]];
        assert!(GraphSnapshot::from_neighbor_lists(0, &lists).is_err());
    }

    #[test]
    fn dump_lists_each_edge_once() {
        let g = cycle(5);
        let dump = g.dump();
        let mut lines = dump.lines();
        assert_eq!(lines.next(), Some("0 5 2 1"));
        assert_eq!(lines.count(), 5);
    }
}
