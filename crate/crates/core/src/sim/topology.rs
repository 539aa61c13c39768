//! Communication patterns: star, hierarchical tree, gossip graph and clustered hybrids.

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::numkit::{spectral_norm, DenseMatrix};

const STOCHASTIC_TOL: f64 = 1e-10;

/// A multi-level aggregation tree.
///
/// `levels[0][i]` is the parent (edge server) of client `i`; `levels[k][j]` is the
/// parent of level-`k` node `j`. The last level has a single node, the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeTopology {
    levels: Vec<Vec<usize>>,
}

impl TreeTopology {
    pub fn new(levels: Vec<Vec<usize>>) -> Result<Self> {
        let t = Self { levels };
        t.validate()?;
        Ok(t)
    }

    /// Groups `fan_out` consecutive nodes under one parent, level by level, until a
    /// single root remains. At least one edge level is always present.
    pub fn balanced(clients: usize, fan_out: usize) -> Result<Self> {
        if clients == 0 {
            return Err(FedError::Topology("tree needs at least one client".into()));
        }
        if fan_out < 2 {
            return Err(FedError::Topology(format!("tree fan-out must be at least 2, got {fan_out}")));
        }
        let mut levels = Vec::new();
        let mut width = clients;
        loop {
            levels.push((0..width).map(|i| i / fan_out).collect::<Vec<_>>());
            width = width.div_ceil(fan_out);
            if width == 1 {
                break;
            }
        }
        if levels.len() == 1 {
            // a single edge server that reports to the root
            levels.push(vec![0]);
        }
        Self::new(levels)
    }

    /// Two-level tree from an explicit client→edge assignment.
    pub fn from_parents(parents: Vec<usize>, edges: usize) -> Result<Self> {
        Self::new(vec![parents, vec![0; edges]])
    }

    pub fn levels(&self) -> &[Vec<usize>] {
        &self.levels
    }

    pub fn num_clients(&self) -> usize {
        self.levels.first().map_or(0, |l| l.len())
    }

    /// Number of non-root aggregation nodes (edge servers and intermediate nodes).
    pub fn num_internal(&self) -> usize {
        self.levels.iter().skip(1).map(|l| l.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.len() < 2 {
            return Err(FedError::Topology("tree needs a client level and at least one edge level".into()));
        }
        for (k, level) in self.levels.iter().enumerate() {
            if level.is_empty() {
                return Err(FedError::Topology(format!("tree level {k} is empty")));
            }
            let width = self.levels.get(k + 1).map_or(1, |l| l.len());
            if let Some((i, &p)) = level.iter().enumerate().find(|(_, &p)| p >= width) {
                return Err(FedError::Topology(format!(
                    "orphan node {i} at level {k}: parent {p} does not exist"
                )));
            }
            if k + 1 < self.levels.len() {
                let mut has_child = vec![false; width];
                level.iter().for_each(|&p| has_child[p] = true);
                if let Some(j) = has_child.iter().position(|&c| !c) {
                    return Err(FedError::Topology(format!("node {j} at level {} has no children", k + 1)));
                }
            }
        }
        if self.levels.last().is_some_and(|l| l.iter().any(|&p| p != 0)) {
            return Err(FedError::Topology("top tree level must report to the single root".into()));
        }
        Ok(())
    }
}

/// A symmetric doubly-stochastic mixing matrix over an undirected graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GossipTopology {
    mixing: DenseMatrix,
}

impl GossipTopology {
    /// Metropolis-Hastings weights `W_ij = 1/(1 + max(deg_i, deg_j))` on the given edges.
    pub fn metropolis(nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if nodes == 0 {
            return Err(FedError::Topology("gossip graph needs at least one node".into()));
        }
        let mut adj = vec![vec![false; nodes]; nodes];
        for &(a, b) in edges {
            if a >= nodes || b >= nodes {
                return Err(FedError::Topology(format!("edge ({a}, {b}) outside {nodes} nodes")));
            }
            if a == b {
                return Err(FedError::Topology(format!("self loop at node {a}")));
            }
            adj[a][b] = true;
            adj[b][a] = true;
        }
        let deg: Vec<usize> = adj.iter().map(|r| r.iter().filter(|&&e| e).count()).collect();
        let mut w = DenseMatrix::zeros(nodes, nodes);
        for i in 0..nodes {
            for j in 0..nodes {
                if adj[i][j] {
                    w[(i, j)] = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
                }
            }
            let off: f64 = (0..nodes).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
            w[(i, i)] = 1.0 - off;
        }
        Self::from_matrix(w)
    }

    pub fn ring(nodes: usize) -> Result<Self> {
        let edges: Vec<(usize, usize)> = match nodes {
            0 | 1 => vec![],
            2 => vec![(0, 1)],
            n => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        };
        Self::metropolis(nodes, &edges)
    }

    pub fn complete(nodes: usize) -> Result<Self> {
        let edges: Vec<(usize, usize)> =
            (0..nodes).flat_map(|i| (i + 1..nodes).map(move |j| (i, j))).collect();
        Self::metropolis(nodes, &edges)
    }

    /// Wraps an explicit matrix after checking it is a valid mixing matrix.
    pub fn from_matrix(w: DenseMatrix) -> Result<Self> {
        validate_mixing(&w)?;
        Ok(Self { mixing: w })
    }

    pub fn mixing(&self) -> &DenseMatrix {
        &self.mixing
    }

    pub fn nodes(&self) -> usize {
        self.mixing.rows()
    }

    /// Neighbors of node `i` (nonzero off-diagonal weights).
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.nodes()).filter(|&j| j != i && self.mixing[(i, j)] > 0.0).collect()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).len()
    }

    /// `‖W − 11ᵀ/N‖₂`, the per-mix contraction factor of the consensus error.
    pub fn mixing_rate(&self) -> Result<f64> {
        let n = self.nodes();
        let centered = DenseMatrix::from_fn(n, n, |i, j| self.mixing[(i, j)] - 1.0 / n as f64);
        spectral_norm(&centered)
    }
}

/// Checks that `w` is square, nonnegative, symmetric and doubly stochastic.
pub fn validate_mixing(w: &DenseMatrix) -> Result<()> {
    let n = w.rows();
    if w.cols() != n {
        return Err(FedError::param(format!("mixing matrix must be square, got {}x{}", w.rows(), w.cols())));
    }
    for i in 0..n {
        let row: f64 = w.row(i).iter().sum();
        let col: f64 = (0..n).map(|k| w[(k, i)]).sum();
        if (row - 1.0).abs() > STOCHASTIC_TOL || (col - 1.0).abs() > STOCHASTIC_TOL {
            return Err(FedError::param(format!(
                "mixing matrix is not doubly stochastic: row {i} sums to {row}, column to {col}"
            )));
        }
        for j in 0..n {
            if w[(i, j)] < 0.0 {
                return Err(FedError::param(format!("mixing matrix has a negative entry at ({i}, {j})")));
            }
            if (w[(i, j)] - w[(j, i)]).abs() > STOCHASTIC_TOL {
                return Err(FedError::param(format!("mixing matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HubPattern {
    /// Each hub averages its cluster, then hubs gossip over a ring.
    HubGossip,
    /// Clients gossip inside their cluster, then the server averages the clusters.
    ClientGossip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteredTopology {
    assignment: Vec<usize>,
    clusters: usize,
    pattern: HubPattern,
}

impl ClusteredTopology {
    pub fn new(assignment: Vec<usize>, pattern: HubPattern) -> Result<Self> {
        let clusters = assignment.iter().max().map_or(0, |m| m + 1);
        if assignment.is_empty() {
            return Err(FedError::Topology("clustered topology needs clients".into()));
        }
        for c in 0..clusters {
            if !assignment.contains(&c) {
                return Err(FedError::Topology(format!("cluster {c} has no members")));
            }
        }
        Ok(Self { assignment, clusters, pattern })
    }

    /// `clusters` contiguous blocks of near-equal size.
    pub fn contiguous(clients: usize, clusters: usize, pattern: HubPattern) -> Result<Self> {
        if clusters == 0 || clusters > clients {
            return Err(FedError::Topology(format!("cannot form {clusters} clusters from {clients} clients")));
        }
        Self::new((0..clients).map(|i| i * clusters / clients).collect(), pattern)
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters
    }

    pub fn pattern(&self) -> HubPattern {
        self.pattern
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == cluster).collect()
    }

    /// Ring mixing among hubs.
    pub fn hub_mixing(&self) -> Result<GossipTopology> {
        GossipTopology::ring(self.clusters)
    }

    /// Ring mixing among the members of one cluster, indexed by position in [`Self::members`].
    pub fn intra_mixing(&self, cluster: usize) -> Result<GossipTopology> {
        GossipTopology::ring(self.members(cluster).len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    Star,
    Tree(TreeTopology),
    Gossip(GossipTopology),
    Clustered(ClusteredTopology),
}

impl Topology {
    pub fn name(&self) -> &'static str {
        match self {
            Topology::Star => "star",
            Topology::Tree(_) => "tree",
            Topology::Gossip(_) => "gossip",
            Topology::Clustered(_) => "clustered",
        }
    }

    /// Checks that the topology covers exactly `clients` clients.
    pub fn validate_for(&self, clients: usize) -> Result<()> {
        let covered = match self {
            Topology::Star => clients,
            Topology::Tree(t) => {
                t.validate()?;
                t.num_clients()
            }
            Topology::Gossip(g) => g.nodes(),
            Topology::Clustered(c) => c.assignment.len(),
        };
        if covered != clients {
            return Err(FedError::Topology(format!(
                "{} topology covers {covered} clients but the problem has {clients}",
                self.name()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_metropolis_weights() {
        let g = GossipTopology::ring(4).unwrap();
        let w = g.mixing();
        assert!((w[(0, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((w[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(w[(0, 2)], 0.0);
        assert_eq!(g.neighbors(0), vec![1, 3]);
    }

    #[test]
    fn ring_of_eight_rate() {
        // eigenvalues of the ring are 1/3 + 2/3 cos(2πk/8)
        let rate = GossipTopology::ring(8).unwrap().mixing_rate().unwrap();
        let expected = (1.0 / 3.0 + 2.0 / 3.0 * (std::f64::consts::PI / 4.0).cos()).abs();
        assert!((rate - expected).abs() < 1e-9, "{rate} vs {expected}");
    }

    #[test]
    fn rejects_non_stochastic() {
        let w = DenseMatrix::new(2, 2, vec![0.6, 0.5, 0.4, 0.5]).unwrap();
        assert!(matches!(GossipTopology::from_matrix(w), Err(FedError::Parameter(_))));
        let w = DenseMatrix::new(2, 2, vec![1.2, -0.2, -0.2, 1.2]).unwrap();
        assert!(GossipTopology::from_matrix(w).is_err());
    }

    #[test]
    fn balanced_tree_shapes() {
        let t = TreeTopology::balanced(10, 3).unwrap();
        assert_eq!(t.levels()[0], vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3]);
        assert_eq!(t.levels().len(), 3);
        let t = TreeTopology::balanced(3, 4).unwrap();
        assert_eq!(t.levels(), &[vec![0, 0, 0], vec![0]]);
    }

    #[test]
    fn orphan_is_a_topology_error() {
        let err = TreeTopology::from_parents(vec![0, 2], 2).unwrap_err();
        assert!(matches!(err, FedError::Topology(_)));
    }

    #[test]
    fn clusters_cover_clients() {
        let c = ClusteredTopology::contiguous(7, 3, HubPattern::HubGossip).unwrap();
        let mut all: Vec<usize> = (0..3).flat_map(|k| c.members(k)).collect();
        all.sort_unstable();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
        assert!(ClusteredTopology::new(vec![0, 2], HubPattern::ClientGossip).is_err());
    }
}
