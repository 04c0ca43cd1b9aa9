/// Undirected neighborhood structure in compressed sparse row form.
///
/// Self-loops are never stored. Neighbor lists are sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Adjacency {
    /// Builds from undirected pairs. Duplicates and self-loops are dropped.
    ///
    /// Panics if an endpoint is `>= node_count`.
    pub fn from_edges(node_count: usize, edges: &[(usize, usize)]) -> Self {
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); node_count];
        for &(a, b) in edges {
            assert!(
                a < node_count && b < node_count,
                "edge ({a}, {b}) out of range for {node_count} nodes"
            );
            if a == b {
                continue;
            }
            lists[a].push(b);
            lists[b].push(a);
        }
        let mut offsets = Vec::with_capacity(node_count + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for mut l in lists {
            l.sort_unstable();
            l.dedup();
            neighbors.extend_from_slice(&l);
            offsets.push(neighbors.len());
        }
        Adjacency { offsets, neighbors }
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Adjacency {
        let n = self.node_count();
        assert_eq!(perm.len(), n);
        let mut edges = Vec::with_capacity(self.edge_count());
        for i in 0..n {
            for &j in self.neighbors(i) {
                if i < j {
                    edges.push((perm[i], perm[j]));
                }
            }
        }
        Adjacency::from_edges(n, &edges)
    }
}
