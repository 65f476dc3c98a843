/// Undirected, unweighted friendship graph over student indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FriendshipNetwork {
    neighbors: Vec<Vec<usize>>,
}

impl FriendshipNetwork {
    /// Builds the graph from index pairs. Order within a pair and repeated
    /// pairs do not matter. Self-loops must be filtered by the caller.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Self {
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in pairs {
            debug_assert_ne!(a, b);
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        FriendshipNetwork { neighbors }
    }

    pub fn n_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges as `(lo, hi)` index pairs in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().filter(move |&&k| k > i).map(move |&k| (i, k)))
    }

    pub fn isolated(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.neighbors.len()).filter(|&i| self.neighbors[i].is_empty())
    }

    /// Proportion of `i`'s friends for which `m` holds; 0 for isolated nodes.
    #[inline]
    pub fn share(&self, i: usize, m: impl Fn(usize) -> bool) -> f64 {
        let list = &self.neighbors[i];
        if list.is_empty() {
            return 0.0;
        }
        let count = list.iter().filter(|&&k| m(k)).count();
        count as f64 / list.len() as f64
    }
}
