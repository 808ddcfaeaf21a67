//! Joint trees and hop distances.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Joint names of the 22-joint hand used by SHREC'17 and DHG-14/28.
pub const HAND22_JOINTS: [&str; 22] = [
    "wrist",
    "palm",
    "thumb_base",
    "thumb_first",
    "thumb_second",
    "thumb_tip",
    "index_base",
    "index_first",
    "index_second",
    "index_tip",
    "middle_base",
    "middle_first",
    "middle_second",
    "middle_tip",
    "ring_base",
    "ring_first",
    "ring_second",
    "ring_tip",
    "pinky_base",
    "pinky_first",
    "pinky_second",
    "pinky_tip",
];

/// Skeleton tree over `joint_count` joints.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSpec {
    joint_count: usize,
    /// `(child, parent)` pairs.
    edges: Vec<(usize, usize)>,
    root: usize,
    parent: Vec<Option<usize>>,
    hop: Vec<usize>,
}

impl GraphSpec {
    /// Build from `(child, parent)` pairs; the pairs must form a tree rooted at `root`.
    pub fn new(joint_count: usize, edges: Vec<(usize, usize)>, root: usize) -> Result<Self> {
        if joint_count == 0 || root >= joint_count {
            return Err(Error::Config(format!("bad graph: V={joint_count}, root={root}")));
        }
        if edges.len() != joint_count - 1 {
            return Err(Error::Config(format!(
                "a tree over {joint_count} joints needs {} edges, got {}",
                joint_count - 1,
                edges.len()
            )));
        }
        let mut parent = vec![None; joint_count];
        for &(c, p) in &edges {
            if c >= joint_count || p >= joint_count || c == p || c == root {
                return Err(Error::Config(format!("bad edge ({c}, {p})")));
            }
            if parent[c].replace(p).is_some() {
                return Err(Error::Config(format!("joint {c} has two parents")));
            }
        }
        let hop = hop_table(joint_count, &edges);
        if hop.contains(&usize::MAX) {
            return Err(Error::Config("graph is not connected".into()));
        }
        Ok(Self {
            joint_count,
            edges,
            root,
            parent,
            hop,
        })
    }

    /// The SHREC'17 / DHG hand: wrist root, palm, then four bones per finger.
    pub fn hand22() -> Self {
        let mut edges = vec![(1, 0), (2, 0), (3, 2), (4, 3), (5, 4)];
        for finger in 0..4 {
            let base = 6 + 4 * finger;
            edges.push((base, 1));
            for j in 1..4 {
                edges.push((base + j, base + j - 1));
            }
        }
        Self::new(22, edges, 0).expect("hand graph is a tree")
    }

    /// Path graph 0-1-...-(V-1) rooted at 0. Used for small synthetic graphs.
    pub fn chain(joint_count: usize) -> Result<Self> {
        Self::new(joint_count, (1..joint_count).map(|j| (j, j - 1)).collect(), 0)
    }

    /// The hand for `V = 22`, a chain otherwise.
    pub fn for_joints(joint_count: usize) -> Result<Self> {
        if joint_count == 22 {
            Ok(Self::hand22())
        } else {
            Self::chain(joint_count)
        }
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parent[joint]
    }

    pub fn hop_distance(&self, i: usize, j: usize) -> usize {
        self.hop[i * self.joint_count + j]
    }

    /// Joints ordered so every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.joint_count);
        let mut queue = VecDeque::from([self.root]);
        while let Some(j) = queue.pop_front() {
            order.push(j);
            queue.extend((0..self.joint_count).filter(|&c| self.parent[c] == Some(j)));
        }
        order
    }
}

fn hop_table(v: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut adj = vec![Vec::new(); v];
    for &(c, p) in edges {
        adj[c].push(p);
        adj[p].push(c);
    }
    let mut hop = vec![usize::MAX; v * v];
    for s in 0..v {
        let row = &mut hop[s * v..(s + 1) * v];
        row[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if row[w] == usize::MAX {
                    row[w] = row[u] + 1;
                    queue.push_back(w);
                }
            }
        }
    }
    hop
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_is_a_tree_with_wrist_root() {
        let g = GraphSpec::hand22();
        assert_eq!(g.edges().len(), 21);
        assert_eq!(g.root(), 0);
        assert_eq!(g.topological_order().len(), 22);
        assert_eq!(g.hop_distance(0, 5), 4);
        assert_eq!(g.hop_distance(9, 13), 8);
    }

    #[test]
    fn hop_table_is_a_metric() {
        let g = GraphSpec::hand22();
        for i in 0..22 {
            assert_eq!(g.hop_distance(i, i), 0);
            for j in 0..22 {
                assert_eq!(g.hop_distance(i, j), g.hop_distance(j, i));
                for k in 0..22 {
                    assert!(g.hop_distance(i, k) <= g.hop_distance(i, j) + g.hop_distance(j, k));
                }
            }
        }
    }

    #[test]
    fn rejects_cycles_and_double_parents() {
        assert!(GraphSpec::new(3, vec![(1, 0), (1, 2)], 0).is_err());
        assert!(GraphSpec::new(3, vec![(1, 2), (2, 1)], 0).is_err());
        assert!(GraphSpec::new(3, vec![(1, 0)], 0).is_err());
    }
}
