use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    Leaf { mu: f64 },
    Split { var: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub kind: NodeKind,
    pub parent: Option<usize>,
    pub depth: u32,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }
}

/// Binary regression tree stored as an arena; index 0 is the root and every
/// parent precedes its children.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(mu: f64) -> Tree {
        Tree { nodes: vec![TreeNode { kind: NodeKind::Leaf { mu }, parent: None, depth: 0 }] }
    }

    /// Composes a decision node over two subtrees.
    pub fn split(var: usize, value: f64, left: Tree, right: Tree) -> Tree {
        let mut nodes = vec![TreeNode { kind: NodeKind::Leaf { mu: 0.0 }, parent: None, depth: 0 }];
        let l = Self::graft(&mut nodes, &left, 0);
        let r = Self::graft(&mut nodes, &right, 0);
        nodes[0].kind = NodeKind::Split { var, value, left: l, right: r };
        Tree { nodes }
    }

    fn graft(nodes: &mut Vec<TreeNode>, sub: &Tree, parent: usize) -> usize {
        let offset = nodes.len();
        let base_depth = nodes[parent].depth + 1;
        for (i, node) in sub.nodes.iter().enumerate() {
            let kind = match node.kind {
                NodeKind::Split { var, value, left, right } => NodeKind::Split { var, value, left: left + offset, right: right + offset },
                leaf => leaf,
            };
            let parent = if i == 0 { Some(parent) } else { node.parent.map(|p| p + offset) };
            nodes.push(TreeNode { kind, parent, depth: node.depth + base_depth });
        }
        offset
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &TreeNode {
        &self.nodes[i]
    }

    pub fn is_root_leaf(&self) -> bool {
        self.nodes.len() == 1
    }

    pub fn leaf_index(&self, x: &DMatrix<f64>, row: usize) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i].kind {
                NodeKind::Leaf { .. } => return i,
                NodeKind::Split { var, value, left, right } => i = if x[(row, var)] < value { left } else { right },
            }
        }
    }

    pub fn predict_row(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        match self.nodes[self.leaf_index(x, row)].kind {
            NodeKind::Leaf { mu } => mu,
            NodeKind::Split { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows()).map(|r| self.predict_row(x, r)).collect()
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_leaf()).collect()
    }

    pub fn internal(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| !self.nodes[i].is_leaf()).collect()
    }

    /// Decision nodes whose two children are both leaves.
    pub fn nogs(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| match self.nodes[i].kind {
                NodeKind::Split { left, right, .. } => self.nodes[left].is_leaf() && self.nodes[right].is_leaf(),
                NodeKind::Leaf { .. } => false,
            })
            .collect()
    }

    pub fn max_depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn split_vars(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n.kind {
            NodeKind::Split { var, .. } => Some(var),
            NodeKind::Leaf { .. } => None,
        })
    }

    pub fn leaf_mus(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n.kind {
            NodeKind::Leaf { mu } => Some(mu),
            NodeKind::Split { .. } => None,
        })
    }

    pub fn set_mu(&mut self, leaf: usize, mu: f64) {
        if let NodeKind::Leaf { mu: m } = &mut self.nodes[leaf].kind {
            *m = mu;
        }
    }

    pub(crate) fn grow(&mut self, leaf: usize, var: usize, value: f64) -> (usize, usize) {
        let depth = self.nodes[leaf].depth + 1;
        let l = self.nodes.len();
        self.nodes.push(TreeNode { kind: NodeKind::Leaf { mu: 0.0 }, parent: Some(leaf), depth });
        self.nodes.push(TreeNode { kind: NodeKind::Leaf { mu: 0.0 }, parent: Some(leaf), depth });
        self.nodes[leaf].kind = NodeKind::Split { var, value, left: l, right: l + 1 };
        (l, l + 1)
    }

    pub(crate) fn set_rule(&mut self, node: usize, new_var: usize, new_value: f64) {
        if let NodeKind::Split { var, value, .. } = &mut self.nodes[node].kind {
            *var = new_var;
            *value = new_value;
        }
    }

    /// Collapses a decision node with two leaf children into a leaf.
    pub(crate) fn prune(&mut self, node: usize) {
        self.nodes[node].kind = NodeKind::Leaf { mu: 0.0 };
        self.compact();
    }

    /// Rebuilds the arena in depth-first preorder, dropping unreachable nodes.
    fn compact(&mut self) {
        let mut out: Vec<TreeNode> = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(0usize, None::<usize>, false)];
        while let Some((old, parent, is_right)) = stack.pop() {
            let new = out.len();
            let node = &self.nodes[old];
            out.push(TreeNode { kind: node.kind, parent, depth: node.depth });
            if let Some(p) = parent {
                if let NodeKind::Split { left, right, .. } = &mut out[p].kind {
                    if is_right {
                        *right = new;
                    } else {
                        *left = new;
                    }
                }
            }
            if let NodeKind::Split { left, right, .. } = node.kind {
                stack.push((right, Some(new), true));
                stack.push((left, Some(new), false));
            }
        }
        self.nodes = out;
    }

    pub fn to_records(&self, tree_id: usize) -> Vec<NodeRecord> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| match n.kind {
                NodeKind::Leaf { mu } => NodeRecord { tree: tree_id, node: i, parent: n.parent, kind: RecordKind::Leaf, split_var: None, split_value: None, mu: Some(mu) },
                NodeKind::Split { var, value, .. } => NodeRecord { tree: tree_id, node: i, parent: n.parent, kind: RecordKind::Split, split_var: Some(var), split_value: Some(value), mu: None },
            })
            .collect()
    }

    /// Inverse of [`Tree::to_records`] for the records of a single tree,
    /// ordered by node id; the first child listed for a parent is its left.
    pub fn from_records(records: &[NodeRecord]) -> Result<Tree> {
        if records.is_empty() || records[0].parent.is_some() {
            return Err(Error::InvalidTree("records must start with the root"));
        }
        let mut nodes: Vec<TreeNode> = Vec::with_capacity(records.len());
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); records.len()];
        for (i, r) in records.iter().enumerate() {
            if r.node != i {
                return Err(Error::InvalidTree("node ids must be consecutive"));
            }
            let depth = match r.parent {
                None if i == 0 => 0,
                Some(p) if p < i => {
                    children[p].push(i);
                    nodes[p].depth + 1
                }
                _ => return Err(Error::InvalidTree("parent must precede child")),
            };
            let kind = match r.kind {
                RecordKind::Leaf => NodeKind::Leaf { mu: r.mu.ok_or(Error::InvalidTree("leaf without mu"))? },
                RecordKind::Split => NodeKind::Split {
                    var: r.split_var.ok_or(Error::InvalidTree("split without variable"))?,
                    value: r.split_value.ok_or(Error::InvalidTree("split without value"))?,
                    left: 0,
                    right: 0,
                },
            };
            nodes.push(TreeNode { kind, parent: r.parent, depth });
        }
        for (i, node) in nodes.iter_mut().enumerate() {
            match (&mut node.kind, children[i].as_slice()) {
                (NodeKind::Split { left, right, .. }, [l, r]) => {
                    *left = *l;
                    *right = *r;
                }
                (NodeKind::Leaf { .. }, []) => {}
                _ => return Err(Error::InvalidTree("decision nodes need exactly two children, leaves none")),
            }
        }
        Ok(Tree { nodes })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordKind {
    Leaf,
    Split,
}

/// Flat serialized form of one tree node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub tree: usize,
    pub node: usize,
    pub parent: Option<usize>,
    pub kind: RecordKind,
    pub split_var: Option<usize>,
    pub split_value: Option<f64>,
    pub mu: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two splits, `x1 < 0.7` then `x2 < 0.4`, giving three cells.
    pub(crate) fn illustrative_tree() -> Tree {
        Tree::split(0, 0.7, Tree::leaf(1.0), Tree::split(1, 0.4, Tree::leaf(2.0), Tree::leaf(3.0)))
    }

    #[test]
    fn illustrative_partition() {
        let t = illustrative_tree();
        let x = DMatrix::from_row_slice(3, 2, &[0.5, 0.9, 0.8, 0.1, 0.8, 0.9]);
        assert_eq!(t.predict(&x), vec![1.0, 2.0, 3.0]);
        assert_eq!(t.leaves().len(), 3);
        assert_eq!(t.nogs().len(), 1);
        assert_eq!(t.max_depth(), 2);
    }

    #[test]
    fn constant_predictions() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 5.0]);
        assert_eq!(Tree::leaf(0.0).predict(&x), vec![0.0, 0.0]);
        assert_eq!(Tree::leaf(1.7).predict(&x), vec![1.7, 1.7]);
    }

    #[test]
    fn grow_and_prune_keep_arena_consistent() {
        let mut t = illustrative_tree();
        let leaf = t.leaves()[0];
        t.grow(leaf, 1, 0.2);
        assert_eq!(t.leaves().len(), 4);
        let nog = t.nogs()[0];
        t.prune(nog);
        assert_eq!(t.leaves().len(), 3);
        for (i, n) in t.nodes().iter().enumerate() {
            if let Some(p) = n.parent {
                assert!(p < i);
                assert_eq!(n.depth, t.node(p).depth + 1);
            }
        }
        let back = Tree::from_records(&t.to_records(0)).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn malformed_records_rejected() {
        let mut recs = illustrative_tree().to_records(3);
        recs.pop();
        assert!(Tree::from_records(&recs).is_err());
        assert!(Tree::from_records(&[]).is_err());
    }
}
