use serde::{Deserialize, Serialize};

/// Flat binary tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode<V> {
    /// Rows with `x[feature] < threshold` go to `left`.
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: V,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<V> {
    pub nodes: Vec<TreeNode<V>>,
}

/// Leaves hold class distributions.
pub type ClassTree = Tree<[f64; super::N_CLASSES]>;
/// Leaves hold additive scores.
pub type RegressionTree = Tree<f64>;

impl<V> Tree<V> {
    pub fn leaf(&self, x: &[f64]) -> &V {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] < *threshold { *left } else { *right },
                TreeNode::Leaf { value } => return value,
            }
        }
    }

    /// Edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk<V>(t: &Tree<V>, at: usize) -> usize {
            match &t.nodes[at] {
                TreeNode::Internal { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            walk(self, 0)
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &V> {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Leaf { value } => Some(value),
            TreeNode::Internal { .. } => None,
        })
    }
}
