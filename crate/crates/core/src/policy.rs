//! A common interface over every learned policy and its serialized form.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::ensemble::GuidanceTree;
use crate::error::Result;
use crate::policy_no_hte::RuleListPolicy;
use crate::tree::{arm_label, render_if_else, PolicyTree};

/// Deterministic map from a feature vector to an arm.
pub trait Policy: Sync {
    fn assign(&self, x: ArrayView1<'_, f64>) -> usize;

    fn n_features(&self) -> usize;

    /// Largest arm index the policy can return.
    fn max_arm(&self) -> usize;

    fn assign_all(&self, features: ArrayView2<'_, f64>) -> Vec<usize> {
        features.rows().into_iter().map(|x| self.assign(x)).collect()
    }
}

impl Policy for PolicyTree {
    fn assign(&self, x: ArrayView1<'_, f64>) -> usize {
        self.root.route(&x).arm
    }

    fn n_features(&self) -> usize {
        self.n_features()
    }

    fn max_arm(&self) -> usize {
        self.root.leaves().iter().map(|l| l.arm).max().unwrap_or(0)
    }
}

/// Any learned policy, tagged by `kind` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyModel {
    Tree(PolicyTree),
    RuleList(RuleListPolicy),
    Guidance(GuidanceTree),
}

impl PolicyModel {
    pub fn feature_names(&self) -> &[String] {
        match self {
            PolicyModel::Tree(t) => &t.feature_names,
            PolicyModel::RuleList(r) => &r.feature_names,
            PolicyModel::Guidance(g) => &g.feature_names,
        }
    }

    /// Checks the policy against a table schema with `n_arms` arms.
    pub fn check_schema(&self, n_features: usize, n_arms: usize) -> Result<()> {
        match self {
            PolicyModel::Tree(t) => {
                t.check_schema(n_features)?;
                t.check_arms(n_arms)
            }
            PolicyModel::RuleList(r) => r.check_schema(n_features, n_arms),
            PolicyModel::Guidance(g) => g.check_schema(n_features, n_arms),
        }
    }

    /// Plain-text if-else rendering.
    pub fn render(&self, n_arms: usize) -> String {
        match self {
            PolicyModel::Tree(t) => render_policy_tree(t, n_arms),
            PolicyModel::RuleList(r) => r.render(n_arms),
            PolicyModel::Guidance(g) => g.render(n_arms),
        }
    }
}

impl Policy for PolicyModel {
    fn assign(&self, x: ArrayView1<'_, f64>) -> usize {
        match self {
            PolicyModel::Tree(t) => t.assign(x),
            PolicyModel::RuleList(r) => r.assign(x),
            PolicyModel::Guidance(g) => g.assign(x),
        }
    }

    fn n_features(&self) -> usize {
        self.feature_names().len()
    }

    fn max_arm(&self) -> usize {
        match self {
            PolicyModel::Tree(t) => Policy::max_arm(t),
            PolicyModel::RuleList(r) => r.max_arm(),
            PolicyModel::Guidance(g) => g.max_arm(),
        }
    }
}

impl From<PolicyTree> for PolicyModel {
    fn from(t: PolicyTree) -> Self {
        PolicyModel::Tree(t)
    }
}

impl From<RuleListPolicy> for PolicyModel {
    fn from(r: RuleListPolicy) -> Self {
        PolicyModel::RuleList(r)
    }
}

impl From<GuidanceTree> for PolicyModel {
    fn from(g: GuidanceTree) -> Self {
        PolicyModel::Guidance(g)
    }
}

/// `If feature0 < -0.019, assign control.` style text.
pub fn render_policy_tree(tree: &PolicyTree, n_arms: usize) -> String {
    render_if_else(&tree.root, &tree.feature_names, &|l| {
        format!("assign {}", arm_label(l.arm, n_arms))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::default_feature_names;
    use crate::tree::{ArmLeaf, Node, Tree};
    use ndarray::array;

    #[test]
    fn tree_model_roundtrips_through_json() {
        let t = Tree::new(
            default_feature_names(2),
            Node::split(0, -0.019, Node::Leaf(ArmLeaf { arm: 0 }), Node::Leaf(ArmLeaf { arm: 1 })),
        );
        let m = PolicyModel::from(t);
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.starts_with(r#"{"kind":"tree""#));
        let back: PolicyModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert_eq!(m.assign(array![-1.0, 0.0].view()), 0);
        assert_eq!(
            m.render(2),
            "If feature0 < -0.019, assign control.\nOtherwise, assign treatment.\n"
        );
    }

    #[test]
    fn constant_tree_renders_for_everyone() {
        let m = PolicyModel::from(PolicyTree::constant(default_feature_names(1), 1));
        assert_eq!(m.render(2), "Assign treatment for everyone.\n");
        assert_eq!(m.max_arm(), 1);
    }
}
