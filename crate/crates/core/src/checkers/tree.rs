//! Finite execution trees: rooted, with call/return labels on some edges.

use std::fmt;

use crate::explore::Model;
use crate::history::{Action, History};
use crate::mp::{MpImplementation, MpStep, Simulation};
use crate::trace::TraceHeader;

use super::CheckError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNode {
    pub parent: Option<usize>,
    /// Call or return action of the edge into this node, if any.
    pub label: Option<Action>,
    /// Description of the edge into this node.
    pub step: String,
    pub depth: usize,
    pub children: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecutionTree {
    nodes: Vec<TreeNode>,
}

impl Default for ExecutionTree {
    fn default() -> Self {
        Self::new()
    }
}

impl ExecutionTree {
    pub fn new() -> Self {
        Self {
            nodes: vec![TreeNode {
                parent: None,
                label: None,
                step: String::new(),
                depth: 0,
                children: Vec::new(),
            }],
        }
    }

    pub const ROOT: usize = 0;

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn add_child(&mut self, parent: usize, label: Option<Action>, step: impl Into<String>) -> usize {
        let id = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        self.nodes.push(TreeNode {
            parent: Some(parent),
            label,
            step: step.into(),
            depth,
            children: Vec::new(),
        });
        self.nodes[parent].children.push(id);
        id
    }

    /// Child of `parent` reached by an edge described as `step`, if present.
    pub fn child_by_step(&self, parent: usize, step: &str) -> Option<usize> {
        self.nodes[parent]
            .children
            .iter()
            .copied()
            .find(|c| self.nodes[*c].step == step)
    }

    /// Node ids from the root to `id`, inclusive.
    pub fn path(&self, id: usize) -> Vec<usize> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// History of the execution ending at `id`.
    pub fn history(&self, id: usize) -> History {
        self.path(id)
            .into_iter()
            .filter_map(|n| self.nodes[n].label.clone())
            .collect()
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|n| self.nodes[*n].children.is_empty())
            .collect()
    }

    /// Builds a tree from step sequences sharing prefixes. Each step is a
    /// description plus its call/return label.
    pub fn from_paths<I, P>(paths: I) -> Self
    where
        I: IntoIterator<Item = P>,
        P: IntoIterator<Item = (String, Option<Action>)>,
    {
        let mut tree = Self::new();
        for path in paths {
            let mut cur = Self::ROOT;
            for (step, label) in path {
                cur = match tree.child_by_step(cur, &step) {
                    Some(c) => {
                        debug_assert_eq!(tree.nodes[c].label, label);
                        c
                    }
                    None => tree.add_child(cur, label, step),
                };
            }
        }
        tree
    }

    /// Unfolds every schedule of `model` to `depth` steps, without merging
    /// equal states. Returns the tree and the state at each node.
    pub fn from_model<M, L>(
        model: &M,
        depth: usize,
        max_nodes: usize,
        label: L,
    ) -> Result<(Self, Vec<M::State>), CheckError>
    where
        M: Model,
        L: Fn(&M::Step) -> Option<Action>,
    {
        let mut tree = Self::new();
        let mut states = vec![model.initial()];
        let mut stack = vec![Self::ROOT];
        while let Some(id) = stack.pop() {
            if tree.nodes[id].depth >= depth {
                continue;
            }
            let s = states[id].clone();
            let mut kids = Vec::new();
            for step in model.steps(&s) {
                if let Some(next) = model.next(&s, &step) {
                    if tree.len() >= max_nodes {
                        return Err(CheckError::BoundExceeded {
                            what: "tree nodes",
                            size: tree.len() + 1,
                            bound: max_nodes,
                        });
                    }
                    let c = tree.add_child(id, label(&step), format!("{step:?}"));
                    states.push(next);
                    kids.push(c);
                }
            }
            stack.extend(kids.into_iter().rev());
        }
        Ok((tree, states))
    }

    /// Runs each schedule of a message-passing implementation from the
    /// initial state and merges the runs into one tree.
    pub fn from_mp_schedules<I: MpImplementation>(
        imp: &I,
        schedules: &[Vec<MpStep>],
    ) -> Result<Self, crate::mp::MpError> {
        let mut paths = Vec::with_capacity(schedules.len());
        for schedule in schedules {
            let mut sim = Simulation::new(imp, TraceHeader::new(imp.clients(), imp.servers(), 0), false);
            let mut path = Vec::with_capacity(schedule.len());
            for step in schedule {
                let label = sim.apply(step)?;
                path.push((describe_mp_step(step), label));
            }
            paths.push(path);
        }
        Ok(Self::from_paths(paths))
    }
}

pub fn describe_mp_step(step: &MpStep) -> String {
    match step {
        MpStep::Call { pid, invocation } => format!("call {invocation} @{pid}"),
        MpStep::Return { pid } => format!("ret @{pid}"),
        MpStep::Internal { pid, recv } => {
            let uids: Vec<String> = recv.iter().map(|u| u.to_string()).collect();
            format!("recv {{{}}} @{pid}", uids.join(","))
        }
    }
}

impl fmt::Display for ExecutionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut stack = vec![Self::ROOT];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            let label = node.label.as_ref().map(|a| format!("  [{a}]")).unwrap_or_default();
            writeln!(f, "{:indent$}#{id} {}{label}", "", node.step, indent = node.depth * 2)?;
            stack.extend(node.children.iter().rev());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::{InvId, Method, Value};

    fn call(i: u64) -> Option<Action> {
        Some(Action::Call {
            inv: InvId(i),
            method: Method::Read,
            arg: Value::Unit,
        })
    }

    #[test]
    fn paths_share_prefixes() {
        let tree = ExecutionTree::from_paths(vec![
            vec![("a".to_string(), call(0)), ("b".to_string(), None)],
            vec![("a".to_string(), call(0)), ("c".to_string(), None)],
        ]);
        assert_eq!(tree.len(), 4);
        assert_eq!(tree.leaves().len(), 2);
        let leaf = tree.leaves()[1];
        assert_eq!(tree.path(leaf).len(), 3);
        assert_eq!(tree.history(leaf).len(), 1);
    }
}
