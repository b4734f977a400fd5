//! Strong linearizability on finite execution trees.
//!
//! We look for `f` mapping every node to a sequential history with
//! `hist(node) ⊑ f(node)` and `f(parent)` a prefix of `f(child)`. The search
//! goes top down: a node with committed linearization `L` is feasible when
//! every child admits some extension `L · ext` that is feasible in turn.
//! Results are memoized on `(node, L)`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::history::{Action, History, InvId, Operation, Value};
use crate::object_spec::{is_linearization, SeqSpec};

use super::tree::ExecutionTree;
use super::CheckError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StrongConfig {
    pub max_nodes: usize,
    pub max_invocations: usize,
}

impl Default for StrongConfig {
    fn default() -> Self {
        Self {
            max_nodes: 100_000,
            max_invocations: 6,
        }
    }
}

/// A linearization for every node of the tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub lin: Vec<History>,
}

/// A node where every linearization fails some descendant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Counterexample {
    pub node: usize,
    pub node_history: History,
    /// Every linearization of the node's history, each with a descendant
    /// that no extension of it can linearize.
    pub refuted: Vec<(History, usize)>,
    /// Two executions that together refute every candidate.
    pub pair: (usize, usize),
}

impl Counterexample {
    pub fn render(&self, tree: &ExecutionTree) -> String {
        let mut out = String::new();
        let describe = |n: usize| {
            tree.path(n)
                .into_iter()
                .skip(1)
                .map(|k| tree.node(k).step.clone())
                .collect::<Vec<_>>()
                .join("; ")
        };
        out.push_str(&format!("branch node #{} after: {}\n", self.node, describe(self.node)));
        out.push_str("history at branch node:\n");
        out.push_str(&indent(&self.node_history.to_text()));
        for (side, n) in [("first", self.pair.0), ("second", self.pair.1)] {
            out.push_str(&format!("{side} execution #{n}: {}\n", describe(n)));
            out.push_str(&indent(&tree.history(n).to_text()));
        }
        out.push_str("candidate linearizations at branch node:\n");
        for (lin, by) in &self.refuted {
            let ops: Vec<String> = lin
                .actions()
                .chunks(2)
                .map(|p| match p {
                    [Action::Call { inv, method, arg }, Action::Return { value, .. }] => {
                        format!("{method}({arg})#{inv}->{value}")
                    }
                    _ => "?".into(),
                })
                .collect();
            out.push_str(&format!("  [{}] refuted by #{by}\n", ops.join(", ")));
        }
        out
    }
}

fn indent(text: &str) -> String {
    text.lines().map(|l| format!("  {l}\n")).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StrongVerdict {
    StronglyLinearizable(Assignment),
    Refuted(Counterexample),
}

impl StrongVerdict {
    pub fn holds(&self) -> bool {
        matches!(self, StrongVerdict::StronglyLinearizable(_))
    }
}

impl fmt::Display for StrongVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrongVerdict::StronglyLinearizable(a) => {
                write!(f, "strongly linearizable ({} nodes assigned)", a.lin.len())
            }
            StrongVerdict::Refuted(c) => write!(
                f,
                "not strongly linearizable: branch node #{}, executions #{} and #{}",
                c.node, c.pair.0, c.pair.1
            ),
        }
    }
}

/// One linearized invocation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct Entry {
    inv: InvId,
    ret: Value,
}

type Lin = Vec<Entry>;

struct NodeInfo {
    ops: Vec<Operation>,
    index: HashMap<InvId, usize>,
}

struct Search<'a> {
    tree: &'a ExecutionTree,
    spec: &'a SeqSpec,
    info: Vec<NodeInfo>,
    memo: HashMap<(usize, Lin), bool>,
}

impl<'a> Search<'a> {
    fn new(tree: &'a ExecutionTree, spec: &'a SeqSpec) -> Result<Self, CheckError> {
        let mut info = Vec::with_capacity(tree.len());
        for id in 0..tree.len() {
            let ops = tree.history(id).operations()?;
            let index = ops.iter().enumerate().map(|(i, op)| (op.inv, i)).collect();
            info.push(NodeInfo { ops, index });
        }
        Ok(Self {
            tree,
            spec,
            info,
            memo: HashMap::new(),
        })
    }

    /// Abstract value after `lin` at `node`; `None` if `lin` is illegal.
    fn value_after(&self, node: usize, lin: &Lin) -> Option<Value> {
        let info = &self.info[node];
        let mut v = self.spec.initial();
        for e in lin {
            let op = &info.ops[*info.index.get(&e.inv)?];
            let (ret, next) = self.spec.apply(&v, op.method, &op.arg).ok()?;
            if ret != e.ret || op.ret.as_ref().is_some_and(|(_, r)| *r != ret) {
                return None;
            }
            v = next;
        }
        Some(v)
    }

    /// Calls `visit` on every extension `ext` making `lin · ext` a
    /// linearization of the history at `node`, shortest prefixes first.
    /// Stops early when `visit` returns true.
    fn extensions(&self, node: usize, lin: &Lin, visit: &mut dyn FnMut(&Lin) -> bool) -> bool {
        let info = &self.info[node];
        let Some(value) = self.value_after(node, lin) else {
            return false;
        };
        let placed: BTreeSet<usize> = lin.iter().filter_map(|e| info.index.get(&e.inv).copied()).collect();
        let mut cur = lin.clone();
        self.extend(info, &mut cur, placed, value, visit)
    }

    fn extend(
        &self,
        info: &NodeInfo,
        cur: &mut Lin,
        placed: BTreeSet<usize>,
        value: Value,
        visit: &mut dyn FnMut(&Lin) -> bool,
    ) -> bool {
        let complete = info
            .ops
            .iter()
            .enumerate()
            .all(|(i, op)| !op.is_complete() || placed.contains(&i));
        if complete && visit(cur) {
            return true;
        }
        for (i, op) in info.ops.iter().enumerate() {
            if placed.contains(&i) {
                continue;
            }
            let blocked = info
                .ops
                .iter()
                .enumerate()
                .any(|(j, other)| j != i && !placed.contains(&j) && other.precedes(op));
            if blocked {
                continue;
            }
            let Ok((ret, next)) = self.spec.apply(&value, op.method, &op.arg) else {
                continue;
            };
            if op.ret.as_ref().is_some_and(|(_, r)| *r != ret) {
                continue;
            }
            cur.push(Entry { inv: op.inv, ret });
            let mut p = placed.clone();
            p.insert(i);
            if self.extend(info, cur, p, next, visit) {
                cur.pop();
                return true;
            }
            cur.pop();
        }
        false
    }

    /// `lin` is a linearization of the history at `node`; can it be
    /// extended consistently over the whole subtree?
    fn feasible(&mut self, node: usize, lin: &Lin) -> bool {
        if let Some(&r) = self.memo.get(&(node, lin.clone())) {
            return r;
        }
        let children = self.tree.node(node).children.clone();
        let mut ok = true;
        for c in children {
            if self.choose(c, lin).is_none() {
                ok = false;
                break;
            }
        }
        self.memo.insert((node, lin.clone()), ok);
        ok
    }

    /// First feasible extension of the parent's `lin` at child `c`.
    fn choose(&mut self, c: usize, lin: &Lin) -> Option<Lin> {
        let mut candidates = Vec::new();
        self.extensions(c, lin, &mut |l| {
            candidates.push(l.clone());
            false
        });
        candidates.into_iter().find(|l| self.feasible(c, l))
    }

    fn all_linearizations(&self, node: usize) -> Vec<Lin> {
        let mut out = Vec::new();
        self.extensions(node, &Vec::new(), &mut |l| {
            out.push(l.clone());
            false
        });
        out
    }

    fn to_history(&self, node: usize, lin: &Lin) -> History {
        let info = &self.info[node];
        lin.iter()
            .flat_map(|e| {
                let op = &info.ops[info.index[&e.inv]];
                [
                    Action::Call {
                        inv: op.inv,
                        method: op.method,
                        arg: op.arg.clone(),
                    },
                    Action::Return {
                        inv: op.inv,
                        value: e.ret.clone(),
                    },
                ]
            })
            .collect()
    }

    fn assign(&mut self) -> Assignment {
        let mut lin = vec![History::new(); self.tree.len()];
        let mut stack = vec![(ExecutionTree::ROOT, Vec::new())];
        while let Some((node, l)) = stack.pop() {
            lin[node] = self.to_history(node, &l);
            for c in self.tree.node(node).children.clone() {
                let next = self.choose(c, &l).expect("feasible parent has feasible children");
                stack.push((c, next));
            }
        }
        Assignment { lin }
    }

    fn dead(&mut self, node: usize) -> bool {
        self.all_linearizations(node).into_iter().all(|l| !self.feasible(node, &l))
    }

    /// Does the single execution ending at `leaf` refute `lin` at `node`?
    fn refutes_alone(&self, leaf: usize, lin: &Lin) -> bool {
        let mut found = false;
        self.extensions(leaf, lin, &mut |_| {
            found = true;
            true
        });
        !found
    }

    fn refuter(&mut self, node: usize, lin: &Lin) -> usize {
        let children = self.tree.node(node).children.clone();
        for c in children {
            if self.choose(c, lin).is_some() {
                continue;
            }
            let mut leaves: Vec<usize> = Vec::new();
            let mut stack = vec![c];
            while let Some(n) = stack.pop() {
                let kids = &self.tree.node(n).children;
                if kids.is_empty() {
                    leaves.push(n);
                }
                stack.extend(kids.iter().rev());
            }
            return leaves.into_iter().find(|l| self.refutes_alone(*l, lin)).unwrap_or(c);
        }
        node
    }

    fn counterexample(&mut self) -> Counterexample {
        let mut node = ExecutionTree::ROOT;
        'descend: loop {
            for c in self.tree.node(node).children.clone() {
                if self.dead(c) {
                    node = c;
                    continue 'descend;
                }
            }
            break;
        }
        let cands = self.all_linearizations(node);
        let refuted: Vec<(History, usize)> = cands
            .iter()
            .map(|l| (self.to_history(node, l), self.refuter(node, l)))
            .collect();
        let mut by: Vec<usize> = refuted.iter().map(|(_, n)| *n).collect();
        by.sort_unstable();
        by.dedup();
        let pair = match by.as_slice() {
            [] => (node, node),
            [only] => (*only, *only),
            [a, b, ..] => (*a, *b),
        };
        Counterexample {
            node,
            node_history: self.tree.history(node),
            refuted,
            pair,
        }
    }
}

pub fn check_strongly_linearizable(tree: &ExecutionTree, spec: &SeqSpec) -> Result<StrongVerdict, CheckError> {
    check_strongly_linearizable_with(tree, spec, &StrongConfig::default())
}

pub fn check_strongly_linearizable_with(
    tree: &ExecutionTree,
    spec: &SeqSpec,
    cfg: &StrongConfig,
) -> Result<StrongVerdict, CheckError> {
    if tree.len() > cfg.max_nodes {
        return Err(CheckError::BoundExceeded {
            what: "tree nodes",
            size: tree.len(),
            bound: cfg.max_nodes,
        });
    }
    let mut search = Search::new(tree, spec)?;
    let invocations = search.info.iter().map(|i| i.ops.len()).max().unwrap_or(0);
    if invocations > cfg.max_invocations {
        return Err(CheckError::BoundExceeded {
            what: "invocations",
            size: invocations,
            bound: cfg.max_invocations,
        });
    }
    if search.feasible(ExecutionTree::ROOT, &Vec::new()) {
        Ok(StrongVerdict::StronglyLinearizable(search.assign()))
    } else {
        Ok(StrongVerdict::Refuted(search.counterexample()))
    }
}

/// Checks that `a` linearizes every node and is prefix-preserving.
pub fn verify_assignment(tree: &ExecutionTree, spec: &SeqSpec, a: &Assignment) -> Result<(), String> {
    if a.lin.len() != tree.len() {
        return Err(format!("assignment covers {} of {} nodes", a.lin.len(), tree.len()));
    }
    for id in 0..tree.len() {
        let h = tree.history(id);
        match is_linearization(&h, &a.lin[id], spec) {
            Ok(true) => {}
            Ok(false) => return Err(format!("node #{id}: not a linearization of its history")),
            Err(e) => return Err(format!("node #{id}: {e}")),
        }
        if let Some(p) = tree.node(id).parent {
            if !a.lin[id].actions().starts_with(a.lin[p].actions()) {
                return Err(format!("node #{id}: parent linearization is not a prefix"));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::Method;

    fn call(inv: u64, method: Method, arg: Value) -> Option<Action> {
        Some(Action::Call {
            inv: InvId(inv),
            method,
            arg,
        })
    }

    fn ret(inv: u64, value: Value) -> Option<Action> {
        Some(Action::Return { inv: InvId(inv), value })
    }

    fn path(steps: Vec<(&str, Option<Action>)>) -> Vec<(String, Option<Action>)> {
        steps.into_iter().map(|(s, a)| (s.to_string(), a)).collect()
    }

    /// A write pending while one read returns 1; then a concurrent read
    /// returns 1 on one branch and 0 on another.
    fn branching_tree() -> ExecutionTree {
        let prefix = vec![
            ("w", call(0, Method::Write, Value::Int(1))),
            ("r1", call(1, Method::Read, Value::Unit)),
            ("r2", call(2, Method::Read, Value::Unit)),
            ("r2 done", ret(2, Value::Int(1))),
            ("split", None),
        ];
        let mut a = prefix.clone();
        a.push(("r1 gets 1", ret(1, Value::Int(1))));
        let mut b = prefix;
        b.push(("r1 gets 0", ret(1, Value::Int(0))));
        ExecutionTree::from_paths(vec![path(a), path(b)])
    }

    #[test]
    fn branching_reads_refute() {
        let tree = branching_tree();
        let reg = SeqSpec::mw_register(0);
        let StrongVerdict::Refuted(cx) = check_strongly_linearizable(&tree, &reg).unwrap() else {
            panic!("expected refutation");
        };
        assert_eq!(tree.node(cx.node).step, "split");
        assert_ne!(cx.pair.0, cx.pair.1);
        assert_eq!(cx.refuted.len(), 4);
        // each branch alone is linearizable
        for leaf in tree.leaves() {
            let single = ExecutionTree::from_paths(vec![tree
                .path(leaf)
                .into_iter()
                .skip(1)
                .map(|n| (tree.node(n).step.clone(), tree.node(n).label.clone()))
                .collect::<Vec<_>>()]);
            assert!(check_strongly_linearizable(&single, &reg).unwrap().holds());
        }
        assert!(cx.render(&tree).contains("refuted by"));
    }

    #[test]
    fn assignment_is_verified() {
        let reg = SeqSpec::mw_register(0);
        let tree = ExecutionTree::from_paths(vec![path(vec![
            ("w", call(0, Method::Write, Value::Int(1))),
            ("r", call(1, Method::Read, Value::Unit)),
            ("r done", ret(1, Value::Int(1))),
            ("w done", ret(0, Value::Unit)),
        ])]);
        let StrongVerdict::StronglyLinearizable(a) = check_strongly_linearizable(&tree, &reg).unwrap() else {
            panic!()
        };
        verify_assignment(&tree, &reg, &a).unwrap();
        let mut broken = a.clone();
        broken.lin[3] = History::new();
        assert!(verify_assignment(&tree, &reg, &broken).is_err());
    }

    #[test]
    fn bounds_are_enforced() {
        let tree = branching_tree();
        let reg = SeqSpec::mw_register(0);
        let tight = StrongConfig {
            max_nodes: 3,
            max_invocations: 6,
        };
        assert!(matches!(
            check_strongly_linearizable_with(&tree, &reg, &tight),
            Err(CheckError::BoundExceeded { .. })
        ));
    }
}
