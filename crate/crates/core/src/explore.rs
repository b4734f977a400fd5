//! Bounded exhaustive exploration of deterministic step systems.
//!
//! The explorer walks all schedules up to a depth bound breadth first. States
//! are fingerprinted and each distinct state is expanded once, at the depth
//! where it is first reached. A layer is expanded in parallel and merged in
//! input order, so parallel and sequential runs report the same numbers.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::hash::Hash;

use crate::digest::fingerprint;
use crate::par::Parallelism;

/// A system whose successor relation is enumerated by step labels.
pub trait Model: Sync {
    type State: Clone + Hash + Send + Sync;
    type Step: Clone + fmt::Debug + Send + Sync;

    fn initial(&self) -> Self::State;

    /// Steps enabled at `s`, in a deterministic order.
    fn steps(&self, s: &Self::State) -> Vec<Self::Step>;

    /// Successor of `s` under `step`; `None` prunes the step.
    fn next(&self, s: &Self::State, step: &Self::Step) -> Option<Self::State>;

    /// Invariant checked at every visited state.
    fn check(&self, _s: &Self::State) -> Result<(), String> {
        Ok(())
    }

    /// Checked at leaves: states without successors or at the depth bound.
    fn check_leaf(&self, _s: &Self::State, _terminal: bool) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExploreConfig {
    pub depth: usize,
    pub memo: bool,
    pub parallelism: Parallelism,
    /// Upper bound on expanded states; exceeding it truncates the search.
    pub max_states: u64,
}

impl ExploreConfig {
    pub fn new(depth: usize) -> Self {
        Self {
            depth,
            memo: true,
            parallelism: Parallelism::default(),
            max_states: 50_000_000,
        }
    }

    pub fn sequential(mut self) -> Self {
        self.parallelism = Parallelism::Sequential;
        self
    }

    pub fn without_memo(mut self) -> Self {
        self.memo = false;
        self
    }

    pub fn with_parallelism(mut self, p: Parallelism) -> Self {
        self.parallelism = p;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation<S> {
    /// Steps from the initial state to the offending state.
    pub path: Vec<S>,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExploreStats<S> {
    /// Distinct states visited (every tree node without the memo).
    pub visited: u64,
    pub memo_hits: u64,
    pub terminals: u64,
    /// Leaves cut off by the depth bound while steps remained.
    pub truncated: u64,
    pub pruned: u64,
    pub deepest: usize,
    /// The state budget ran out somewhere.
    pub budget_hit: bool,
    pub violation: Option<Violation<S>>,
}

impl<S> Default for ExploreStats<S> {
    fn default() -> Self {
        Self {
            visited: 0,
            memo_hits: 0,
            terminals: 0,
            truncated: 0,
            pruned: 0,
            deepest: 0,
            budget_hit: false,
            violation: None,
        }
    }
}

impl<S> ExploreStats<S> {
    pub fn ok(&self) -> bool {
        self.violation.is_none()
    }

    /// Complete: no leaf cut by the depth bound and no budget overflow.
    pub fn exhaustive(&self) -> bool {
        self.truncated == 0 && !self.budget_hit
    }
}

/// What expanding one state produced.
enum Expanded<S> {
    Fail(u128, String),
    Leaf { terminal: bool },
    Inner { successors: Vec<S>, pruned: u64 },
}

fn expand<M: Model>(model: &M, s: &M::State, last: bool) -> Expanded<M::State> {
    if let Err(message) = model.check(s) {
        return Expanded::Fail(fingerprint(s), message);
    }
    let mut pruned = 0;
    let mut successors = Vec::new();
    for step in model.steps(s) {
        match model.next(s, &step) {
            Some(n) => successors.push(n),
            None => pruned += 1,
        }
    }
    if successors.is_empty() || last {
        let terminal = successors.is_empty();
        if let Err(message) = model.check_leaf(s, terminal) {
            return Expanded::Fail(fingerprint(s), message);
        }
        return Expanded::Leaf { terminal };
    }
    Expanded::Inner { successors, pruned }
}

const CHUNK: usize = 256;

/// Explores every schedule of `model` up to `cfg.depth` steps.
pub fn explore<M: Model>(model: &M, cfg: &ExploreConfig) -> ExploreStats<M::Step> {
    let mut stats = ExploreStats::default();
    let mut seen = HashSet::new();
    let init = model.initial();
    if cfg.memo {
        seen.insert(fingerprint(&init));
    }
    let mut layer = vec![init];
    let mut level = 0;
    while !layer.is_empty() {
        let room = cfg.max_states.saturating_sub(stats.visited);
        if layer.len() as u64 > room {
            stats.budget_hit = true;
            layer.truncate(room as usize);
            if layer.is_empty() {
                break;
            }
        }
        stats.visited += layer.len() as u64;
        stats.deepest = level;
        let last = level >= cfg.depth;
        let mut chunks = Vec::with_capacity(layer.len() / CHUNK + 1);
        let mut it = std::mem::take(&mut layer).into_iter().peekable();
        while it.peek().is_some() {
            chunks.push(it.by_ref().take(CHUNK).collect::<Vec<_>>());
        }
        let expanded = cfg.parallelism.map(chunks, |chunk| {
            chunk.iter().map(|s| expand(model, s, last)).collect::<Vec<_>>()
        });
        let mut next_layer = Vec::new();
        for e in expanded.into_iter().flatten() {
            match e {
                Expanded::Fail(target, message) => {
                    stats.violation = Some(Violation {
                        path: path_to(model, target, level).unwrap_or_default(),
                        message,
                    });
                    return stats;
                }
                Expanded::Leaf { terminal: true } => stats.terminals += 1,
                Expanded::Leaf { terminal: false } => stats.truncated += 1,
                Expanded::Inner { successors, pruned } => {
                    stats.pruned += pruned;
                    for n in successors {
                        if !cfg.memo || seen.insert(fingerprint(&n)) {
                            next_layer.push(n);
                        } else {
                            stats.memo_hits += 1;
                        }
                    }
                }
            }
        }
        layer = next_layer;
        level += 1;
    }
    stats
}

/// A schedule of exactly `depth` steps reaching the state with fingerprint
/// `target`.
fn path_to<M: Model>(model: &M, target: u128, depth: usize) -> Option<Vec<M::Step>> {
    fn go<M: Model>(
        model: &M,
        s: &M::State,
        target: u128,
        remaining: usize,
        memo: &mut HashMap<u128, usize>,
        path: &mut Vec<M::Step>,
    ) -> bool {
        let fp = fingerprint(s);
        if remaining == 0 {
            return fp == target;
        }
        if memo.get(&fp).is_some_and(|&r| r >= remaining) {
            return false;
        }
        memo.insert(fp, remaining);
        for step in model.steps(s) {
            if let Some(n) = model.next(s, &step) {
                path.push(step);
                if go(model, &n, target, remaining - 1, memo, path) {
                    return true;
                }
                path.pop();
            }
        }
        false
    }
    let mut path = Vec::new();
    go(model, &model.initial(), target, depth, &mut HashMap::new(), &mut path).then_some(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two counters, each bumped up to `limit` times.
    struct Grid {
        limit: u8,
    }

    impl Model for Grid {
        type State = (u8, u8);
        type Step = usize;

        fn initial(&self) -> (u8, u8) {
            (0, 0)
        }

        fn steps(&self, s: &(u8, u8)) -> Vec<usize> {
            let mut v = Vec::new();
            if s.0 < self.limit {
                v.push(0);
            }
            if s.1 < self.limit {
                v.push(1);
            }
            v
        }

        fn next(&self, s: &(u8, u8), step: &usize) -> Option<(u8, u8)> {
            Some(if *step == 0 { (s.0 + 1, s.1) } else { (s.0, s.1 + 1) })
        }

        fn check(&self, s: &(u8, u8)) -> Result<(), String> {
            if *s == (3, 1) {
                Err("reached (3,1)".into())
            } else {
                Ok(())
            }
        }
    }

    #[test]
    fn without_memo_every_path_is_a_leaf() {
        let stats = explore(&Grid { limit: 2 }, &ExploreConfig::new(10).without_memo());
        // C(4,2) interleavings of two 2-step programs
        assert_eq!(stats.terminals, 6);
        assert!(stats.ok() && stats.exhaustive());
    }

    #[test]
    fn memo_collapses_the_grid() {
        let stats = explore(&Grid { limit: 2 }, &ExploreConfig::new(10));
        assert_eq!(stats.visited, 9);
        assert_eq!(stats.terminals, 1);
    }

    #[test]
    fn violation_reports_a_path() {
        let stats = explore(&Grid { limit: 4 }, &ExploreConfig::new(10));
        let v = stats.violation.expect("violation");
        assert_eq!(v.path.iter().filter(|s| **s == 0).count(), 3);
        assert_eq!(v.path.len(), 4);
    }

    #[test]
    fn depth_bound_truncates() {
        let stats = explore(&Grid { limit: 2 }, &ExploreConfig::new(2));
        assert!(stats.truncated > 0);
        assert!(!stats.exhaustive());
        let zero = explore(&Grid { limit: 2 }, &ExploreConfig::new(0));
        assert_eq!(zero.visited, 1);
        assert!(zero.ok());
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let m = Grid { limit: 5 };
        for cfg in [ExploreConfig::new(12), ExploreConfig::new(7).without_memo()] {
            let a = explore(&m, &cfg.sequential());
            let b = explore(&m, &cfg.with_parallelism(Parallelism::Parallel));
            assert_eq!(a, b);
        }
    }
}
