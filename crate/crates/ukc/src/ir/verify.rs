//! Structural and SSA verification. Violations are collected, not thrown;
//! dialect modules contribute their own constraints through
//! [`DialectVerifier`].

use std::collections::{HashMap, HashSet};

use super::{cfg, Module, Operation, Region, ValueId};

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Name of the offending operation.
    pub op: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.op, self.message)
    }
}

/// Dialect-specific constraints, keyed on the dialect prefix.
pub trait DialectVerifier {
    fn dialect(&self) -> &str;
    /// `ancestors` holds the names of enclosing operations, outermost first.
    fn check(&self, op: &Operation, ancestors: &[String]) -> Vec<String>;
}

/// Operations that transfer control between blocks of their region.
pub fn is_branch(name: &str) -> bool {
    name.starts_with("rv_cf.")
}

/// Region-terminating operations (single-block structured regions).
pub fn is_terminator(name: &str) -> bool {
    matches!(
        name,
        "func.return"
            | "rv_func.ret"
            | "rv_scf.yield"
            | "rv_snitch.frep_yield"
            | "linalg.yield"
            | "memref_stream.yield"
    ) || is_branch(name)
}

struct Checker<'a> {
    verifiers: &'a [&'a dyn DialectVerifier],
    violations: Vec<Violation>,
}

impl<'a> Checker<'a> {
    fn violation(&mut self, op: &Operation, message: impl Into<String>) {
        self.violations.push(Violation {
            op: op.name.clone(),
            message: message.into(),
        });
    }

    fn check_op(
        &mut self,
        op: &Operation,
        visible: &mut HashSet<ValueId>,
        ancestors: &mut Vec<String>,
    ) {
        for v in &op.operands {
            if !visible.contains(v) {
                self.violation(
                    op,
                    format!("operand %{} does not dominate its use", v.0),
                );
            }
        }
        for s in &op.successors {
            for v in &s.args {
                if !visible.contains(v) {
                    self.violation(
                        op,
                        format!("successor argument %{} does not dominate its use", v.0),
                    );
                }
            }
        }
        let mut keys = HashSet::new();
        for (k, _) in &op.attrs {
            if !keys.insert(k) {
                self.violation(op, format!("duplicate attribute key {k:?}"));
            }
        }
        for v in self.verifiers {
            if v.dialect() == op.dialect() {
                for message in v.check(op, ancestors) {
                    self.violation(op, message);
                }
            }
        }
        ancestors.push(op.name.clone());
        for region in &op.regions {
            self.check_region(region, visible, ancestors, op);
        }
        ancestors.pop();
    }

    fn check_region(
        &mut self,
        region: &Region,
        visible: &mut HashSet<ValueId>,
        ancestors: &mut Vec<String>,
        parent: &Operation,
    ) {
        if region.blocks.len() == 1 {
            let block = &region.blocks[0];
            let mut added = Vec::new();
            for a in &block.args {
                visible.insert(a.id);
                added.push(a.id);
            }
            for (i, op) in block.ops.iter().enumerate() {
                if !op.successors.is_empty() {
                    self.violation(op, "branch in a single-block region");
                }
                if is_branch(&op.name) && i + 1 != block.ops.len() {
                    self.violation(op, "terminator is not the last operation in its block");
                }
                self.check_op(op, visible, ancestors);
                for r in &op.results {
                    visible.insert(r.id);
                    added.push(r.id);
                }
            }
            for id in added {
                visible.remove(&id);
            }
            return;
        }

        // Multi-block: structured dominance over the CFG.
        let idom = cfg::immediate_dominators(region);
        for (bi, _) in region.blocks.iter().enumerate() {
            if bi != 0 && idom[bi] == usize::MAX {
                self.violation(parent, format!("block ^bb{bi} is unreachable"));
            }
        }
        // Visit blocks in dominator-tree preorder, scoping definitions.
        let mut children: HashMap<usize, Vec<usize>> = HashMap::new();
        for (b, d) in idom.iter().enumerate() {
            if b != 0 && *d != usize::MAX {
                children.entry(*d).or_default().push(b);
            }
        }
        self.check_dom_subtree(region, 0, &children, visible, ancestors);
    }

    fn check_dom_subtree(
        &mut self,
        region: &Region,
        b: usize,
        children: &HashMap<usize, Vec<usize>>,
        visible: &mut HashSet<ValueId>,
        ancestors: &mut Vec<String>,
    ) {
        let block = &region.blocks[b];
        let mut added = Vec::new();
        for a in &block.args {
            visible.insert(a.id);
            added.push(a.id);
        }
        for (i, op) in block.ops.iter().enumerate() {
            let last = i + 1 == block.ops.len();
            if last {
                if !is_terminator(&op.name) {
                    self.violation(op, "block does not end with a terminator");
                }
            } else if is_branch(&op.name) || !op.successors.is_empty() {
                self.violation(op, "terminator is not the last operation in its block");
            }
            for s in &op.successors {
                if s.block >= region.blocks.len() {
                    self.violation(op, format!("successor ^bb{} out of range", s.block));
                } else if s.args.len() != region.blocks[s.block].args.len() {
                    self.violation(
                        op,
                        format!(
                            "successor ^bb{} expects {} arguments, got {}",
                            s.block,
                            region.blocks[s.block].args.len(),
                            s.args.len()
                        ),
                    );
                }
            }
            self.check_op(op, visible, ancestors);
            for r in &op.results {
                visible.insert(r.id);
                added.push(r.id);
            }
        }
        if let Some(kids) = children.get(&b) {
            for k in kids {
                self.check_dom_subtree(region, *k, children, visible, ancestors);
            }
        }
        for id in added {
            visible.remove(&id);
        }
    }
}

fn check_unique_defs(module: &Module, violations: &mut Vec<Violation>) {
    let mut seen: HashSet<ValueId> = HashSet::new();
    module.top.walk(&mut |op| {
        for r in &op.results {
            if !seen.insert(r.id) {
                violations.push(Violation {
                    op: op.name.clone(),
                    message: format!("value %{} has multiple definitions", r.id.0),
                });
            }
        }
        for region in &op.regions {
            for block in &region.blocks {
                for a in &block.args {
                    if !seen.insert(a.id) {
                        violations.push(Violation {
                            op: op.name.clone(),
                            message: format!("value %{} has multiple definitions", a.id.0),
                        });
                    }
                }
            }
        }
    });
}

/// Verifies SSA structure plus any dialect constraints. Returns all
/// violations found rather than stopping at the first.
pub fn verify_with(
    module: &Module,
    verifiers: &[&dyn DialectVerifier],
) -> Result<(), Vec<Violation>> {
    let mut checker = Checker {
        verifiers,
        violations: Vec::new(),
    };
    check_unique_defs(module, &mut checker.violations);
    let mut visible = HashSet::new();
    let mut ancestors = Vec::new();
    checker.check_op(&module.top, &mut visible, &mut ancestors);
    if checker.violations.is_empty() {
        Ok(())
    } else {
        Err(checker.violations)
    }
}
