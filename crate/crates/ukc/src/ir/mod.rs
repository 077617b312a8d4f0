//! Generic SSA-with-regions IR: the substrate every dialect builds on.
//!
//! Operations own their regions (a strict tree); values are referenced by id
//! and defined exactly once, either as an operation result or a block
//! argument. Values defined in an outer scope may be used in nested regions,
//! never the other way around.

pub mod affine;
pub mod attr;
pub mod cfg;
pub mod parse;
pub mod pass;
pub mod print;
pub mod types;
pub mod verify;

use std::collections::HashMap;

pub use attr::Attribute;
pub use types::Type;

/// Identity of an SSA value. Unique within one module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ValueId(pub u32);

/// A value definition site: id plus type.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueDef {
    pub id: ValueId,
    pub ty: Type,
}

/// Reference to a successor block of a terminator, with branch arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct Successor {
    pub block: usize,
    pub args: Vec<ValueId>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Region {
    pub blocks: Vec<Block>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Block {
    pub args: Vec<ValueDef>,
    pub ops: Vec<Operation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Operation {
    /// Fully qualified name, `dialect.op`.
    pub name: String,
    pub operands: Vec<ValueId>,
    pub results: Vec<ValueDef>,
    pub attrs: Vec<(String, Attribute)>,
    pub successors: Vec<Successor>,
    pub regions: Vec<Region>,
}

impl Operation {
    pub fn new(name: &str) -> Operation {
        Operation {
            name: name.to_string(),
            operands: Vec::new(),
            results: Vec::new(),
            attrs: Vec::new(),
            successors: Vec::new(),
            regions: Vec::new(),
        }
    }

    pub fn dialect(&self) -> &str {
        self.name.split('.').next().unwrap_or(&self.name)
    }

    pub fn attr(&self, key: &str) -> Option<&Attribute> {
        self.attrs.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn set_attr(&mut self, key: &str, value: Attribute) {
        if let Some(slot) = self.attrs.iter_mut().find(|(k, _)| k == key) {
            slot.1 = value;
        } else {
            self.attrs.push((key.to_string(), value));
        }
    }

    pub fn remove_attr(&mut self, key: &str) {
        self.attrs.retain(|(k, _)| k != key);
    }

    pub fn int_attr(&self, key: &str) -> Option<i64> {
        self.attr(key).and_then(|a| a.as_int())
    }

    pub fn str_attr(&self, key: &str) -> Option<&str> {
        self.attr(key).and_then(|a| a.as_str())
    }

    /// Single-block region helper.
    pub fn body(&self) -> &Block {
        &self.regions[0].blocks[0]
    }

    pub fn body_mut(&mut self) -> &mut Block {
        &mut self.regions[0].blocks[0]
    }

    pub fn with_operands(mut self, operands: impl IntoIterator<Item = ValueId>) -> Operation {
        self.operands.extend(operands);
        self
    }

    pub fn with_attr(mut self, key: &str, value: Attribute) -> Operation {
        self.set_attr(key, value);
        self
    }

    /// Appends a fresh result of the given type, returning its id.
    pub fn add_result(&mut self, ids: &mut IdGen, ty: Type) -> ValueId {
        let def = ids.value(ty);
        let id = def.id;
        self.results.push(def);
        id
    }

    /// Pre-order walk over this operation and everything nested in it.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Operation)) {
        f(self);
        for region in &self.regions {
            for block in &region.blocks {
                for op in &block.ops {
                    op.walk(f);
                }
            }
        }
    }

    pub fn walk_mut(&mut self, f: &mut impl FnMut(&mut Operation)) {
        f(self);
        for region in &mut self.regions {
            for block in &mut region.blocks {
                for op in &mut block.ops {
                    op.walk_mut(f);
                }
            }
        }
    }

    /// True if any operation in the subtree has the given dialect prefix.
    pub fn contains_dialect(&self, dialect: &str) -> bool {
        let mut found = false;
        self.walk(&mut |op| {
            if op.dialect() == dialect {
                found = true;
            }
        });
        found
    }

    /// Total operation count of the subtree, including this operation.
    pub fn op_count(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |_| n += 1);
        n
    }

    /// Map from value id to definition type for every value defined in the
    /// subtree (results and block arguments).
    pub fn def_types(&self) -> HashMap<ValueId, Type> {
        let mut map = HashMap::new();
        self.walk(&mut |op| {
            for r in &op.results {
                map.insert(r.id, r.ty.clone());
            }
            for region in &op.regions {
                for block in &region.blocks {
                    for a in &block.args {
                        map.insert(a.id, a.ty.clone());
                    }
                }
            }
        });
        map
    }
}

/// Mints fresh value ids.
#[derive(Debug, Clone, Default)]
pub struct IdGen {
    next: u32,
}

impl IdGen {
    pub fn fresh(&mut self) -> ValueId {
        let id = ValueId(self.next);
        self.next += 1;
        id
    }

    pub fn value(&mut self, ty: Type) -> ValueDef {
        ValueDef {
            id: self.fresh(),
            ty,
        }
    }

    /// Advances the counter past every id used in the given operation.
    pub fn adopt(&mut self, op: &Operation) {
        op.walk(&mut |op| {
            for r in &op.results {
                self.next = self.next.max(r.id.0 + 1);
            }
            for region in &op.regions {
                for block in &region.blocks {
                    for a in &block.args {
                        self.next = self.next.max(a.id.0 + 1);
                    }
                }
            }
        });
    }
}

/// A module: one top-level operation plus the id generator for new values.
#[derive(Debug, Clone)]
pub struct Module {
    pub top: Operation,
    pub ids: IdGen,
}

impl Module {
    pub fn new(top: Operation) -> Module {
        let mut ids = IdGen::default();
        ids.adopt(&top);
        Module { top, ids }
    }

    /// An empty `builtin.module`.
    pub fn empty() -> Module {
        let mut top = Operation::new("builtin.module");
        top.regions.push(Region {
            blocks: vec![Block::default()],
        });
        Module::new(top)
    }

    pub fn print(&self) -> String {
        print::print_operation(&self.top)
    }

    /// Structural equality: identical shape, names, attributes and types,
    /// ignoring value numbering.
    pub fn structurally_equal(&self, other: &Module) -> bool {
        self.print() == other.print()
    }
}

/// Rewrites every operand / successor-argument reference according to `map`.
pub fn remap_uses(op: &mut Operation, map: &HashMap<ValueId, ValueId>) {
    op.walk_mut(&mut |op| {
        for operand in &mut op.operands {
            if let Some(new) = map.get(operand) {
                *operand = *new;
            }
        }
        for succ in &mut op.successors {
            for arg in &mut succ.args {
                if let Some(new) = map.get(arg) {
                    *arg = *new;
                }
            }
        }
    });
}

/// Clones a block's operations, minting fresh result ids and remapping all
/// internal references; `map` seeds the substitution (e.g. block args) and is
/// extended with every cloned result.
pub fn clone_ops_with_map(
    ops: &[Operation],
    ids: &mut IdGen,
    map: &mut HashMap<ValueId, ValueId>,
) -> Vec<Operation> {
    let mut out = Vec::with_capacity(ops.len());
    for op in ops {
        let mut cloned = op.clone();
        // Fresh ids for results and nested block args.
        cloned.walk_mut(&mut |op| {
            for r in &mut op.results {
                let fresh = ids.fresh();
                map.insert(r.id, fresh);
                r.id = fresh;
            }
            for region in &mut op.regions {
                for block in &mut region.blocks {
                    for a in &mut block.args {
                        let fresh = ids.fresh();
                        map.insert(a.id, fresh);
                        a.id = fresh;
                    }
                }
            }
        });
        remap_uses(&mut cloned, map);
        out.push(cloned);
    }
    out
}
