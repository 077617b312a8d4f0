//! Deterministic textual form of the IR. Values are renumbered in definition
//! order, so two structurally identical modules print identically.

use std::collections::HashMap;
use std::fmt::Write;

use super::{Operation, Type, ValueId};

struct Printer {
    out: String,
    names: HashMap<ValueId, usize>,
    next_name: usize,
    def_types: HashMap<ValueId, Type>,
}

impl Printer {
    fn name(&mut self, id: ValueId) -> usize {
        if let Some(n) = self.names.get(&id) {
            return *n;
        }
        let n = self.next_name;
        self.next_name += 1;
        self.names.insert(id, n);
        n
    }

    fn indent(&mut self, depth: usize) {
        for _ in 0..depth {
            self.out.push_str("  ");
        }
    }

    fn print_op(&mut self, op: &Operation, depth: usize) {
        self.indent(depth);
        if !op.results.is_empty() {
            for (i, r) in op.results.iter().enumerate() {
                if i > 0 {
                    self.out.push_str(", ");
                }
                let n = self.name(r.id);
                write!(self.out, "%{n}").unwrap();
            }
            self.out.push_str(" = ");
        }
        self.out.push_str(&op.name);
        if !op.operands.is_empty() {
            self.out.push_str(" (");
            for (i, v) in op.operands.iter().enumerate() {
                if i > 0 {
                    self.out.push_str(", ");
                }
                let n = self.name(*v);
                write!(self.out, "%{n}").unwrap();
            }
            self.out.push(')');
        }
        if !op.successors.is_empty() {
            self.out.push_str(" [");
            for (i, s) in op.successors.iter().enumerate() {
                if i > 0 {
                    self.out.push_str(", ");
                }
                write!(self.out, "^bb{}", s.block).unwrap();
                if !s.args.is_empty() {
                    self.out.push('(');
                    for (j, a) in s.args.iter().enumerate() {
                        if j > 0 {
                            self.out.push_str(", ");
                        }
                        let n = self.name(*a);
                        write!(self.out, "%{n}").unwrap();
                    }
                    self.out.push(')');
                }
            }
            self.out.push(']');
        }
        if !op.attrs.is_empty() {
            self.out.push_str(" {");
            for (i, (k, v)) in op.attrs.iter().enumerate() {
                if i > 0 {
                    self.out.push_str(", ");
                }
                write!(self.out, "{k} = {v}").unwrap();
            }
            self.out.push('}');
        }
        if !op.operands.is_empty() {
            self.out.push_str(" : (");
            for (i, v) in op.operands.iter().enumerate() {
                if i > 0 {
                    self.out.push_str(", ");
                }
                match self.def_types.get(v) {
                    Some(ty) => write!(self.out, "{ty}").unwrap(),
                    None => self.out.push('?'),
                }
            }
            self.out.push_str(") -> ");
            if op.results.len() == 1 {
                write!(self.out, "{}", op.results[0].ty).unwrap();
            } else {
                self.out.push('(');
                for (i, r) in op.results.iter().enumerate() {
                    if i > 0 {
                        self.out.push_str(", ");
                    }
                    write!(self.out, "{}", r.ty).unwrap();
                }
                self.out.push(')');
            }
        } else if !op.results.is_empty() {
            self.out.push_str(" : ");
            if op.results.len() == 1 {
                write!(self.out, "{}", op.results[0].ty).unwrap();
            } else {
                self.out.push('(');
                for (i, r) in op.results.iter().enumerate() {
                    if i > 0 {
                        self.out.push_str(", ");
                    }
                    write!(self.out, "{}", r.ty).unwrap();
                }
                self.out.push(')');
            }
        }
        for region in &op.regions {
            self.out.push_str(" {\n");
            for (bi, block) in region.blocks.iter().enumerate() {
                if region.blocks.len() > 1 || !block.args.is_empty() {
                    self.indent(depth);
                    write!(self.out, "^bb{bi}").unwrap();
                    if !block.args.is_empty() {
                        self.out.push('(');
                        for (i, a) in block.args.iter().enumerate() {
                            if i > 0 {
                                self.out.push_str(", ");
                            }
                            let n = self.name(a.id);
                            write!(self.out, "%{n} : {}", a.ty).unwrap();
                        }
                        self.out.push(')');
                    }
                    self.out.push_str(":\n");
                }
                for inner in &block.ops {
                    self.print_op(inner, depth + 1);
                }
            }
            self.indent(depth);
            self.out.push('}');
        }
        self.out.push('\n');
    }
}

pub fn print_operation(op: &Operation) -> String {
    let mut p = Printer {
        out: String::new(),
        names: HashMap::new(),
        next_name: 0,
        def_types: op.def_types(),
    };
    p.print_op(op, 0);
    p.out
}
