//! Conversion of eligible inner loops into FP hardware loops.
//!
//! A loop qualifies when it runs from 0 by steps of 1, its induction
//! variable is unused, every iteration value is an FP register, and the body
//! contains only FP-register and stream operations. Non-candidates are
//! silently skipped; the pass is best-effort per loop.

use crate::ir::pass::{Pass, PassError};
use crate::ir::{Attribute, Block, IdGen, Module, Operation, Region, ValueId};
use crate::rv;

/// The FPU sequencer buffers at most this many instructions; larger loop
/// bodies stay as ordinary loops.
pub const FREP_MAX_BODY: usize = 16;

pub struct ConvertLoopsToFrep;

impl Pass for ConvertLoopsToFrep {
    fn name(&self) -> &str {
        "convert-loops-to-frep"
    }

    fn run(&self, module: &mut Module) -> Result<(), PassError> {
        let mut ids = std::mem::take(&mut module.ids);
        convert_in_op(&mut module.top, &mut ids);
        module.ids = ids;
        Ok(())
    }
}

fn convert_in_op(op: &mut Operation, ids: &mut IdGen) {
    for region in &mut op.regions {
        for block in &mut region.blocks {
            convert_in_block(block, ids);
        }
    }
}

fn convert_in_block(block: &mut Block, ids: &mut IdGen) {
    // Innermost first.
    for op in &mut block.ops {
        convert_in_op(op, ids);
    }
    let mut i = 0;
    while i < block.ops.len() {
        if block.ops[i].name == rv::FOR {
            if let Some(prefix) = try_convert(&block.ops[i], block, ids) {
                let n = prefix.len();
                block.ops.splice(i..=i, prefix);
                i += n;
                continue;
            }
        }
        i += 1;
    }
}

/// Returns the replacement sequence (trip-count computation + frep) if the
/// loop at `block.ops[i]` qualifies.
fn try_convert(for_op: &Operation, block: &Block, ids: &mut IdGen) -> Option<Vec<Operation>> {
    let lower = for_op.operands[0];
    let upper = for_op.operands[1];
    let step = for_op.operands[2];
    if defining_li(block, lower)? != 0 || defining_li(block, step)? != 1 {
        return None;
    }
    let body = for_op.body();
    let induction = body.args.first()?.id;
    if body.args.iter().skip(1).any(|a| !a.ty.is_float_class()) {
        return None;
    }
    let mut uses_induction = false;
    let mut printed = 0usize;
    for inner in &body.ops {
        inner.walk(&mut |o| {
            if o.operands.contains(&induction)
                || o.successors.iter().any(|s| s.args.contains(&induction))
            {
                uses_induction = true;
            }
        });
        let name = inner.name.as_str();
        let allowed = rv::is_fpu_op(name)
            || name == rv::STREAM_READ
            || name == rv::STREAM_WRITE
            || name == rv::YIELD
            || (name == rv::GET_REGISTER && inner.results[0].ty.is_float_class());
        if !allowed {
            return None;
        }
        if rv::is_fpu_op(name) || name == rv::STREAM_WRITE {
            printed += 1;
        }
    }
    if uses_induction || printed == 0 || printed > FREP_MAX_BODY {
        return None;
    }

    // Trip count minus one: fold into a fresh li when the bound is a
    // constant, otherwise decrement at runtime.
    let mut out = Vec::new();
    let trips = match defining_li(block, upper) {
        Some(k) => {
            let (op, v) = rv::li(ids, k - 1);
            out.push(op);
            v
        }
        None => {
            let (op, v) = rv::addi(ids, upper, -1);
            out.push(op);
            v
        }
    };

    let mut frep = Operation::new(rv::FREP);
    frep.operands.push(trips);
    frep.operands.extend(for_op.operands.iter().skip(3));
    frep.results = for_op.results.clone();
    let mut new_body = Block {
        args: body.args[1..].to_vec(),
        ops: body.ops.clone(),
    };
    if let Some(term) = new_body.ops.last_mut() {
        if term.name == rv::YIELD {
            term.name = rv::FREP_YIELD.to_string();
        }
    }
    frep.regions.push(Region {
        blocks: vec![new_body],
    });
    out.push(frep);
    Some(out)
}

/// The constant behind a value when it is defined by `rv.li` in this block.
fn defining_li(block: &Block, value: ValueId) -> Option<i64> {
    for op in &block.ops {
        if op.name == rv::LI && op.results.first().map(|r| r.id) == Some(value) {
            return match op.attr("imm") {
                Some(Attribute::Int(v)) => Some(*v),
                _ => None,
            };
        }
    }
    None
}
