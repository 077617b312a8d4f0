//! Lowers structured loops to unstructured control flow: each `rv_scf.for`
//! becomes a guard branch, a body block with an explicit induction increment
//! and a `blt` back-edge, and an exit block carrying the loop results.
//! Hardware loops stay structured; they print directly.

use std::collections::HashMap;

use crate::ir::pass::{Pass, PassError};
use crate::ir::{Attribute, Block, IdGen, Module, Operation, Successor, ValueId};
use crate::rv;

pub struct LowerScfToCf;

impl Pass for LowerScfToCf {
    fn name(&self) -> &str {
        "lower-scf-to-cf"
    }

    fn run(&self, module: &mut Module) -> Result<(), PassError> {
        const PASS: &str = "lower-scf-to-cf";
        // Allocation must be complete.
        let mut unallocated = None;
        module.top.walk(&mut |op| {
            for r in &op.results {
                if r.ty.is_unallocated_register() {
                    unallocated = Some(op.name.clone());
                }
            }
        });
        if let Some(op) = unallocated {
            return Err(PassError::failed(
                PASS,
                format!("{op} has an unallocated register; allocation must precede lowering"),
            ));
        }
        let mut li_imms = HashMap::new();
        module.top.walk(&mut |op| {
            if op.name == rv::LI {
                if let Some(Attribute::Int(v)) = op.attr("imm") {
                    li_imms.insert(op.results[0].id, *v);
                }
            }
        });
        let mut ids = std::mem::take(&mut module.ids);
        let mut result = Ok(());
        for op in &mut module.top.regions[0].blocks[0].ops {
            if op.name == rv::FUNC && result.is_ok() {
                result = flatten_func(op, &mut ids, &li_imms);
            }
        }
        module.ids = ids;
        result
    }
}

fn flatten_func(
    func: &mut Operation,
    ids: &mut IdGen,
    li_imms: &HashMap<ValueId, i64>,
) -> Result<(), PassError> {
    let entry = func.regions[0].blocks.remove(0);
    let mut blocks = vec![Block {
        args: entry.args,
        ops: Vec::new(),
    }];
    flatten_ops(entry.ops, &mut blocks, ids, li_imms)?;
    func.regions[0].blocks = blocks;
    Ok(())
}

fn flatten_ops(
    ops: Vec<Operation>,
    blocks: &mut Vec<Block>,
    ids: &mut IdGen,
    li_imms: &HashMap<ValueId, i64>,
) -> Result<(), PassError> {
    const PASS: &str = "lower-scf-to-cf";
    for op in ops {
        if op.name != rv::FOR {
            blocks
                .last_mut()
                .unwrap()
                .ops
                .push(op);
            continue;
        }
        let mut op = op;
        let lower = op.operands[0];
        let upper = op.operands[1];
        let step = op.operands[2];
        let inits: Vec<ValueId> = op.operands[3..].to_vec();
        let step_imm = *li_imms
            .get(&step)
            .ok_or_else(|| PassError::failed(PASS, "loop step must be a known constant"))?;
        let body = op.regions.remove(0).blocks.remove(0);
        let ind_ty = body.args[0].ty.clone();

        // Initialize the induction variable in its own register.
        let (mv, ind0) = rv::unary(ids, rv::MV, lower, ind_ty.clone());
        blocks.last_mut().unwrap().ops.push(mv);

        // Guard: skip the body entirely when the trip count is zero.
        let guard_block = blocks.len() - 1;
        let mut guard = Operation::new(rv::BGE).with_operands([ind0, upper]);
        let mut guard_taken_args = inits.clone();
        let mut body_entry_args = vec![ind0];
        body_entry_args.extend(inits.iter().copied());
        guard.successors = vec![
            Successor {
                block: usize::MAX, // exit, patched below
                args: std::mem::take(&mut guard_taken_args),
            },
            Successor {
                block: blocks.len(),
                args: body_entry_args,
            },
        ];
        blocks.last_mut().unwrap().ops.push(guard);

        // Body blocks.
        let body_start = blocks.len();
        blocks.push(Block {
            args: body.args.clone(),
            ops: Vec::new(),
        });
        let mut body_ops = body.ops;
        let terminator = body_ops.pop().ok_or_else(|| {
            PassError::failed(PASS, "loop body must end with a terminator")
        })?;
        if terminator.name != rv::YIELD {
            return Err(PassError::failed(PASS, "loop body must end with yield"));
        }
        flatten_ops(body_ops, blocks, ids, li_imms)?;

        // Induction increment and back-edge; the exit block comes next.
        let mut inc = Operation::new(rv::ADDI)
            .with_operands([body.args[0].id])
            .with_attr("imm", Attribute::Int(step_imm));
        let ind_next = inc.add_result(ids, ind_ty);
        blocks.last_mut().unwrap().ops.push(inc);
        let mut back_args = vec![ind_next];
        back_args.extend(terminator.operands.iter().copied());
        let exit_index = blocks.len();
        let mut back = Operation::new(rv::BLT).with_operands([ind_next, upper]);
        back.successors = vec![
            Successor {
                block: body_start,
                args: back_args,
            },
            Successor {
                block: exit_index,
                args: terminator.operands.clone(),
            },
        ];
        blocks.last_mut().unwrap().ops.push(back);

        blocks.push(Block {
            args: op.results.clone(),
            ops: Vec::new(),
        });
        blocks[guard_block]
            .ops
            .last_mut()
            .unwrap()
            .successors[0]
            .block = exit_index;
    }
    Ok(())
}
