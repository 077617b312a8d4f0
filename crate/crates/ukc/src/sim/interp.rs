//! Direct execution of allocated structured modules: loops are interpreted
//! from their `rv_scf.for` form instead of branch instructions. Shares the
//! instruction semantics with the flat simulator, so comparing the two
//! checks the control-flow lowering.

use std::collections::HashMap;

use crate::ir::{Module, Operation, Type, ValueId};
use crate::rv;
use crate::rv::emit::instr_of;
use crate::sim::{Machine, SimError};

/// Executes the named function of a structured (not yet flattened) module on
/// the machine. Arguments are taken from the machine's register state.
pub fn run_structured(module: &Module, sym: &str, machine: &mut Machine) -> Result<(), SimError> {
    let regs = named_registers(module);
    let func = module.top.regions[0].blocks[0]
        .ops
        .iter()
        .find(|op| op.name == rv::FUNC && op.str_attr("sym") == Some(sym))
        .ok_or_else(|| SimError::UnknownEntry(sym.to_string()))?;
    exec_ops(&func.regions[0].blocks[0].ops, &regs, machine)
}

fn named_registers(module: &Module) -> HashMap<ValueId, Type> {
    module
        .top
        .def_types()
        .into_iter()
        .filter(|(_, t)| t.is_register())
        .collect()
}

fn int_reg_of(
    regs: &HashMap<ValueId, Type>,
    v: ValueId,
) -> Result<crate::ir::types::IntReg, SimError> {
    match regs.get(&v) {
        Some(Type::IntReg(Some(r))) => Ok(*r),
        _ => Err(SimError::Parse {
            line: 0,
            message: format!("value %{} has no integer register", v.0),
        }),
    }
}

fn exec_ops(
    ops: &[Operation],
    regs: &HashMap<ValueId, Type>,
    machine: &mut Machine,
) -> Result<(), SimError> {
    for op in ops {
        match op.name.as_str() {
            rv::FOR => {
                let lower = int_reg_of(regs, op.operands[0])?;
                let upper = int_reg_of(regs, op.operands[1])?;
                let step = int_reg_of(regs, op.operands[2])?;
                let body = op.body();
                let ind = match &body.args[0].ty {
                    Type::IntReg(Some(r)) => *r,
                    _ => {
                        return Err(SimError::Parse {
                            line: 0,
                            message: "loop induction variable is unallocated".into(),
                        })
                    }
                };
                // Loop values live in registers shared between operands,
                // block arguments and results; nothing to move.
                let mut i = machine.x[lower.0 as usize] as i64;
                let bound = machine.x[upper.0 as usize] as i64;
                let stride = machine.x[step.0 as usize] as i64;
                // Entry guard plus induction-variable initialization.
                machine.cycle += 2;
                while i < bound {
                    machine.x[ind.0 as usize] = i as u64;
                    exec_ops(&body.ops[..body.ops.len() - 1], regs, machine)?;
                    i += stride;
                    // Increment and back-edge.
                    machine.cycle += 1 + machine.config.branch_taken_cycles;
                }
            }
            rv::FREP => {
                let trips = int_reg_of(regs, op.operands[0])?;
                let reps = machine.x[trips.0 as usize].wrapping_add(1);
                let mut body = Vec::new();
                for inner in &op.body().ops {
                    if let Some(instr) = instr_of(inner, regs).map_err(|e| SimError::Parse {
                        line: 0,
                        message: e.to_string(),
                    })? {
                        body.push(instr);
                    }
                }
                machine.run_frep(reps, &body)?;
            }
            rv::STREAMING_REGION => {
                return Err(SimError::Parse {
                    line: 0,
                    message: "streaming regions must be lowered before interpretation".into(),
                })
            }
            rv::RET => {
                machine.cycle += machine.config.branch_taken_cycles;
            }
            _ => {
                if let Some(instr) = instr_of(op, regs).map_err(|e| SimError::Parse {
                    line: 0,
                    message: e.to_string(),
                })? {
                    machine.exec_straightline(&instr)?;
                }
            }
        }
    }
    Ok(())
}

/// Convenience: true when the module still contains structured loops.
pub fn has_structured_loops(module: &Module) -> bool {
    let mut found = false;
    module.top.walk(&mut |op| {
        if op.name == rv::FOR {
            found = true;
        }
    });
    found
}

/// Static count of hardware-loop instructions in a module.
pub fn static_frep_count(module: &Module) -> usize {
    let mut n = 0;
    module.top.walk(&mut |op| {
        if op.name == rv::FREP {
            n += 1;
        }
    });
    n
}

/// Distinct named registers appearing anywhere in a function, split by
/// class. The hardwired zero register is not counted.
pub fn register_usage(func: &Operation) -> (usize, usize) {
    let mut ints = std::collections::HashSet::new();
    let mut fps = std::collections::HashSet::new();
    func.walk(&mut |op| {
        for r in &op.results {
            match &r.ty {
                Type::IntReg(Some(reg)) if reg.0 != 0 => {
                    ints.insert(reg.0);
                }
                Type::FpReg(Some(reg)) => {
                    fps.insert(reg.0);
                }
                _ => {}
            }
        }
        for region in &op.regions {
            for block in &region.blocks {
                for a in &block.args {
                    match &a.ty {
                        Type::IntReg(Some(reg)) if reg.0 != 0 => {
                            ints.insert(reg.0);
                        }
                        Type::FpReg(Some(reg)) => {
                            fps.insert(reg.0);
                        }
                        _ => {}
                    }
                }
            }
        }
    });
    (fps.len(), ints.len())
}
