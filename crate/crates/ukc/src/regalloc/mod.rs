//! Spill-free register allocation on structured IR, in three linear passes:
//!
//! 1. every register already named in the IR is excluded from the pools for
//!    the whole function (defensive, but handles partially-allocated code
//!    uniformly);
//! 2. for each region, the values used inside but defined outside are
//!    collected, so loop processing can extend their live ranges;
//! 3. a backward walk assigns registers at each value's last use and frees
//!    them at its definition. Loop results, iteration operands and body
//!    block arguments are unified to a single register before the body is
//!    walked, and the yielded values join the same register so iteration
//!    updates stay in place.
//!
//! There is no spilling: running out of registers is a hard error.

use std::collections::{BTreeSet, HashMap, HashSet};

use thiserror::Error;

use crate::ir::pass::{Pass, PassError};
use crate::ir::types::{FpReg, IntReg, CALLER_SAVED_FP, CALLER_SAVED_INT};
use crate::ir::{Block, Module, Operation, Type, ValueId};
use crate::rv;

#[derive(Debug, Error, PartialEq)]
pub enum RegallocError {
    #[error("out of {class} registers allocating %{value} at {op}")]
    OutOfRegisters {
        class: &'static str,
        value: u32,
        op: String,
    },
    #[error("iteration value %{value} is pinned to conflicting registers")]
    IterArgConflict { value: u32 },
    #[error("{0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Reg {
    Int(IntReg),
    Fp(FpReg),
}

/// Free registers of one class, ordered by allocation preference.
#[derive(Debug, Clone)]
pub struct RegisterPool {
    /// Allocation order; position is preference.
    order: Vec<Reg>,
    free: BTreeSet<usize>,
}

impl RegisterPool {
    fn new(order: Vec<Reg>, excluded: &HashSet<Reg>) -> RegisterPool {
        let free = order
            .iter()
            .enumerate()
            .filter(|(_, r)| !excluded.contains(r))
            .map(|(i, _)| i)
            .collect();
        RegisterPool { order, free }
    }

    fn take(&mut self) -> Option<Reg> {
        let i = *self.free.iter().next()?;
        self.free.remove(&i);
        Some(self.order[i])
    }

    fn put(&mut self, reg: Reg) {
        if let Some(i) = self.order.iter().position(|r| *r == reg) {
            self.free.insert(i);
        }
    }

    pub fn len(&self) -> usize {
        self.free.len()
    }

    pub fn is_empty(&self) -> bool {
        self.free.is_empty()
    }
}

/// Result of allocating one function.
#[derive(Debug, Clone)]
pub struct AllocationReport {
    pub fp_used: usize,
    pub int_used: usize,
    pub assignments: HashMap<ValueId, Reg>,
}

/// Pass 1: every named register anywhere in the function, excluded from the
/// pools for the whole function.
pub fn pass1_exclude_used(func: &Operation) -> HashSet<Reg> {
    let mut used = HashSet::new();
    let mut record = |ty: &Type| match ty {
        Type::IntReg(Some(r)) => {
            used.insert(Reg::Int(*r));
        }
        Type::FpReg(Some(r)) => {
            used.insert(Reg::Fp(*r));
        }
        _ => {}
    };
    func.walk(&mut |op| {
        for r in &op.results {
            record(&r.ty);
        }
        for region in &op.regions {
            for block in &region.blocks {
                for a in &block.args {
                    record(&a.ty);
                }
            }
        }
    });
    used
}

/// Pass 2: for every region-carrying operation, the set of values used
/// within its regions but defined outside them.
pub fn pass2_collect_outer_uses(func: &Operation) -> HashMap<Vec<usize>, BTreeSet<ValueId>> {
    let mut out = HashMap::new();
    fn visit(op: &Operation, path: &mut Vec<usize>, out: &mut HashMap<Vec<usize>, BTreeSet<ValueId>>) {
        if !op.regions.is_empty() {
            let mut defined = HashSet::new();
            let mut used = BTreeSet::new();
            for region in &op.regions {
                for block in &region.blocks {
                    for a in &block.args {
                        defined.insert(a.id);
                    }
                    for inner in &block.ops {
                        inner.walk(&mut |o| {
                            for r in &o.results {
                                defined.insert(r.id);
                            }
                            for region in &o.regions {
                                for b in &region.blocks {
                                    for a in &b.args {
                                        defined.insert(a.id);
                                    }
                                }
                            }
                            for v in &o.operands {
                                used.insert(*v);
                            }
                        });
                    }
                }
            }
            let outer: BTreeSet<ValueId> =
                used.difference(&defined.iter().copied().collect()).copied().collect();
            out.insert(path.clone(), outer);
        }
        for (ri, region) in op.regions.iter().enumerate() {
            for (bi, block) in region.blocks.iter().enumerate() {
                for (oi, inner) in block.ops.iter().enumerate() {
                    path.push(ri);
                    path.push(bi);
                    path.push(oi);
                    visit(inner, path, out);
                    path.pop();
                    path.pop();
                    path.pop();
                }
            }
        }
    }
    visit(func, &mut Vec::new(), &mut out);
    out
}

struct Allocator {
    int_pool: RegisterPool,
    fp_pool: RegisterPool,
    assignments: HashMap<ValueId, Reg>,
    refcount: HashMap<Reg, usize>,
    op_count_before: usize,
}

impl Allocator {
    fn class_of(ty: &Type) -> Option<&'static str> {
        match ty {
            Type::IntReg(_) => Some("integer"),
            Type::FpReg(_) => Some("FP"),
            _ => None,
        }
    }

    fn assign_fresh(&mut self, v: ValueId, ty: &Type, op: &Operation) -> Result<Reg, RegallocError> {
        let reg = match ty {
            Type::IntReg(None) => self.int_pool.take().map(|r| r),
            Type::FpReg(None) => self.fp_pool.take(),
            _ => return Err(RegallocError::Malformed(format!(
                "value %{} is not an unallocated register",
                v.0
            ))),
        };
        let Some(reg) = reg else {
            return Err(RegallocError::OutOfRegisters {
                class: Self::class_of(ty).unwrap_or("register"),
                value: v.0,
                op: op.name.clone(),
            });
        };
        self.bind(v, reg);
        Ok(reg)
    }

    fn bind(&mut self, v: ValueId, reg: Reg) {
        self.assignments.insert(v, reg);
        *self.refcount.entry(reg).or_default() += 1;
    }

    /// Frees the value's register at its definition point.
    fn release(&mut self, v: ValueId) {
        if let Some(reg) = self.assignments.get(&v).copied() {
            let n = self.refcount.entry(reg).or_default();
            *n = n.saturating_sub(1);
            if *n == 0 {
                match reg {
                    Reg::Int(_) => self.int_pool.put(reg),
                    Reg::Fp(_) => self.fp_pool.put(reg),
                }
            }
        }
    }

    /// Ensures an operand has a register (its backward first use).
    fn use_value(&mut self, v: ValueId, ty: &Type, op: &Operation) -> Result<(), RegallocError> {
        if self.assignments.contains_key(&v) || !ty.is_unallocated_register() {
            return Ok(());
        }
        self.assign_fresh(v, ty, op)?;
        Ok(())
    }
}

/// Allocates one function in place and reports distinct register usage.
pub fn allocate_function(func: &mut Operation) -> Result<AllocationReport, RegallocError> {
    let excluded = pass1_exclude_used(func);
    let int_order: Vec<Reg> = CALLER_SAVED_INT.iter().map(|r| Reg::Int(*r)).collect();
    let fp_order: Vec<Reg> = CALLER_SAVED_FP.iter().map(|r| Reg::Fp(*r)).collect();
    let mut alloc = Allocator {
        int_pool: RegisterPool::new(int_order, &excluded),
        fp_pool: RegisterPool::new(fp_order, &excluded),
        assignments: HashMap::new(),
        refcount: HashMap::new(),
        op_count_before: func.op_count(),
    };
    // Types of all definitions, for operand class lookup.
    let def_types: HashMap<ValueId, Type> = func.def_types();
    let body = &mut func.regions[0].blocks[0];
    alloc_block(body, &mut alloc, &def_types)?;

    // No spilling by construction: the walk never inserts operations.
    debug_assert_eq!(alloc.op_count_before, func.op_count());

    // Write assignments into every definition site.
    let assignments = alloc.assignments.clone();
    func.walk_mut(&mut |op| {
        for r in &mut op.results {
            apply(&assignments, &mut r.ty, r.id);
        }
        for region in &mut op.regions {
            for block in &mut region.blocks {
                for a in &mut block.args {
                    apply(&assignments, &mut a.ty, a.id);
                }
            }
        }
    });
    let (fp_used, int_used) = crate::sim::interp::register_usage(func);
    Ok(AllocationReport {
        fp_used,
        int_used,
        assignments,
    })
}

fn apply(assignments: &HashMap<ValueId, Reg>, ty: &mut Type, id: ValueId) {
    if let Some(reg) = assignments.get(&id) {
        match (reg, &ty) {
            (Reg::Int(r), Type::IntReg(None)) => *ty = Type::IntReg(Some(*r)),
            (Reg::Fp(r), Type::FpReg(None)) => *ty = Type::FpReg(Some(*r)),
            _ => {}
        }
    }
}

fn alloc_block(
    block: &Block,
    alloc: &mut Allocator,
    def_types: &HashMap<ValueId, Type>,
) -> Result<(), RegallocError> {
    for op in block.ops.iter().rev() {
        match op.name.as_str() {
            rv::FOR | rv::FREP => alloc_loop(op, alloc, def_types)?,
            rv::STREAMING_REGION => {
                // Reserved stream registers are already excluded by pass 1
                // (stream reads and writes name them); the region body is a
                // plain block.
                alloc_block(&op.regions[0].blocks[0], alloc, def_types)?;
                for v in &op.operands {
                    let ty = def_types.get(v).cloned().unwrap_or(Type::Index);
                    alloc.use_value(*v, &ty, op)?;
                }
            }
            _ => {
                // Read-modify-write instructions keep their accumulator in
                // the destination register.
                if let Some(tied) = tied_operand(&op.name) {
                    let v = op.operands[tied];
                    if let Some(result) = op.results.first() {
                        if result.ty.is_unallocated_register()
                            && !alloc.assignments.contains_key(&result.id)
                        {
                            alloc.assign_fresh(result.id, &result.ty, op)?;
                        }
                        if let Some(reg) = alloc.assignments.get(&result.id).copied() {
                            if !alloc.assignments.contains_key(&v)
                                && def_types
                                    .get(&v)
                                    .is_some_and(|t| t.is_unallocated_register())
                            {
                                alloc.bind(v, reg);
                            }
                        }
                    }
                }
                // Results die here: free them (dead results take and release
                // a transient register so the definition stays encodable).
                for r in &op.results {
                    if r.ty.is_unallocated_register() {
                        if alloc.assignments.contains_key(&r.id) {
                            alloc.release(r.id);
                        } else {
                            alloc.assign_fresh(r.id, &r.ty, op)?;
                            alloc.release(r.id);
                        }
                    }
                }
                for v in &op.operands {
                    let ty = def_types.get(v).cloned().unwrap_or(Type::Index);
                    alloc.use_value(*v, &ty, op)?;
                }
                for s in &op.successors {
                    for v in &s.args {
                        let ty = def_types.get(v).cloned().unwrap_or(Type::Index);
                        alloc.use_value(*v, &ty, op)?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Loops: unify results, iteration operands, body block arguments and the
/// yielded values onto shared registers, extend outer-defined values across
/// the body, then walk the body backwards.
fn alloc_loop(
    op: &Operation,
    alloc: &mut Allocator,
    def_types: &HashMap<ValueId, Type>,
) -> Result<(), RegallocError> {
    let is_for = op.name == rv::FOR;
    let ctrl = if is_for { 3 } else { 1 };
    let iters = op.operands.len() - ctrl;
    let body = op.body();
    let arg_offset = if is_for { 1 } else { 0 };
    let terminator = body
        .ops
        .last()
        .filter(|t| t.name == rv::YIELD || t.name == rv::FREP_YIELD);

    let mut loop_defined: Vec<ValueId> = Vec::new();
    for i in 0..iters {
        let result = &op.results[i];
        let operand = op.operands[ctrl + i];
        let block_arg = &body.args[arg_offset + i];
        // Register of the result if it is already live, otherwise fresh.
        let reg = match alloc.assignments.get(&result.id) {
            Some(r) => *r,
            None => {
                let r = alloc.assign_fresh(result.id, &result.ty, op)?;
                r
            }
        };
        if !alloc.assignments.contains_key(&block_arg.id) {
            alloc.bind(block_arg.id, reg);
        }
        match alloc.assignments.get(&operand) {
            Some(r) if *r != reg => {
                return Err(RegallocError::IterArgConflict { value: operand.0 })
            }
            Some(_) => {}
            None => {
                if def_types
                    .get(&operand)
                    .is_some_and(|t| t.is_unallocated_register())
                {
                    alloc.bind(operand, reg);
                }
            }
        }
        if let Some(t) = terminator {
            let yielded = t.operands[i];
            if !alloc.assignments.contains_key(&yielded)
                && def_types
                    .get(&yielded)
                    .is_some_and(|t| t.is_unallocated_register())
            {
                alloc.bind(yielded, reg);
            }
        }
        loop_defined.push(result.id);
        loop_defined.push(block_arg.id);
    }
    // Induction variable.
    if is_for {
        let ind = &body.args[0];
        if ind.ty.is_unallocated_register() && !alloc.assignments.contains_key(&ind.id) {
            alloc.assign_fresh(ind.id, &ind.ty, op)?;
        }
        loop_defined.push(body.args[0].id);
    }

    // Live range extension: outer-defined values used in the body must hold
    // their registers across the whole loop.
    let outer = outer_uses(op);
    for v in outer {
        if let Some(ty) = def_types.get(&v) {
            if ty.is_unallocated_register() && !alloc.assignments.contains_key(&v) {
                alloc.assign_fresh(v, ty, op)?;
            }
        }
    }
    // The upper bound (or repetition count) is read when the loop is
    // lowered to branches, so it holds its register across the body. The
    // lower bound and step are consumed at loop entry only and are assigned
    // after the body walk.
    let pinned_ctrl = if is_for { vec![op.operands[1]] } else { vec![op.operands[0]] };
    for v in &pinned_ctrl {
        let ty = def_types.get(v).cloned().unwrap_or(Type::Index);
        alloc.use_value(*v, &ty, op)?;
    }
    // Iteration operands already share the unified registers.
    for v in &op.operands[ctrl..] {
        let ty = def_types.get(v).cloned().unwrap_or(Type::Index);
        alloc.use_value(*v, &ty, op)?;
    }

    alloc_block(body, alloc, def_types)?;

    for v in &op.operands[..ctrl] {
        let ty = def_types.get(v).cloned().unwrap_or(Type::Index);
        alloc.use_value(*v, &ty, op)?;
    }
    // The loop op defines its results, the body args and the induction
    // variable: all die here (iteration operands stay live until their own
    // definitions).
    for v in loop_defined {
        alloc.release(v);
    }
    Ok(())
}

/// Operand index sharing the destination register of a read-modify-write
/// instruction.
fn tied_operand(name: &str) -> Option<usize> {
    match name {
        rv::VFMAC_S => Some(2),
        rv::VFSUM_S => Some(1),
        _ => None,
    }
}

/// Values used inside the operation's regions but defined outside.
pub fn outer_uses(op: &Operation) -> BTreeSet<ValueId> {
    let mut defined = HashSet::new();
    let mut used = BTreeSet::new();
    for region in &op.regions {
        for block in &region.blocks {
            for a in &block.args {
                defined.insert(a.id);
            }
            for inner in &block.ops {
                inner.walk(&mut |o| {
                    for r in &o.results {
                        defined.insert(r.id);
                    }
                    for r in &o.regions {
                        for b in &r.blocks {
                            for a in &b.args {
                                defined.insert(a.id);
                            }
                        }
                    }
                    for v in &o.operands {
                        used.insert(*v);
                    }
                });
            }
        }
    }
    used.retain(|v| !defined.contains(v));
    used
}

/// The allocator as a pipeline pass over every function in the module.
pub struct AllocateRegisters;

impl Pass for AllocateRegisters {
    fn name(&self) -> &str {
        "allocate-registers"
    }

    fn run(&self, module: &mut Module) -> Result<(), PassError> {
        for op in &mut module.top.regions[0].blocks[0].ops {
            if op.name == rv::FUNC {
                allocate_function(op)
                    .map_err(|e| PassError::failed("allocate-registers", e.to_string()))?;
            }
        }
        Ok(())
    }
}
