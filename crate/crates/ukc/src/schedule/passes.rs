//! In-place schedule rewrites on `memref_stream.generic` operations.

use std::collections::HashMap;

use crate::ir::affine::{AffineExpr, AffineMap};
use crate::ir::pass::{Pass, PassError};
use crate::ir::{
    clone_ops_with_map, Attribute, Block, IdGen, Module, Operation, Type, ValueId,
};

use super::{
    operand_view, view_shape_for_map, GenericView, CONSTANT, GENERIC, INTERLEAVED,
    MS_YIELD, PARALLEL,
};

/// Excludes reduction dimensions from the iteration space of results, so the
/// lowering accumulates in local values instead of memory.
pub struct ScalarReplacement;

impl Pass for ScalarReplacement {
    fn name(&self) -> &str {
        "scalar-replacement"
    }

    fn consumes(&self) -> &[&str] {
        &["memref_stream"]
    }

    fn run(&self, module: &mut Module) -> Result<(), PassError> {
        module.top.walk_mut(&mut |op| {
            if op.name != GENERIC {
                return;
            }
            let Some(view) = GenericView::of(op) else { return };
            let red = view.reduction_dims();
            if red.is_empty() || view.scalar_replaced() {
                return;
            }
            let ins = view.num_inputs;
            let mut new_maps = view.maps.clone();
            for m in new_maps.iter_mut().skip(ins) {
                let mut reduced = m.clone();
                // Drop from the highest index so positions stay valid.
                for d in red.iter().rev() {
                    match reduced.drop_dim(*d) {
                        Some(r) => reduced = r,
                        None => return, // output depends on a reduction index
                    }
                }
                *m = reduced;
            }
            op.set_attr("indexing_maps", Attribute::Maps(new_maps));
        });
        Ok(())
    }
}

/// Fuses a constant fill into the reduction that accumulates into the same
/// buffer, turning the constant into the accumulator's initial value and
/// eliminating the remaining reads of prior buffer contents.
pub struct FuseFill;

impl Pass for FuseFill {
    fn name(&self) -> &str {
        "fuse-fill"
    }

    fn consumes(&self) -> &[&str] {
        &["memref_stream"]
    }

    fn run(&self, module: &mut Module) -> Result<(), PassError> {
        module.top.walk_mut(&mut |func| {
            if func.name != super::FUNC {
                return;
            }
            let block = &mut func.regions[0].blocks[0];
            let mut i = 0;
            while i + 1 < block.ops.len() {
                if let Some(constant) = fill_constant(&block.ops, i) {
                    let (fill_out, value) = constant;
                    if fusable_reduction(&block.ops[i + 1], fill_out) {
                        block.ops[i + 1].set_attr("init_values", Attribute::Floats(vec![value]));
                        block.ops.remove(i);
                        continue;
                    }
                }
                i += 1;
            }
        });
        Ok(())
    }
}

/// If `ops[i]` is an all-parallel generic writing an `arith.constant` scalar
/// to its output, returns the output value and the constant.
fn fill_constant(ops: &[Operation], i: usize) -> Option<(ValueId, f64)> {
    let op = &ops[i];
    let view = GenericView::of(op)?;
    if view.num_inputs != 1
        || view.num_outputs() != 1
        || view.iterator_types.iter().any(|t| t != PARALLEL)
    {
        return None;
    }
    let body = op.body();
    let yielded = match body.ops.as_slice() {
        [y] if y.name == MS_YIELD && y.operands.len() == 1 => y.operands[0],
        _ => return None,
    };
    if yielded != body.args[0].id {
        return None;
    }
    let scalar = op.operands[0];
    let value = ops.iter().find_map(|o| {
        if o.name == CONSTANT && o.results.first().map(|r| r.id) == Some(scalar) {
            o.attr("value").and_then(|a| a.as_float())
        } else {
            None
        }
    })?;
    Some((op.operands[1], value))
}

fn fusable_reduction(op: &Operation, buffer: ValueId) -> bool {
    let Some(view) = GenericView::of(op) else {
        return false;
    };
    view.scalar_replaced()
        && view.init_values().is_none()
        && view.num_outputs() == 1
        && op.operands[view.num_inputs] == buffer
}

/// Interleaves `factor` iterations of a parallel dimension in the innermost
/// loop body, giving each interleaved iteration its own accumulator.
pub struct UnrollAndJam {
    pub factor_override: Option<i64>,
}

impl Pass for UnrollAndJam {
    fn name(&self) -> &str {
        "unroll-and-jam"
    }

    fn consumes(&self) -> &[&str] {
        &["memref_stream"]
    }

    fn run(&self, module: &mut Module) -> Result<(), PassError> {
        let mut ids = std::mem::take(&mut module.ids);
        let factor_override = self.factor_override;
        let mut result = Ok(());
        module.top.walk_mut(&mut |op| {
            if op.name == GENERIC && result.is_ok() {
                result = unroll_generic(op, &mut ids, factor_override);
            }
        });
        module.ids = ids;
        result
    }
}

/// FPU pipeline depth; interleaving at least depth + 1 independent
/// accumulators hides the result latency entirely.
const FPU_PIPELINE_DEPTH: i64 = 3;

/// Smallest divisor of `extent` in `[depth+1, 8]`; small extents are taken
/// whole; otherwise the largest divisor below the preferred band. Returns 1
/// (no unrolling) only for extents with no usable divisor.
pub fn select_unroll_factor(extent: i64) -> i64 {
    let lo = FPU_PIPELINE_DEPTH + 1;
    let divisors: Vec<i64> = (2..=extent).filter(|d| extent % d == 0).collect();
    if let Some(d) = divisors.iter().find(|d| **d >= lo && **d <= 8) {
        return *d;
    }
    if extent <= lo + 1 {
        return extent;
    }
    divisors
        .iter()
        .rev()
        .find(|d| **d < lo)
        .copied()
        .unwrap_or(1)
}

fn unroll_generic(
    op: &mut Operation,
    ids: &mut IdGen,
    factor_override: Option<i64>,
) -> Result<(), PassError> {
    const PASS: &str = "unroll-and-jam";
    let Some(view) = GenericView::of(op) else {
        return Ok(());
    };
    // Needs a reduction to interleave around, scalar-replaced outputs, and a
    // parallel dimension worth splitting.
    if view.reduction_dims().is_empty()
        || !view.scalar_replaced()
        || view.iterator_types.iter().any(|t| t == INTERLEAVED)
    {
        return Ok(());
    }
    let Some(dim) = view
        .iterator_types
        .iter()
        .enumerate()
        .position(|(d, t)| t == PARALLEL && view.bounds[d] > 1)
    else {
        return Ok(());
    };
    let extent = view.bounds[dim];
    let factor = match factor_override {
        Some(f) => {
            if extent % f != 0 {
                return Err(PassError::failed(
                    PASS,
                    format!("unroll factor {f} does not divide extent {extent}"),
                ));
            }
            f
        }
        None => select_unroll_factor(extent),
    };
    if factor <= 1 {
        return Ok(());
    }
    let drop_outer = factor == extent;

    let ins = view.num_inputs;
    let n_outs = view.num_outputs();
    let mut bounds = view.bounds.clone();
    let mut iterator_types = view.iterator_types.clone();
    if drop_outer {
        bounds.remove(dim);
        iterator_types.remove(dim);
    } else {
        bounds[dim] = extent / factor;
    }
    bounds.push(factor);
    iterator_types.push(INTERLEAVED.to_string());

    let mut maps = view.maps.clone();
    for m in maps.iter_mut().take(ins) {
        *m = m.split_dim(dim, factor, drop_outer);
    }
    // Output maps range over non-reduction dimensions; locate the split
    // position within that subsequence.
    let dim_in_outputs = view.non_reduction_dims().iter().position(|d| *d == dim);
    let Some(out_dim) = dim_in_outputs else {
        return Ok(());
    };
    for m in maps.iter_mut().skip(ins) {
        *m = m.split_dim(out_dim, factor, drop_outer);
    }

    // Replicate the body: one argument group per operand, one clone of the
    // computation per interleaved lane.
    let body = op.body().clone();
    if body.args.len() != ins + n_outs {
        return Err(PassError::failed(PASS, "generic body arity mismatch"));
    }
    let yields = match body.ops.last() {
        Some(y) if y.name == MS_YIELD => y.operands.clone(),
        _ => return Err(PassError::failed(PASS, "generic body must end in yield")),
    };
    let u = factor as usize;
    let mut new_args: Vec<Vec<crate::ir::ValueDef>> = Vec::new();
    for arg in &body.args {
        let lanes = (0..u).map(|_| ids.value(arg.ty.clone())).collect();
        new_args.push(lanes);
    }
    let mut new_ops = Vec::new();
    let mut new_yield_operands = vec![ValueId(u32::MAX); n_outs * u];
    for lane in 0..u {
        let mut map: HashMap<ValueId, ValueId> = HashMap::new();
        for (ai, arg) in body.args.iter().enumerate() {
            map.insert(arg.id, new_args[ai][lane].id);
        }
        let cloned = clone_ops_with_map(&body.ops[..body.ops.len() - 1], ids, &mut map);
        new_ops.extend(cloned);
        for (oi, y) in yields.iter().enumerate() {
            new_yield_operands[oi * u + lane] = *map.get(y).copied().get_or_insert(*y);
        }
    }
    new_ops.push(Operation::new(MS_YIELD).with_operands(new_yield_operands));

    op.set_attr("bounds", Attribute::Ints(bounds));
    op.set_attr("iterator_types", Attribute::Strs(iterator_types));
    op.set_attr("indexing_maps", Attribute::Maps(maps));
    op.regions[0].blocks[0] = Block {
        args: new_args.into_iter().flatten().collect(),
        ops: new_ops,
    };
    Ok(())
}

/// Packs pairs of f32 elements into 64-bit lanes.
///
/// Element-wise all-parallel generics are packed unconditionally (the packed
/// body is lane-exact); contiguous f32 reductions are packed only once an
/// interleaved dimension exists, mirroring the SIMD variant of the kernel.
pub struct VectorizePairs {
    pub reductions: bool,
}

impl Pass for VectorizePairs {
    fn name(&self) -> &str {
        if self.reductions {
            "pack-f32-pairs-reduction"
        } else {
            "pack-f32-pairs"
        }
    }

    fn run(&self, module: &mut Module) -> Result<(), PassError> {
        let types = module.top.def_types();
        let reductions = self.reductions;
        module.top.walk_mut(&mut |op| {
            if op.name != GENERIC {
                return;
            }
            if reductions {
                pack_reduction(op, &types);
            } else {
                pack_elementwise(op, &types);
            }
        });
        Ok(())
    }
}

fn body_types_all_f32(op: &Operation) -> bool {
    op.body().args.iter().all(|a| a.ty == Type::F32)
}

fn retype_body_f32x2(op: &mut Operation) {
    let block = &mut op.regions[0].blocks[0];
    for arg in &mut block.args {
        if arg.ty == Type::F32 {
            arg.ty = Type::F32x2;
        }
    }
    for inner in &mut block.ops {
        for r in &mut inner.results {
            if r.ty == Type::F32 {
                r.ty = Type::F32x2;
            }
        }
    }
}

fn pack_elementwise(op: &mut Operation, types: &HashMap<ValueId, Type>) {
    let Some(view) = GenericView::of(op) else { return };
    if view.iterator_types.iter().any(|t| t != PARALLEL) || !body_types_all_f32(op) {
        return;
    }
    let arity = view.bounds.len();
    let last = arity - 1;
    if view.bounds[last] % 2 != 0 {
        return;
    }
    // All memref operands must be f32 and accessed by the identity map;
    // scalar operands are unaffected.
    for (i, operand) in view.op.operands.iter().enumerate() {
        match types.get(operand) {
            Some(Type::MemRef { elem, .. }) => {
                if **elem != Type::F32 || view.maps[i] != AffineMap::identity(arity) {
                    return;
                }
            }
            Some(Type::F32) | None => {}
            _ => return,
        }
    }
    let mut bounds = view.bounds.clone();
    bounds[last] /= 2;
    let mut maps = view.maps.clone();
    for (i, m) in maps.iter_mut().enumerate() {
        if matches!(types.get(&view.op.operands[i]), Some(Type::MemRef { .. })) {
            let mut exprs = m.exprs.clone();
            for c in &mut exprs[last].coefs {
                *c *= 2;
            }
            *m = AffineMap::new(m.arity, exprs);
        }
    }
    op.set_attr("bounds", Attribute::Ints(bounds));
    op.set_attr("indexing_maps", Attribute::Maps(maps));
    op.set_attr("packed", Attribute::Bool(true));
    retype_body_f32x2(op);
}

fn pack_reduction(op: &mut Operation, types: &HashMap<ValueId, Type>) {
    let Some(view) = GenericView::of(op) else { return };
    if !view.iterator_types.iter().any(|t| t == INTERLEAVED)
        || !view.scalar_replaced()
        || !body_types_all_f32(op)
    {
        return;
    }
    let red = view.reduction_dims();
    let [dim] = red.as_slice() else { return };
    let dim = *dim;
    if view.bounds[dim] % 2 != 0 {
        return;
    }
    // Every input must be contiguous along the reduction dimension in
    // element space.
    for i in 0..view.num_inputs {
        let Some((shape, _)) = types.get(&view.op.operands[i]).and_then(operand_view) else {
            return;
        };
        let flat = view.maps[i].flatten(&view_shape_for_map(&shape, &view.maps[i]));
        if flat.coefs[dim] != 1 {
            return;
        }
    }
    let mut bounds = view.bounds.clone();
    bounds[dim] /= 2;
    let mut maps = view.maps.clone();
    for m in maps.iter_mut().take(view.num_inputs) {
        let exprs = m
            .exprs
            .iter()
            .map(|e| {
                let mut coefs = e.coefs.clone();
                coefs[dim] *= 2;
                AffineExpr {
                    coefs,
                    constant: e.constant,
                }
            })
            .collect();
        *m = AffineMap::new(m.arity, exprs);
    }
    op.set_attr("bounds", Attribute::Ints(bounds));
    op.set_attr("indexing_maps", Attribute::Maps(maps));
    retype_body_f32x2(op);
}

/// Merges adjacent parallel dimensions that every operand walks
/// contiguously, shrinking loop nests and stream configurations.
pub struct CollapseDims;

impl Pass for CollapseDims {
    fn name(&self) -> &str {
        "collapse-dims"
    }

    fn run(&self, module: &mut Module) -> Result<(), PassError> {
        let types = module.top.def_types();
        module.top.walk_mut(&mut |op| {
            if op.name != GENERIC {
                return;
            }
            loop {
                let Some(view) = GenericView::of(op) else { return };
                let Some(d) = find_collapsible(&view, &types) else {
                    return;
                };
                apply_collapse(op, d, &types);
            }
        });
        Ok(())
    }
}

fn flat_map_for(
    view: &GenericView,
    i: usize,
    types: &HashMap<ValueId, Type>,
) -> Option<AffineExpr> {
    let (shape, _) = types.get(&view.op.operands[i]).and_then(operand_view)?;
    let map = &view.maps[i];
    Some(map.flatten(&view_shape_for_map(&shape, map)))
}

fn find_collapsible(view: &GenericView, types: &HashMap<ValueId, Type>) -> Option<usize> {
    let non_red = view.non_reduction_dims();
    'outer: for d in 0..view.bounds.len().saturating_sub(1) {
        if view.iterator_types[d] != PARALLEL || view.iterator_types[d + 1] != PARALLEL {
            continue;
        }
        let inner = view.bounds[d + 1];
        for i in 0..view.op.operands.len() {
            let is_output = i >= view.num_inputs;
            let Some(flat) = flat_map_for(view, i, types) else {
                if types
                    .get(&view.op.operands[i])
                    .is_some_and(|t| matches!(t, Type::MemRef { .. }))
                {
                    continue 'outer;
                }
                continue; // scalar operand, unconstrained
            };
            let (a, b) = if is_output && view.scalar_replaced() {
                let pos = non_red.iter().position(|x| *x == d).unwrap();
                (flat.coefs[pos], flat.coefs[pos + 1])
            } else {
                (flat.coefs[d], flat.coefs[d + 1])
            };
            if a != b * inner {
                continue 'outer;
            }
        }
        return Some(d);
    }
    None
}

fn apply_collapse(op: &mut Operation, d: usize, types: &HashMap<ValueId, Type>) {
    let view = GenericView::of(op).unwrap();
    let non_red = view.non_reduction_dims();
    let inner = view.bounds[d + 1];
    let mut bounds = view.bounds.clone();
    bounds[d] *= inner;
    bounds.remove(d + 1);
    let mut iterator_types = view.iterator_types.clone();
    iterator_types.remove(d + 1);

    let ins = view.num_inputs;
    let scalar_replaced = view.scalar_replaced();
    let mut maps = view.maps.clone();
    for (i, m) in maps.iter_mut().enumerate() {
        let Some((shape, _)) = types.get(&view.op.operands[i]).and_then(operand_view) else {
            // Scalar operand: shrink the domain only.
            let pos = if i >= ins && scalar_replaced {
                non_red.iter().position(|x| *x == d).unwrap()
            } else {
                d
            };
            *m = m
                .drop_dim(pos + 1)
                .expect("scalar map must not reference dims");
            continue;
        };
        let flat = m.flatten(&view_shape_for_map(&shape, m));
        let pos = if i >= ins && scalar_replaced {
            non_red.iter().position(|x| *x == d).unwrap()
        } else {
            d
        };
        let mut coefs = flat.coefs.clone();
        let inner_coef = coefs[pos + 1];
        coefs.remove(pos);
        coefs[pos] = inner_coef;
        *m = AffineMap::new(
            coefs.len(),
            vec![AffineExpr {
                coefs,
                constant: flat.constant,
            }],
        );
    }
    op.set_attr("bounds", Attribute::Ints(bounds));
    op.set_attr("iterator_types", Attribute::Strs(iterator_types));
    op.set_attr("indexing_maps", Attribute::Maps(maps));
}
