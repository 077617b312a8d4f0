//! Lowering from scheduled `memref_stream` operations to the structured
//! RISC-V dialects: functions move to the A-register calling convention,
//! generics become loop nests over their bounds with interleaved lanes
//! unrolled into the body, streamed operands turn into stream reads/writes,
//! and explicit accesses into naive address arithmetic plus loads/stores.

use std::collections::HashMap;

use crate::ir::affine::AffineExpr;
use crate::ir::pass::{Pass, PassError};
use crate::ir::types::{FpReg, IntReg};
use crate::ir::{
    Attribute, Block, IdGen, Module, Operation, Region, Type, ValueDef, ValueId,
};
use crate::rv;
use crate::snitch::{canonicalize_pattern, pattern_from_affine};

use super::{
    operand_view, view_shape_for_map, GenericView, ADDF, CONSTANT, GENERIC, INTERLEAVED, MAXF,
    MS_STREAMING_REGION, MS_YIELD, MULF, REDUCTION, REDUCTION_UNROLL_LIMIT, SUBF,
};

const PASS: &str = "lower-to-rv";

pub struct LowerToRv;

impl Pass for LowerToRv {
    fn name(&self) -> &str {
        "lower-to-rv"
    }

    fn consumes(&self) -> &[&str] {
        &["memref_stream"]
    }

    fn run(&self, module: &mut Module) -> Result<(), PassError> {
        let types = module.top.def_types();
        let mut ids = std::mem::take(&mut module.ids);
        let block = &mut module.top.regions[0].blocks[0];
        for op in block.ops.iter_mut() {
            if op.name == super::FUNC {
                *op = convert_func(op, &types, &mut ids)?;
            }
        }
        module.ids = ids;
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Idx {
    Reg(ValueId),
    Const(i64),
}

struct Ctx<'a> {
    ids: &'a mut IdGen,
    /// Definition types of the original module.
    types: &'a HashMap<ValueId, Type>,
    /// Original value -> converted value.
    vmap: HashMap<ValueId, ValueId>,
    /// Materialized FP constants by bit pattern.
    constants: HashMap<u64, ValueId>,
    /// Anchor for the hardwired zero register.
    zero: Option<ValueId>,
}

impl<'a> Ctx<'a> {
    fn mapped(&self, v: ValueId) -> Result<ValueId, PassError> {
        self.vmap
            .get(&v)
            .copied()
            .ok_or_else(|| PassError::failed(PASS, format!("unmapped value %{}", v.0)))
    }
}

fn convert_func(
    func: &Operation,
    types: &HashMap<ValueId, Type>,
    ids: &mut IdGen,
) -> Result<Operation, PassError> {
    let sym = func
        .str_attr("sym")
        .ok_or_else(|| PassError::failed(PASS, "function without sym"))?
        .to_string();
    let old_block = &func.regions[0].blocks[0];

    let mut ctx = Ctx {
        ids,
        types,
        vmap: HashMap::new(),
        constants: HashMap::new(),
        zero: None,
    };

    // A-register argument assignment.
    let mut new_args = Vec::new();
    let mut int_args = 0u8;
    let mut fp_args = 0u8;
    let mut entry = Vec::new();
    for arg in &old_block.args {
        let (reg_ty, copy_name) = match &arg.ty {
            Type::MemRef { .. } => (Type::IntReg(Some(IntReg::a(int_args))), rv::MV),
            Type::F64 | Type::F32 => (Type::FpReg(Some(FpReg::fa(fp_args))), rv::FMV_D),
            other => {
                return Err(PassError::failed(
                    PASS,
                    format!("unsupported function argument type {other}"),
                ))
            }
        };
        match &arg.ty {
            Type::MemRef { .. } => int_args += 1,
            _ => fp_args += 1,
        }
        let arg_def = ctx.ids.value(reg_ty);
        // Arguments are pinned to their ABI registers for the whole body;
        // the body works on copies.
        let copy_ty = match &arg.ty {
            Type::MemRef { .. } => Type::IntReg(None),
            _ => Type::FpReg(None),
        };
        let (copy, copied) = rv::unary(ctx.ids, copy_name, arg_def.id, copy_ty);
        entry.push(copy);
        ctx.vmap.insert(arg.id, copied);
        new_args.push(arg_def);
    }

    // Materialize every used FP constant once, in first-use order.
    let mut constant_bits = Vec::new();
    collect_constants(old_block, &mut constant_bits);
    for bits in constant_bits {
        materialize_constant(&mut ctx, bits, &mut entry);
    }

    let mut body = entry;
    for op in &old_block.ops {
        convert_top_op(op, &mut ctx, &mut body)?;
    }

    let mut new_func = Operation::new(rv::FUNC).with_attr("sym", Attribute::Str(sym));
    new_func.regions.push(Region {
        blocks: vec![Block {
            args: new_args,
            ops: body,
        }],
    });
    Ok(new_func)
}

/// Bit patterns of FP constants the body actually consumes, including
/// accumulator init values, in deterministic first-use order.
fn collect_constants(block: &Block, out: &mut Vec<u64>) {
    let push = |bits: u64, out: &mut Vec<u64>| {
        if !out.contains(&bits) {
            out.push(bits);
        }
    };
    for op in &block.ops {
        op.walk(&mut |o| {
            if o.name == CONSTANT {
                let used = o.results.first().map(|r| r.id);
                // Constants inside generic bodies are always used; function
                // level constants only when referenced.
                let _ = used;
            }
        });
    }
    // Two walks: uses first, then match constants.
    let mut use_counts: HashMap<ValueId, usize> = HashMap::new();
    for op in &block.ops {
        op.walk(&mut |o| {
            for v in &o.operands {
                *use_counts.entry(*v).or_default() += 1;
            }
        });
    }
    for op in &block.ops {
        op.walk(&mut |o| {
            if o.name == CONSTANT {
                let r = &o.results[0];
                if use_counts.get(&r.id).copied().unwrap_or(0) > 0 {
                    push(constant_bits(o.attr("value").and_then(|a| a.as_float()).unwrap_or(0.0), &r.ty), out);
                }
            }
            if o.name == GENERIC {
                if let Some(view) = GenericView::of(o) {
                    let u = view.interleave_factor() as usize;
                    if let Some(inits) = o.attr("init_values").and_then(|a| a.as_floats()) {
                        let acc_ty = &o.body().args[view.num_inputs * u].ty;
                        for v in inits {
                            push(constant_bits(*v, acc_ty), out);
                        }
                    }
                    // Packed accumulators stored into scalar f32 outputs
                    // reduce lanes through a zero-initialized register.
                    for oi in 0..view.num_outputs() {
                        let acc_ty = &o.body().args[(view.num_inputs + oi) * u].ty;
                        if *acc_ty == Type::F32x2
                            && !matches!(o.attr("packed"), Some(Attribute::Bool(true)))
                        {
                            push(0, out);
                        }
                    }
                }
            }
        });
    }
}

fn constant_bits(value: f64, ty: &Type) -> u64 {
    match ty {
        Type::F32 => (value as f32).to_bits() as u64,
        Type::F32x2 => {
            let lane = (value as f32).to_bits() as u64;
            (lane << 32) | lane
        }
        _ => value.to_bits(),
    }
}

fn materialize_constant(ctx: &mut Ctx, bits: u64, out: &mut Vec<Operation>) {
    if ctx.constants.contains_key(&bits) {
        return;
    }
    let value = if bits == 0 {
        // All-zero bit patterns convert the hardwired zero register.
        let zero = match ctx.zero {
            Some(z) => z,
            None => {
                let (op, z) =
                    rv::get_register(ctx.ids, Type::IntReg(Some(IntReg::ZERO)));
                out.push(op);
                ctx.zero = Some(z);
                z
            }
        };
        let (cvt, v) = rv::unary(ctx.ids, rv::FCVT_D_W, zero, Type::FpReg(None));
        out.push(cvt);
        v
    } else {
        let (li, bits_reg) = rv::li(ctx.ids, bits as i64);
        out.push(li);
        let (mv, v) = rv::unary(ctx.ids, rv::FMV_D_X, bits_reg, Type::FpReg(None));
        out.push(mv);
        v
    };
    ctx.constants.insert(bits, value);
}

fn convert_top_op(
    op: &Operation,
    ctx: &mut Ctx,
    out: &mut Vec<Operation>,
) -> Result<(), PassError> {
    match op.name.as_str() {
        CONSTANT => {
            let ty = &op.results[0].ty;
            let bits = constant_bits(
                op.attr("value").and_then(|a| a.as_float()).unwrap_or(0.0),
                ty,
            );
            if let Some(v) = ctx.constants.get(&bits) {
                ctx.vmap.insert(op.results[0].id, *v);
            }
            Ok(())
        }
        MS_STREAMING_REGION => convert_streaming_region(op, ctx, out),
        GENERIC => emit_generic(op, ctx, &HashMap::new(), out),
        super::RETURN => {
            out.push(Operation::new(rv::RET));
            Ok(())
        }
        other => Err(PassError::failed(
            PASS,
            format!("cannot lower operation {other}"),
        )),
    }
}

fn convert_streaming_region(
    op: &Operation,
    ctx: &mut Ctx,
    out: &mut Vec<Operation>,
) -> Result<(), PassError> {
    let patterns = op
        .attr("patterns")
        .and_then(|a| a.as_patterns())
        .ok_or_else(|| PassError::failed(PASS, "streaming region without patterns"))?
        .to_vec();
    let ins = op
        .int_attr("ins")
        .ok_or_else(|| PassError::failed(PASS, "streaming region without ins"))?;

    let mut resolved = Vec::new();
    let mut bases = Vec::new();
    for (pattern, operand) in patterns.iter().zip(&op.operands) {
        let (shape, elem) = ctx
            .types
            .get(operand)
            .and_then(operand_view)
            .ok_or_else(|| PassError::failed(PASS, "streamed operand is not a memref"))?;
        let shape = view_shape_for_map(&shape, &pattern.map);
        let (sp, offset) =
            pattern_from_affine(&pattern.ub, &pattern.map, elem as i64, &shape)
                .map_err(|e| PassError::failed(PASS, e))?;
        let mut base = ctx.mapped(*operand)?;
        if offset != 0 {
            let (op, adjusted) = rv::addi(ctx.ids, base, offset);
            out.push(op);
            base = adjusted;
        }
        resolved.push(canonicalize_pattern(&sp));
        bases.push(base);
    }

    let old_body = op.body();
    let mut region_op = Operation::new(rv::STREAMING_REGION)
        .with_operands(bases)
        .with_attr("patterns", Attribute::StridePatterns(resolved))
        .with_attr("ins", Attribute::Int(ins));
    let mut stream_args = Vec::new();
    let mut lanes = HashMap::new();
    for (lane, arg) in old_body.args.iter().enumerate() {
        let def = ctx.ids.value(arg.ty.clone());
        lanes.insert(arg.id, (lane, def.id));
        stream_args.push(def);
    }
    let stream_of: HashMap<ValueId, usize> =
        lanes.iter().map(|(old, (lane, _))| (*old, *lane)).collect();
    for (old, (_, new)) in &lanes {
        ctx.vmap.insert(*old, *new);
    }

    let mut inner = Vec::new();
    for nested in &old_body.ops {
        match nested.name.as_str() {
            GENERIC => emit_generic(nested, ctx, &stream_of, &mut inner)?,
            other => {
                return Err(PassError::failed(
                    PASS,
                    format!("unsupported operation {other} in streaming region"),
                ))
            }
        }
    }
    region_op.regions.push(Region {
        blocks: vec![Block {
            args: stream_args,
            ops: inner,
        }],
    });
    out.push(region_op);
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum DimKind {
    Unit,
    ParallelLoop,
    ReductionLoop,
    ReductionUnrolled,
    Interleaved,
}

struct GenericLowering<'a, 'b> {
    ctx: &'a mut Ctx<'b>,
    generic: &'a Operation,
    bounds: Vec<i64>,
    maps: Vec<crate::ir::affine::AffineMap>,
    num_inputs: usize,
    lanes: usize,
    dims: Vec<DimKind>,
    non_reduction: Vec<usize>,
    scalar_replaced: bool,
    init_values: Option<Vec<f64>>,
    /// Old stream arg -> lane index, for operands that are streams.
    streams: &'a HashMap<ValueId, usize>,
    /// Fused multiplies: mulf ops folded into their consuming addf.
    fused: HashMap<ValueId, (ValueId, ValueId)>,
    packed_output: bool,
}

fn emit_generic(
    g: &Operation,
    ctx: &mut Ctx,
    streams: &HashMap<ValueId, usize>,
    out: &mut Vec<Operation>,
) -> Result<(), PassError> {
    let view = GenericView::of(g)
        .ok_or_else(|| PassError::failed(PASS, "malformed generic operation"))?;
    let lanes = view.interleave_factor() as usize;
    let mut dims = Vec::new();
    for (d, t) in view.iterator_types.iter().enumerate() {
        let kind = match t.as_str() {
            INTERLEAVED => DimKind::Interleaved,
            REDUCTION if view.bounds[d] <= REDUCTION_UNROLL_LIMIT => DimKind::ReductionUnrolled,
            REDUCTION => DimKind::ReductionLoop,
            _ if view.bounds[d] == 1 => DimKind::Unit,
            _ => DimKind::ParallelLoop,
        };
        dims.push(kind);
    }
    // Reductions must be contiguous and inner (only interleaved follows).
    if let Some(first_red) = dims
        .iter()
        .position(|k| matches!(k, DimKind::ReductionLoop | DimKind::ReductionUnrolled))
    {
        for k in &dims[first_red..] {
            if matches!(k, DimKind::ParallelLoop | DimKind::Unit) {
                return Err(PassError::failed(
                    PASS,
                    "parallel dimensions must precede reductions",
                ));
            }
        }
    }
    let fused = find_fusions(g.body());
    let mut lowering = GenericLowering {
        generic: g,
        bounds: view.bounds.clone(),
        maps: view.maps.clone(),
        num_inputs: view.num_inputs,
        lanes,
        dims,
        non_reduction: view.non_reduction_dims(),
        scalar_replaced: view.scalar_replaced(),
        init_values: view.init_values(),
        streams,
        fused,
        packed_output: matches!(g.attr("packed"), Some(Attribute::Bool(true))),
        ctx,
    };
    let mut idxs = vec![Idx::Const(0); lowering.bounds.len()];
    lowering.emit_dims(0, &mut idxs, out)
}

/// Multiplies whose single use is an addition in the same body fuse into a
/// multiply-add.
fn find_fusions(body: &Block) -> HashMap<ValueId, (ValueId, ValueId)> {
    let mut use_counts: HashMap<ValueId, usize> = HashMap::new();
    for op in &body.ops {
        for v in &op.operands {
            *use_counts.entry(*v).or_default() += 1;
        }
    }
    let mut out = HashMap::new();
    for op in &body.ops {
        if op.name == MULF && use_counts.get(&op.results[0].id) == Some(&1) {
            let used_by_add = body.ops.iter().any(|o| {
                o.name == ADDF && o.operands.contains(&op.results[0].id)
            });
            if used_by_add {
                out.insert(op.results[0].id, (op.operands[0], op.operands[1]));
            }
        }
    }
    out
}

impl<'a, 'b> GenericLowering<'a, 'b> {
    fn first_reduction(&self) -> Option<usize> {
        self.dims
            .iter()
            .position(|k| matches!(k, DimKind::ReductionLoop | DimKind::ReductionUnrolled))
    }

    fn emit_dims(
        &mut self,
        d: usize,
        idxs: &mut Vec<Idx>,
        out: &mut Vec<Operation>,
    ) -> Result<(), PassError> {
        if self.scalar_replaced && self.first_reduction() == Some(d) {
            return self.emit_reduction_part(d, idxs, out);
        }
        if d == self.bounds.len() || self.dims[d] == DimKind::Interleaved {
            // Pure parallel bottom (or baseline form reaching the body).
            let accs = self.bind_output_args(idxs, out)?;
            let results = self.instantiate_body(idxs, &accs, out)?;
            return self.emit_writes(idxs, &results, out);
        }
        match self.dims[d] {
            DimKind::Unit => {
                idxs[d] = Idx::Const(0);
                self.emit_dims(d + 1, idxs, out)
            }
            DimKind::ParallelLoop => {
                let bound = self.bounds[d];
                let mut body = Vec::new();
                let ind = self.ctx.ids.value(Type::IntReg(None));
                idxs[d] = Idx::Reg(ind.id);
                self.emit_dims(d + 1, idxs, &mut body)?;
                body.push(Operation::new(rv::YIELD));
                self.push_loop(bound, ind, Vec::new(), Vec::new(), body, out);
                Ok(())
            }
            DimKind::ReductionLoop | DimKind::ReductionUnrolled | DimKind::Interleaved => {
                // Baseline form: reductions behave like ordinary loops.
                let bound = self.bounds[d];
                let mut body = Vec::new();
                let ind = self.ctx.ids.value(Type::IntReg(None));
                idxs[d] = Idx::Reg(ind.id);
                self.emit_dims(d + 1, idxs, &mut body)?;
                body.push(Operation::new(rv::YIELD));
                self.push_loop(bound, ind, Vec::new(), Vec::new(), body, out);
                Ok(())
            }
        }
    }

    /// Initialization, reduction loops, then writes.
    fn emit_reduction_part(
        &mut self,
        d: usize,
        idxs: &mut Vec<Idx>,
        out: &mut Vec<Operation>,
    ) -> Result<(), PassError> {
        let accs = self.emit_acc_inits(idxs, out)?;
        let finals = self.emit_reduction(d, accs, idxs, out)?;
        self.emit_writes(idxs, &finals, out)
    }

    fn emit_reduction(
        &mut self,
        d: usize,
        accs: Vec<ValueId>,
        idxs: &mut Vec<Idx>,
        out: &mut Vec<Operation>,
    ) -> Result<Vec<ValueId>, PassError> {
        if d == self.bounds.len() || self.dims[d] == DimKind::Interleaved {
            return self.instantiate_body(idxs, &accs, out);
        }
        match self.dims[d] {
            DimKind::ReductionUnrolled => {
                let mut accs = accs;
                for i in 0..self.bounds[d] {
                    idxs[d] = Idx::Const(i);
                    accs = self.emit_reduction(d + 1, accs, idxs, out)?;
                }
                Ok(accs)
            }
            DimKind::ReductionLoop => {
                let bound = self.bounds[d];
                let ind = self.ctx.ids.value(Type::IntReg(None));
                let iter_args: Vec<ValueDef> = accs
                    .iter()
                    .map(|_| self.ctx.ids.value(Type::FpReg(None)))
                    .collect();
                idxs[d] = Idx::Reg(ind.id);
                let mut body = Vec::new();
                let inner =
                    self.emit_reduction(d + 1, iter_args.iter().map(|a| a.id).collect(), idxs, &mut body)?;
                body.push(Operation::new(rv::YIELD).with_operands(inner));
                let results: Vec<ValueDef> = accs
                    .iter()
                    .map(|_| self.ctx.ids.value(Type::FpReg(None)))
                    .collect();
                let result_ids = results.iter().map(|r| r.id).collect();
                self.push_loop_with(bound, ind, iter_args, accs, results, body, out);
                Ok(result_ids)
            }
            DimKind::Unit => {
                idxs[d] = Idx::Const(0);
                self.emit_reduction(d + 1, accs, idxs, out)
            }
            _ => Err(PassError::failed(
                PASS,
                "parallel dimension inside the reduction nest",
            )),
        }
    }

    fn push_loop(
        &mut self,
        bound: i64,
        ind: ValueDef,
        iter_args: Vec<ValueDef>,
        inits: Vec<ValueId>,
        body: Vec<Operation>,
        out: &mut Vec<Operation>,
    ) {
        self.push_loop_with(bound, ind, iter_args, inits, Vec::new(), body, out);
    }

    fn push_loop_with(
        &mut self,
        bound: i64,
        ind: ValueDef,
        iter_args: Vec<ValueDef>,
        inits: Vec<ValueId>,
        results: Vec<ValueDef>,
        body: Vec<Operation>,
        out: &mut Vec<Operation>,
    ) {
        let (lb_op, lb) = rv::li(self.ctx.ids, 0);
        let (ub_op, ub) = rv::li(self.ctx.ids, bound);
        let (st_op, st) = rv::li(self.ctx.ids, 1);
        out.push(lb_op);
        out.push(ub_op);
        out.push(st_op);
        let mut for_op = Operation::new(rv::FOR);
        for_op.operands = vec![lb, ub, st];
        for_op.operands.extend(inits);
        for_op.results = results;
        let mut args = vec![ind];
        args.extend(iter_args);
        for_op.regions.push(Region {
            blocks: vec![Block { args, ops: body }],
        });
        out.push(for_op);
    }

    /// Accumulator initial values, one per output lane: either the fused
    /// init constant or a load of the output buffer's current contents.
    fn emit_acc_inits(
        &mut self,
        idxs: &[Idx],
        out: &mut Vec<Operation>,
    ) -> Result<Vec<ValueId>, PassError> {
        let n_outs = self.generic.operands.len() - self.num_inputs;
        let mut accs = Vec::new();
        for oi in 0..n_outs {
            if let Some(inits) = self.init_values.clone() {
                let u = self.lanes;
                let acc_ty = self.generic.body().args[(self.num_inputs + oi) * u].ty.clone();
                let bits = constant_bits(inits[oi], &acc_ty);
                let cval = *self.ctx.constants.get(&bits).ok_or_else(|| {
                    PassError::failed(PASS, "init constant was not materialized")
                })?;
                for _ in 0..self.lanes {
                    let (mv, v) = rv::unary(self.ctx.ids, rv::FMV_D, cval, Type::FpReg(None));
                    out.push(mv);
                    accs.push(v);
                }
            } else {
                for lane in 0..self.lanes {
                    let v = self.emit_output_access(oi, lane, idxs, None, out)?;
                    accs.push(v.expect("loads produce a value"));
                }
            }
        }
        Ok(accs)
    }

    /// Baseline output binding: load current output values for body args
    /// that are actually used.
    fn bind_output_args(
        &mut self,
        idxs: &[Idx],
        out: &mut Vec<Operation>,
    ) -> Result<Vec<Option<ValueId>>, PassError> {
        let n_outs = self.generic.operands.len() - self.num_inputs;
        let body = self.generic.body();
        let u = self.lanes;
        let mut used = Vec::new();
        for oi in 0..n_outs {
            for lane in 0..u {
                let arg = &body.args[(self.num_inputs + oi) * u + lane];
                let mut is_used = false;
                for op in &body.ops {
                    op.walk(&mut |o| {
                        if o.operands.contains(&arg.id) {
                            is_used = true;
                        }
                    });
                }
                used.push(is_used);
            }
        }
        let mut bound = Vec::new();
        for oi in 0..n_outs {
            for lane in 0..u {
                if used[oi * u + lane] {
                    let v = self.emit_output_access(oi, lane, idxs, None, out)?;
                    bound.push(v);
                } else {
                    bound.push(None);
                }
            }
        }
        Ok(bound)
    }

    /// Loads (value: None) or stores (value: Some) one output element.
    /// Returns the loaded value for loads.
    fn emit_output_access(
        &mut self,
        oi: usize,
        lane: usize,
        idxs: &[Idx],
        value: Option<ValueId>,
        out: &mut Vec<Operation>,
    ) -> Result<Option<ValueId>, PassError> {
        let operand = self.generic.operands[self.num_inputs + oi];
        let map = &self.maps[self.num_inputs + oi];
        // Reduced-domain maps index the non-reduction subsequence.
        let point = self.output_point(map, idxs, lane);
        let u = self.lanes;
        let arg_ty = self.generic.body().args[(self.num_inputs + oi) * u].ty.clone();
        if let Some(lane_idx) = self.streams.get(&operand) {
            // Stream access.
            let stream_val = self.ctx.mapped(operand)?;
            match value {
                Some(v) => {
                    out.push(
                        Operation::new(rv::STREAM_WRITE).with_operands([v, stream_val]),
                    );
                    let _ = lane_idx;
                    Ok(None)
                }
                None => Err(PassError::failed(
                    PASS,
                    "output streams cannot be read for accumulator initialization",
                )),
            }
        } else {
            let (shape, elem) = self
                .ctx
                .types
                .get(&operand)
                .and_then(operand_view)
                .ok_or_else(|| PassError::failed(PASS, "output operand is not addressable"))?;
            let shape = view_shape_for_map(&shape, map);
            let flat = map.flatten(&shape);
            let base = self.ctx.mapped(operand)?;
            match value {
                Some(v) => {
                    let wide = self.write_is_wide(&arg_ty);
                    let addr = self.emit_address(base, &flat, &point, elem, out);
                    out.push(rv::fsd(if wide { rv::FSD } else { rv::FSW }, v, addr));
                    Ok(None)
                }
                None => {
                    let wide = self.write_is_wide(&arg_ty);
                    let addr = self.emit_address(base, &flat, &point, elem, out);
                    let (ld, v) = rv::fld(
                        self.ctx.ids,
                        if wide { rv::FLD } else { rv::FLW },
                        addr,
                    );
                    out.push(ld);
                    Ok(Some(v))
                }
            }
        }
    }

    fn write_is_wide(&self, arg_ty: &Type) -> bool {
        match arg_ty {
            Type::F64 => true,
            Type::F32x2 => self.packed_output,
            _ => false,
        }
    }

    /// Packed accumulators writing a scalar output reduce lanes first: the
    /// result register is initialized to zero and the horizontal sum
    /// accumulates into it.
    fn scalarize_if_needed(
        &mut self,
        v: ValueId,
        arg_ty: &Type,
        operand: ValueId,
        out: &mut Vec<Operation>,
    ) -> Result<ValueId, PassError> {
        let out_elem_f32 = match self.ctx.types.get(&operand) {
            Some(Type::MemRef { elem, .. }) => **elem == Type::F32,
            Some(Type::WriteStream(elem)) => **elem == Type::F32,
            _ => false,
        };
        if *arg_ty == Type::F32x2 && out_elem_f32 && !self.packed_output {
            let zero = *self
                .ctx
                .constants
                .get(&0)
                .ok_or_else(|| PassError::failed(PASS, "zero constant not materialized"))?;
            let (init_op, init) = rv::unary(self.ctx.ids, rv::FMV_D, zero, Type::FpReg(None));
            out.push(init_op);
            let (sum, s) = rv::binary(self.ctx.ids, rv::VFSUM_S, v, init, Type::FpReg(None));
            out.push(sum);
            Ok(s)
        } else {
            Ok(v)
        }
    }

    /// Two phases: reduce every lane's value first (packed accumulators
    /// into scalars), then store. All reduced results are live across the
    /// store sequence.
    fn emit_writes(
        &mut self,
        idxs: &[Idx],
        results: &[ValueId],
        out: &mut Vec<Operation>,
    ) -> Result<(), PassError> {
        let n_outs = self.generic.operands.len() - self.num_inputs;
        let mut reduced = Vec::new();
        for oi in 0..n_outs {
            let u = self.lanes;
            let arg_ty = self.generic.body().args[(self.num_inputs + oi) * u].ty.clone();
            let operand = self.generic.operands[self.num_inputs + oi];
            for lane in 0..u {
                let v = results[oi * u + lane];
                reduced.push(self.scalarize_if_needed(v, &arg_ty, operand, out)?);
            }
        }
        // Explicit stores: all addresses first, then the stores, so the
        // reduced values retire while addresses compute.
        let mut addrs: Vec<Option<ValueId>> = Vec::new();
        for oi in 0..n_outs {
            for lane in 0..self.lanes {
                let operand = self.generic.operands[self.num_inputs + oi];
                if self.streams.contains_key(&operand) {
                    addrs.push(None);
                } else {
                    addrs.push(Some(self.emit_output_address(oi, lane, idxs, out)?));
                }
            }
        }
        for oi in 0..n_outs {
            for lane in 0..self.lanes {
                let v = reduced[oi * self.lanes + lane];
                match addrs[oi * self.lanes + lane] {
                    Some(addr) => self.emit_store(oi, v, addr, out)?,
                    None => {
                        self.emit_output_access(oi, lane, idxs, Some(v), out)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn emit_output_address(
        &mut self,
        oi: usize,
        lane: usize,
        idxs: &[Idx],
        out: &mut Vec<Operation>,
    ) -> Result<ValueId, PassError> {
        let operand = self.generic.operands[self.num_inputs + oi];
        let map = &self.maps[self.num_inputs + oi];
        let point = self.output_point(map, idxs, lane);
        let (shape, elem) = self
            .ctx
            .types
            .get(&operand)
            .and_then(operand_view)
            .ok_or_else(|| PassError::failed(PASS, "output operand is not addressable"))?;
        let shape = view_shape_for_map(&shape, map);
        let flat = map.flatten(&shape);
        let base = self.ctx.mapped(operand)?;
        Ok(self.emit_address(base, &flat, &point, elem, out))
    }

    fn emit_store(
        &mut self,
        oi: usize,
        v: ValueId,
        addr: ValueId,
        out: &mut Vec<Operation>,
    ) -> Result<(), PassError> {
        let u = self.lanes;
        let arg_ty = self.generic.body().args[(self.num_inputs + oi) * u].ty.clone();
        let wide = self.write_is_wide(&arg_ty);
        out.push(rv::fsd(if wide { rv::FSD } else { rv::FSW }, v, addr));
        Ok(())
    }

    fn output_point(&self, map: &crate::ir::affine::AffineMap, idxs: &[Idx], lane: usize) -> Vec<Idx> {
        let full = map.arity == self.bounds.len();
        let mut point = Vec::new();
        if full {
            point.extend_from_slice(idxs);
            if let Some(last) = point.last_mut() {
                if self.dims.last() == Some(&DimKind::Interleaved) {
                    *last = Idx::Const(lane as i64);
                }
            }
        } else {
            for d in &self.non_reduction {
                point.push(if self.dims[*d] == DimKind::Interleaved {
                    Idx::Const(lane as i64)
                } else {
                    idxs[*d]
                });
            }
        }
        point
    }

    /// One instantiation of the body: reads inputs for every lane, clones
    /// the computation with multiply-add fusion, returns the yielded values
    /// (new accumulators), ordered output-major then lane.
    fn instantiate_body(
        &mut self,
        idxs: &[Idx],
        accs: &[impl AccBinding],
        out: &mut Vec<Operation>,
    ) -> Result<Vec<ValueId>, PassError> {
        let body = self.generic.body();
        let u = self.lanes;
        let mut binding: HashMap<ValueId, ValueId> = HashMap::new();

        for i in 0..self.num_inputs {
            for lane in 0..u {
                let arg = &body.args[i * u + lane];
                let value = self.read_input(i, lane, idxs, &arg.ty, out)?;
                binding.insert(arg.id, value);
            }
        }
        let n_outs = self.generic.operands.len() - self.num_inputs;
        for oi in 0..n_outs {
            for lane in 0..u {
                let arg = &body.args[(self.num_inputs + oi) * u + lane];
                if let Some(v) = accs[oi * u + lane].value() {
                    binding.insert(arg.id, v);
                }
            }
        }

        let mut yields = Vec::new();
        for op in &body.ops {
            match op.name.as_str() {
                CONSTANT => {
                    let bits = constant_bits(
                        op.attr("value").and_then(|a| a.as_float()).unwrap_or(0.0),
                        &op.results[0].ty,
                    );
                    let v = *self
                        .ctx
                        .constants
                        .get(&bits)
                        .ok_or_else(|| PassError::failed(PASS, "constant not materialized"))?;
                    binding.insert(op.results[0].id, v);
                }
                MULF if self.fused.contains_key(&op.results[0].id) => {
                    // Folded into the consuming addf.
                }
                MS_YIELD => {
                    for v in &op.operands {
                        let mapped = lookup(&binding, &self.ctx.vmap, *v).ok_or_else(|| {
                            PassError::failed(PASS, "yield of an unbound value")
                        })?;
                        yields.push(mapped);
                    }
                }
                ADDF | SUBF | MAXF | MULF => {
                    let ty = &op.results[0].ty;
                    // Fused multiply-add.
                    if op.name == ADDF {
                        let fused_side = op
                            .operands
                            .iter()
                            .position(|v| self.fused.contains_key(v));
                        if let Some(side) = fused_side {
                            let (ma, mb) = self.fused[&op.operands[side]];
                            let other = op.operands[1 - side];
                            let a = lookup(&binding, &self.ctx.vmap, ma)
                                .ok_or_else(|| PassError::failed(PASS, "unbound fma operand"))?;
                            let b = lookup(&binding, &self.ctx.vmap, mb)
                                .ok_or_else(|| PassError::failed(PASS, "unbound fma operand"))?;
                            let c = lookup(&binding, &self.ctx.vmap, other)
                                .ok_or_else(|| PassError::failed(PASS, "unbound fma operand"))?;
                            let name = match ty {
                                Type::F64 => rv::FMADD_D,
                                Type::F32 => rv::FMADD_S,
                                Type::F32x2 => rv::VFMAC_S,
                                _ => return Err(PassError::failed(PASS, "bad fma type")),
                            };
                            let (fma, v) = rv::fmadd(self.ctx.ids, name, a, b, c);
                            out.push(fma);
                            binding.insert(op.results[0].id, v);
                            continue;
                        }
                    }
                    let name = match (op.name.as_str(), ty) {
                        (ADDF, Type::F64) => rv::FADD_D,
                        (ADDF, Type::F32) => rv::FADD_S,
                        (ADDF, Type::F32x2) => rv::VFADD_S,
                        (SUBF, Type::F64) => rv::FSUB_D,
                        (MULF, Type::F64) => rv::FMUL_D,
                        (MULF, Type::F32) => rv::FMUL_S,
                        (MULF, Type::F32x2) => rv::VFMUL_S,
                        (MAXF, Type::F64) => rv::FMAX_D,
                        (MAXF, Type::F32) => rv::FMAX_S,
                        (MAXF, Type::F32x2) => rv::VFMAX_S,
                        (n, t) => {
                            return Err(PassError::failed(
                                PASS,
                                format!("no instruction for {n} on {t}"),
                            ))
                        }
                    };
                    let a = lookup(&binding, &self.ctx.vmap, op.operands[0])
                        .ok_or_else(|| PassError::failed(PASS, "unbound operand"))?;
                    let b = lookup(&binding, &self.ctx.vmap, op.operands[1])
                        .ok_or_else(|| PassError::failed(PASS, "unbound operand"))?;
                    let (ins, v) = rv::binary(self.ctx.ids, name, a, b, Type::FpReg(None));
                    out.push(ins);
                    binding.insert(op.results[0].id, v);
                }
                other => {
                    return Err(PassError::failed(
                        PASS,
                        format!("unsupported operation {other} in generic body"),
                    ))
                }
            }
        }
        Ok(yields)
    }

    fn read_input(
        &mut self,
        i: usize,
        lane: usize,
        idxs: &[Idx],
        arg_ty: &Type,
        out: &mut Vec<Operation>,
    ) -> Result<ValueId, PassError> {
        let operand = self.generic.operands[i];
        if let Some(stream_lane) = self.streams.get(&operand) {
            let stream_val = self.ctx.mapped(operand)?;
            let mut read = Operation::new(rv::STREAM_READ).with_operands([stream_val]);
            let v = read.add_result(
                self.ctx.ids,
                Type::FpReg(Some(crate::ir::types::stream_register(*stream_lane))),
            );
            out.push(read);
            return Ok(v);
        }
        match self.ctx.types.get(&operand) {
            Some(Type::MemRef { .. }) => {
                let map = &self.maps[i];
                let (shape, elem) = self
                    .ctx
                    .types
                    .get(&operand)
                    .and_then(operand_view)
                    .unwrap();
                let shape = view_shape_for_map(&shape, map);
                let flat = map.flatten(&shape);
                let mut point = idxs.to_vec();
                if self.dims.last() == Some(&DimKind::Interleaved) {
                    *point.last_mut().unwrap() = Idx::Const(lane as i64);
                }
                let base = self.ctx.mapped(operand)?;
                let addr = self.emit_address(base, &flat, &point, elem, out);
                let wide = matches!(arg_ty, Type::F64 | Type::F32x2);
                let (ld, v) =
                    rv::fld(self.ctx.ids, if wide { rv::FLD } else { rv::FLW }, addr);
                out.push(ld);
                Ok(v)
            }
            // Scalar operand: the same value feeds every lane.
            _ => self.ctx.mapped(operand),
        }
    }

    /// Naive address computation: accumulate each non-constant term, then
    /// scale to bytes and add the base pointer.
    fn emit_address(
        &mut self,
        base: ValueId,
        flat: &AffineExpr,
        point: &[Idx],
        elem_bytes: u32,
        out: &mut Vec<Operation>,
    ) -> ValueId {
        let mut konst = flat.constant;
        let mut terms = Vec::new();
        for (d, coef) in flat.coefs.iter().enumerate() {
            if *coef == 0 {
                continue;
            }
            match point[d] {
                Idx::Const(c) => konst += coef * c,
                Idx::Reg(r) => terms.push((*coef, r)),
            }
        }
        let shift = match elem_bytes {
            8 => 3,
            4 => 2,
            _ => unreachable!("element width {elem_bytes}"),
        };
        let (li0, mut acc) = rv::li(self.ctx.ids, 0);
        out.push(li0);
        for (coef, reg) in terms {
            if coef == 1 {
                let (add, v) = rv::binary(self.ctx.ids, rv::ADD, acc, reg, Type::IntReg(None));
                out.push(add);
                acc = v;
            } else {
                let (li, c) = rv::li(self.ctx.ids, coef);
                out.push(li);
                let (mul, t) = rv::binary(self.ctx.ids, rv::MUL, reg, c, Type::IntReg(None));
                out.push(mul);
                let (add, v) = rv::binary(self.ctx.ids, rv::ADD, acc, t, Type::IntReg(None));
                out.push(add);
                acc = v;
            }
        }
        if konst != 0 {
            let (addi, v) = rv::addi(self.ctx.ids, acc, konst);
            out.push(addi);
            acc = v;
        }
        let (sll, scaled) = rv::slli(self.ctx.ids, acc, shift);
        out.push(sll);
        let (add, addr) = rv::binary(self.ctx.ids, rv::ADD, scaled, base, Type::IntReg(None));
        out.push(add);
        acc = addr;
        acc
    }
}

fn lookup(
    binding: &HashMap<ValueId, ValueId>,
    vmap: &HashMap<ValueId, ValueId>,
    v: ValueId,
) -> Option<ValueId> {
    binding.get(&v).copied().or_else(|| vmap.get(&v).copied())
}

/// The multiply-add fusion map, shared with the high-level evaluator so both
/// routes round identically.
pub fn fusions_for_eval(body: &Block) -> HashMap<ValueId, (ValueId, ValueId)> {
    find_fusions(body)
}

/// Accumulator bindings: plain values for the reduction path, optional for
/// the baseline path (unused output args are left unbound).
trait AccBinding {
    fn value(&self) -> Option<ValueId>;
}

impl AccBinding for ValueId {
    fn value(&self) -> Option<ValueId> {
        Some(*self)
    }
}

impl AccBinding for Option<ValueId> {
    fn value(&self) -> Option<ValueId> {
        *self
    }
}
