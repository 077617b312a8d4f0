//! Separates data access from execution: affine-accessed operands become
//! stream patterns feeding the computation through stream values, leaving
//! everything else on the explicit load/store path.
//!
//! An input is streamable when the hardware can deliver it: 64-bit element
//! view and a canonical pattern of rank at most four. The output joins only
//! when it is write-only (its body argument is unused, or the accumulator
//! initializes from a fused constant). The schedule is final by this point,
//! so patterns follow the iteration order exactly.

use crate::ir::attr::AffinePattern;
use crate::ir::pass::{Pass, PassError};
use crate::ir::{Attribute, Block, IdGen, Module, Operation, Region, Type, ValueId};
use crate::snitch::{canonicalize_pattern, pattern_from_affine, MAX_PATTERN_RANK};

use super::{operand_view, view_shape_for_map, GenericView, GENERIC, MS_STREAMING_REGION};

pub struct Streamify;

impl Pass for Streamify {
    fn name(&self) -> &str {
        "streamify"
    }

    fn consumes(&self) -> &[&str] {
        &["memref_stream"]
    }

    fn run(&self, module: &mut Module) -> Result<(), PassError> {
        let types = module.top.def_types();
        let mut ids = std::mem::take(&mut module.ids);
        module.top.walk_mut(&mut |op| {
            if op.name != super::FUNC {
                return;
            }
            let block = &mut op.regions[0].blocks[0];
            let mut i = 0;
            while i < block.ops.len() {
                if block.ops[i].name == GENERIC {
                    if let Some(region) = wrap_generic(&block.ops[i], &types, &mut ids) {
                        block.ops[i] = region;
                    }
                }
                i += 1;
            }
        });
        module.ids = ids;
        Ok(())
    }
}

/// Delivered element width of an operand as seen by the body.
fn stream_elem_width(arg_ty: &Type) -> Option<u32> {
    match arg_ty {
        Type::F64 | Type::F32x2 => Some(8),
        _ => None,
    }
}

fn wrap_generic(
    g: &Operation,
    types: &std::collections::HashMap<ValueId, Type>,
    ids: &mut IdGen,
) -> Option<Operation> {
    let view = GenericView::of(g)?;
    let u = view.interleave_factor() as usize;
    let body = g.body();

    let mut patterns: Vec<AffinePattern> = Vec::new();
    let mut streamed: Vec<(usize, Type)> = Vec::new(); // operand index, stream type

    for i in 0..view.num_inputs {
        if streamed.len() == crate::ir::types::STREAM_REGISTER_COUNT {
            break;
        }
        let operand = g.operands[i];
        let Some((shape, elem_bytes)) = types.get(&operand).and_then(operand_view) else {
            continue; // scalar input
        };
        let arg_ty = &body.args[i * u].ty;
        if stream_elem_width(arg_ty).is_none() {
            continue;
        }
        let pattern = AffinePattern {
            ub: view.bounds.clone(),
            map: view.maps[i].clone(),
        };
        if !pattern_fits(&pattern, &shape, elem_bytes) {
            continue;
        }
        let elem = match types.get(&operand) {
            Some(Type::MemRef { elem, .. }) => (**elem).clone(),
            _ => continue,
        };
        patterns.push(pattern);
        streamed.push((i, Type::ReadStream(Box::new(elem))));
    }

    // Output: single, write-only, wide enough, room for one more stream.
    'output: {
        if view.num_outputs() != 1 || streamed.len() >= crate::ir::types::STREAM_REGISTER_COUNT
        {
            break 'output;
        }
        let oi = view.num_inputs;
        let operand = g.operands[oi];
        let Some((shape, elem_bytes)) = types.get(&operand).and_then(operand_view) else {
            break 'output;
        };
        let arg = &body.args[oi * u];
        let mut arg_used = false;
        for op in &body.ops {
            op.walk(&mut |o| {
                if o.operands.contains(&arg.id) {
                    arg_used = true;
                }
            });
        }
        let write_only = !arg_used || view.init_values().is_some();
        if !write_only {
            break 'output;
        }
        // Written element width: packed pair stores are 64-bit, a packed
        // accumulator reduced into a scalar f32 output is 32-bit.
        let packed_out = matches!(g.attr("packed"), Some(Attribute::Bool(true)));
        let wide = match arg.ty {
            Type::F64 => true,
            Type::F32x2 => packed_out,
            _ => false,
        };
        if !wide {
            break 'output;
        }
        let map = view.maps[oi].clone();
        let ub = if map.arity == view.bounds.len() {
            view.bounds.clone()
        } else {
            view.non_reduction_dims()
                .iter()
                .map(|d| view.bounds[*d])
                .collect()
        };
        let pattern = AffinePattern { ub, map };
        if !pattern_fits(&pattern, &shape, elem_bytes) {
            break 'output;
        }
        let elem = match types.get(&operand) {
            Some(Type::MemRef { elem, .. }) => (**elem).clone(),
            _ => break 'output,
        };
        patterns.push(pattern);
        streamed.push((oi, Type::WriteStream(Box::new(elem))));
    }

    if streamed.is_empty() {
        return None;
    }
    let read_count = streamed
        .iter()
        .filter(|(_, t)| matches!(t, Type::ReadStream(_)))
        .count();

    let mut region_op = Operation::new(MS_STREAMING_REGION)
        .with_attr("patterns", Attribute::Patterns(patterns))
        .with_attr("ins", Attribute::Int(read_count as i64));
    let mut inner = g.clone();
    let mut args = Vec::new();
    for (i, stream_ty) in &streamed {
        region_op.operands.push(g.operands[*i]);
        let def = ids.value(stream_ty.clone());
        inner.operands[*i] = def.id;
        args.push(def);
    }
    region_op.regions.push(Region {
        blocks: vec![Block {
            args,
            ops: vec![inner],
        }],
    });
    Some(region_op)
}

fn pattern_fits(pattern: &AffinePattern, shape: &[u32], elem_bytes: u32) -> bool {
    let shape = view_shape_for_map(shape, &pattern.map);
    match pattern_from_affine(&pattern.ub, &pattern.map, elem_bytes as i64, &shape) {
        Ok((sp, _)) => canonicalize_pattern(&sp).rank() <= MAX_PATTERN_RANK,
        Err(_) => false,
    }
}
