//! Direct evaluation of high-level modules on byte buffers. Used by tests to
//! check that schedule rewrites preserve semantics, and as an independent
//! route to expected outputs at every pipeline stage.
//!
//! Arithmetic follows the generated code exactly: multiplies feeding a
//! single addition evaluate as fused multiply-adds, f32 lanes evaluate in
//! f32, and max uses the instruction semantics.

use std::collections::HashMap;

use crate::ir::affine::AffineMap;
use crate::ir::{Attribute, Module, Operation, Type, ValueId};
use crate::sim::fpmath;

use super::{
    operand_view, view_shape_for_map, GenericView, ADDF, CONSTANT, GENERIC, LINALG_FILL, MAXF,
    MS_STREAMING_REGION, MS_YIELD, MULF, SUBF,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Val {
    F64(f64),
    F32(f32),
    F32x2([f32; 2]),
}

impl Val {
    fn splat(ty: &Type, v: f64) -> Val {
        match ty {
            Type::F32 => Val::F32(v as f32),
            Type::F32x2 => Val::F32x2([v as f32; 2]),
            _ => Val::F64(v),
        }
    }
}

/// One function argument buffer (row-major bytes) or scalar.
pub enum ArgValue {
    Buffer(Vec<u8>),
    Scalar(f64),
}

/// Evaluates the first function of the module over the given argument
/// values; returns the final buffer contents.
pub fn eval_module(module: &Module, args: Vec<ArgValue>) -> Result<Vec<Vec<u8>>, String> {
    let func = module.top.regions[0]
        .blocks
        .iter()
        .flat_map(|b| &b.ops)
        .find(|op| op.name == super::FUNC)
        .ok_or("module has no function")?;
    let block = &func.regions[0].blocks[0];
    if block.args.len() != args.len() {
        return Err(format!(
            "function takes {} arguments, got {}",
            block.args.len(),
            args.len()
        ));
    }

    let mut buffers: Vec<Vec<u8>> = Vec::new();
    let mut env: HashMap<ValueId, EnvEntry> = HashMap::new();
    for (arg, def) in args.into_iter().zip(&block.args) {
        match arg {
            ArgValue::Buffer(b) => {
                env.insert(def.id, EnvEntry::Buffer(buffers.len()));
                buffers.push(b);
            }
            ArgValue::Scalar(s) => {
                env.insert(def.id, EnvEntry::Scalar(s));
            }
        }
    }

    let types = module.top.def_types();
    for op in &block.ops {
        eval_op(op, &types, &mut env, &mut buffers)?;
    }
    Ok(buffers)
}

#[derive(Clone, Copy)]
enum EnvEntry {
    Buffer(usize),
    Scalar(f64),
}

fn eval_op(
    op: &Operation,
    types: &HashMap<ValueId, Type>,
    env: &mut HashMap<ValueId, EnvEntry>,
    buffers: &mut [Vec<u8>],
) -> Result<(), String> {
    match op.name.as_str() {
        CONSTANT => {
            let v = op
                .attr("value")
                .and_then(|a| a.as_float())
                .ok_or("constant without value")?;
            env.insert(op.results[0].id, EnvEntry::Scalar(v));
            Ok(())
        }
        LINALG_FILL => {
            let value = match env.get(&op.operands[0]) {
                Some(EnvEntry::Scalar(s)) => *s,
                _ => return Err("fill value is not a scalar".into()),
            };
            let EnvEntry::Buffer(b) = env[&op.operands[1]] else {
                return Err("fill target is not a buffer".into());
            };
            let elem = match types.get(&op.operands[1]) {
                Some(Type::MemRef { elem, .. }) => (**elem).clone(),
                _ => return Err("fill target is not a memref".into()),
            };
            let buf = &mut buffers[b];
            match elem {
                Type::F32 => {
                    for chunk in buf.chunks_exact_mut(4) {
                        chunk.copy_from_slice(&(value as f32).to_le_bytes());
                    }
                }
                _ => {
                    for chunk in buf.chunks_exact_mut(8) {
                        chunk.copy_from_slice(&value.to_le_bytes());
                    }
                }
            }
            Ok(())
        }
        MS_STREAMING_REGION => {
            // Transparent: bind stream args to the underlying buffers.
            let body = op.body();
            for (arg, operand) in body.args.iter().zip(&op.operands) {
                let entry = *env.get(operand).ok_or("unbound streamed operand")?;
                env.insert(arg.id, entry);
            }
            for inner in &body.ops {
                eval_op(inner, types, env, buffers)?;
            }
            Ok(())
        }
        GENERIC | super::LINALG_GENERIC => eval_generic(op, types, env, buffers),
        super::RETURN => Ok(()),
        other => Err(format!("cannot evaluate {other}")),
    }
}

/// Buffer element access helpers working in "element units" of the map.
fn load_elem(buf: &[u8], index: i64, ty: &Type) -> Val {
    match ty {
        Type::F32 => {
            let o = index as usize * 4;
            Val::F32(f32::from_le_bytes(buf[o..o + 4].try_into().unwrap()))
        }
        Type::F32x2 => {
            let o = index as usize * 4;
            Val::F32x2([
                f32::from_le_bytes(buf[o..o + 4].try_into().unwrap()),
                f32::from_le_bytes(buf[o + 4..o + 8].try_into().unwrap()),
            ])
        }
        _ => {
            let o = index as usize * 8;
            Val::F64(f64::from_le_bytes(buf[o..o + 8].try_into().unwrap()))
        }
    }
}

fn store_elem(buf: &mut [u8], index: i64, v: Val) {
    match v {
        Val::F64(x) => {
            let o = index as usize * 8;
            buf[o..o + 8].copy_from_slice(&x.to_le_bytes());
        }
        Val::F32(x) => {
            let o = index as usize * 4;
            buf[o..o + 4].copy_from_slice(&x.to_le_bytes());
        }
        Val::F32x2(l) => {
            let o = index as usize * 4;
            buf[o..o + 4].copy_from_slice(&l[0].to_le_bytes());
            buf[o + 4..o + 8].copy_from_slice(&l[1].to_le_bytes());
        }
    }
}

fn flat_index(map: &AffineMap, shape: &[u32], point: &[i64]) -> i64 {
    map.flatten(&view_shape_for_map(shape, map)).eval(point)
}

fn eval_generic(
    op: &Operation,
    types: &HashMap<ValueId, Type>,
    env: &mut HashMap<ValueId, EnvEntry>,
    buffers: &mut [Vec<u8>],
) -> Result<(), String> {
    let view = GenericView::of(op).or_else(|| {
        // linalg-level generics lack explicit bounds and are not evaluated
        // directly; ingest first.
        None
    });
    let Some(view) = view else {
        return Err("evaluation requires explicit bounds".into());
    };
    let u = view.interleave_factor() as usize;
    let body = op.body();
    let n_outs = view.num_outputs();
    let scalar_replaced = view.scalar_replaced();
    let inits = view.init_values();

    // Iteration points, last dimension innermost. The interleaved dimension
    // (if any) is the last and indexes lanes.
    let bounds = view.bounds.clone();
    let fused = super::lower::fusions_for_eval(body);

    // Accumulators for scalar-replaced outputs, keyed by the non-reduction
    // point.
    let mut accs: HashMap<(usize, Vec<i64>), Val> = HashMap::new();
    let non_red = view.non_reduction_dims();

    let mut point = vec![0i64; bounds.len()];
    'iter: loop {
        // Bind body arguments for this point. The interleaved dimension is
        // evaluated lane by lane through the replicated argument groups, so
        // the body is instantiated once per point of the non-interleaved
        // space; `point` carries the lane in its last slot.
        let lanes: Vec<i64> = if u > 1 {
            (0..u as i64).collect()
        } else {
            vec![point.last().copied().unwrap_or(0)]
        };
        let interleaved = u > 1;

        let mut binding: HashMap<ValueId, Val> = HashMap::new();
        for i in 0..view.num_inputs {
            for (l, lane) in lanes.iter().enumerate() {
                let arg = &body.args[i * u + l];
                let mut p = point.clone();
                if interleaved {
                    *p.last_mut().unwrap() = *lane;
                }
                let value = match env.get(&op.operands[i]) {
                    Some(EnvEntry::Scalar(s)) => Val::splat(&arg.ty, *s),
                    Some(EnvEntry::Buffer(b)) => {
                        let b = *b;
                        let (shape, _) = types
                            .get(&op.operands[i])
                            .and_then(operand_view)
                            .ok_or("input buffer lost its type")?;
                        let idx = flat_index(&view.maps[i], &shape, &p);
                        load_elem(&buffers[b], idx, &arg.ty)
                    }
                    None => {
                        // Stream operand: resolved transparently by the
                        // streaming region wrapper.
                        return Err("unbound generic input".into());
                    }
                };
                binding.insert(arg.id, value);
            }
        }
        for oi in 0..n_outs {
            for (l, lane) in lanes.iter().enumerate() {
                let arg = &body.args[(view.num_inputs + oi) * u + l];
                let mut p = point.clone();
                if interleaved {
                    *p.last_mut().unwrap() = *lane;
                }
                let key_point: Vec<i64> = non_red.iter().map(|d| p[*d]).collect();
                let value = if scalar_replaced {
                    match accs.get(&(oi, key_point.clone())) {
                        Some(v) => *v,
                        None => match &inits {
                            Some(is) => Val::splat(&arg.ty, is[oi]),
                            None => {
                                // First touch reads the buffer.
                                let operand = op.operands[view.num_inputs + oi];
                                let EnvEntry::Buffer(b) =
                                    *env.get(&operand).ok_or("unbound output")?
                                else {
                                    return Err("output is not a buffer".into());
                                };
                                let (shape, _) = types
                                    .get(&operand)
                                    .and_then(operand_view)
                                    .ok_or("output buffer lost its type")?;
                                let idx =
                                    flat_index(&view.maps[view.num_inputs + oi], &shape, &key_point);
                                load_elem(&buffers[b], idx, &arg.ty)
                            }
                        },
                    }
                } else {
                    let operand = op.operands[view.num_inputs + oi];
                    let EnvEntry::Buffer(b) = *env.get(&operand).ok_or("unbound output")? else {
                        return Err("output is not a buffer".into());
                    };
                    let (shape, _) = types
                        .get(&operand)
                        .and_then(operand_view)
                        .ok_or("output buffer lost its type")?;
                    let idx = flat_index(&view.maps[view.num_inputs + oi], &shape, &p);
                    load_elem(&buffers[b], idx, &arg.ty)
                };
                binding.insert(arg.id, value);
            }
        }

        // Evaluate the body.
        let mut yields: Vec<Val> = Vec::new();
        for inner in &body.ops {
            match inner.name.as_str() {
                CONSTANT => {
                    let v = inner.attr("value").and_then(|a| a.as_float()).unwrap_or(0.0);
                    binding.insert(inner.results[0].id, Val::splat(&inner.results[0].ty, v));
                }
                MULF if fused.contains_key(&inner.results[0].id) => {}
                ADDF | SUBF | MAXF | MULF => {
                    let get = |v: &ValueId| -> Result<Val, String> {
                        binding.get(v).copied().ok_or("unbound body value".into())
                    };
                    let result = if inner.name == ADDF {
                        let side = inner.operands.iter().position(|v| fused.contains_key(v));
                        if let Some(side) = side {
                            let (ma, mb) = fused[&inner.operands[side]];
                            let other = inner.operands[1 - side];
                            fpmath::val_fma(get(&ma)?, get(&mb)?, get(&other)?)
                        } else {
                            fpmath::val_bin(&inner.name, get(&inner.operands[0])?, get(&inner.operands[1])?)?
                        }
                    } else {
                        fpmath::val_bin(&inner.name, get(&inner.operands[0])?, get(&inner.operands[1])?)?
                    };
                    binding.insert(inner.results[0].id, result);
                }
                MS_YIELD | super::LINALG_YIELD => {
                    for v in &inner.operands {
                        yields.push(*binding.get(v).ok_or("unbound yield")?);
                    }
                }
                other => return Err(format!("cannot evaluate body op {other}")),
            }
        }

        // Commit results.
        for oi in 0..n_outs {
            for (l, lane) in lanes.iter().enumerate() {
                let v = yields[oi * lanes.len() + l];
                let mut p = point.clone();
                if interleaved {
                    *p.last_mut().unwrap() = *lane;
                }
                if scalar_replaced {
                    let key: Vec<i64> = non_red.iter().map(|d| p[*d]).collect();
                    accs.insert((oi, key), v);
                } else {
                    let operand = op.operands[view.num_inputs + oi];
                    let EnvEntry::Buffer(b) = env[&operand] else {
                        return Err("output is not a buffer".into());
                    };
                    let (shape, _) = types
                        .get(&operand)
                        .and_then(operand_view)
                        .ok_or("output buffer lost its type")?;
                    let idx = flat_index(&view.maps[view.num_inputs + oi], &shape, &p);
                    store_elem(&mut buffers[b], idx, v);
                }
            }
        }

        // Advance, skipping the interleaved dimension (handled as lanes).
        let upto = if interleaved {
            bounds.len() - 1
        } else {
            bounds.len()
        };
        let mut d = upto;
        loop {
            if d == 0 {
                break 'iter;
            }
            d -= 1;
            point[d] += 1;
            if point[d] < bounds[d] {
                break;
            }
            point[d] = 0;
        }
    }

    // Write back scalar-replaced accumulators.
    if scalar_replaced {
        for oi in 0..n_outs {
            let operand = op.operands[view.num_inputs + oi];
            let EnvEntry::Buffer(b) = env[&operand] else {
                return Err("output is not a buffer".into());
            };
            let (shape, _) = types
                .get(&operand)
                .and_then(operand_view)
                .ok_or("output buffer lost its type")?;
            let out_elem = match types.get(&operand) {
                Some(Type::MemRef { elem, .. }) => (**elem).clone(),
                _ => Type::F64,
            };
            let packed = matches!(op.attr("packed"), Some(Attribute::Bool(true)));
            let mut entries: Vec<(&(usize, Vec<i64>), &Val)> =
                accs.iter().filter(|((o, _), _)| *o == oi).collect();
            entries.sort_by(|a, b| a.0 .1.cmp(&b.0 .1));
            for ((_, key), v) in entries {
                let idx = flat_index(&view.maps[view.num_inputs + oi], &shape, key);
                // Packed accumulators into scalar outputs reduce lanes.
                let stored = match (*v, &out_elem, packed) {
                    (Val::F32x2(l), Type::F32, false) => Val::F32(l[0] + l[1]),
                    (other, _, _) => other,
                };
                store_elem(&mut buffers[b], idx, stored);
            }
        }
    }
    Ok(())
}
