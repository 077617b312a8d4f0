//! Conversion from the shape-implicit `linalg` level to explicit-bounds
//! `memref_stream.generic` operations.

use crate::ir::affine::AffineMap;
use crate::ir::pass::{Pass, PassError};
use crate::ir::{Attribute, Block, IdGen, Module, Operation, Region, Type};

use super::{operand_view, GENERIC, LINALG_FILL, LINALG_GENERIC, LINALG_YIELD, MS_YIELD, PARALLEL};

pub struct IngestLinalg;

impl Pass for IngestLinalg {
    fn name(&self) -> &str {
        "ingest-linalg"
    }

    fn consumes(&self) -> &[&str] {
        &["linalg"]
    }

    fn run(&self, module: &mut Module) -> Result<(), PassError> {
        let types = module.top.def_types();
        let mut ids = std::mem::take(&mut module.ids);
        let mut result = Ok(());
        module.top.walk_mut(&mut |op| {
            if result.is_err() || op.name != super::FUNC {
                return;
            }
            for inner in &mut op.regions[0].blocks[0].ops {
                let converted = match inner.name.as_str() {
                    LINALG_GENERIC => convert_generic(inner, &types),
                    LINALG_FILL => convert_fill(inner, &types, &mut ids),
                    _ => continue,
                };
                match converted {
                    Ok(new) => *inner = new,
                    Err(e) => {
                        result = Err(e);
                        return;
                    }
                }
            }
        });
        module.ids = ids;
        result
    }
}

/// Infers explicit iteration bounds from operand shapes: a map result that
/// is a plain dimension pins that dimension's bound to the shape extent;
/// composite results are range-checked against the pinned bounds.
fn infer_bounds(
    maps: &[AffineMap],
    shapes: &[Option<Vec<u32>>],
    arity: usize,
    hint: Option<&[i64]>,
) -> Result<Vec<i64>, String> {
    let mut bounds = vec![0i64; arity];
    if let Some(hint) = hint {
        for (b, h) in bounds.iter_mut().zip(hint) {
            *b = *h;
        }
    }
    for (map, shape) in maps.iter().zip(shapes) {
        let Some(shape) = shape else { continue };
        if map.exprs.len() != shape.len() {
            return Err(format!(
                "map produces {} indices for an operand of rank {}",
                map.exprs.len(),
                shape.len()
            ));
        }
        for (expr, extent) in map.exprs.iter().zip(shape) {
            let single = expr.constant == 0
                && expr.coefs.iter().filter(|c| **c != 0).count() == 1
                && expr.coefs.contains(&1);
            if single {
                let d = expr.coefs.iter().position(|c| *c == 1).unwrap();
                let pinned = *extent as i64;
                if bounds[d] != 0 && bounds[d] != pinned {
                    return Err(format!(
                        "dimension d{d} pinned to both {} and {}",
                        bounds[d], pinned
                    ));
                }
                bounds[d] = pinned;
            }
        }
    }
    if bounds.iter().any(|b| *b == 0) {
        return Err("iteration bounds not fully determined by operand shapes".to_string());
    }
    // Range-check composite accesses.
    for (map, shape) in maps.iter().zip(shapes) {
        let Some(shape) = shape else { continue };
        for (expr, extent) in map.exprs.iter().zip(shape) {
            let max: i64 = expr.constant
                + expr
                    .coefs
                    .iter()
                    .zip(&bounds)
                    .map(|(c, b)| if *c > 0 { c * (b - 1) } else { 0 })
                    .sum::<i64>();
            let min: i64 = expr.constant
                + expr
                    .coefs
                    .iter()
                    .zip(&bounds)
                    .map(|(c, b)| if *c < 0 { c * (b - 1) } else { 0 })
                    .sum::<i64>();
            if min < 0 || max >= *extent as i64 {
                return Err(format!(
                    "access range {min}..={max} outside operand extent {extent}"
                ));
            }
        }
    }
    Ok(bounds)
}

fn convert_generic(
    op: &Operation,
    types: &std::collections::HashMap<crate::ir::ValueId, Type>,
) -> Result<Operation, PassError> {
    const PASS: &str = "ingest-linalg";
    let maps = op
        .attr("indexing_maps")
        .and_then(|a| a.as_maps())
        .ok_or_else(|| PassError::failed(PASS, "linalg.generic without indexing maps"))?
        .to_vec();
    let iterator_types = op
        .attr("iterator_types")
        .and_then(|a| a.as_strs())
        .ok_or_else(|| PassError::failed(PASS, "linalg.generic without iterator types"))?
        .to_vec();
    let ins = op
        .int_attr("ins")
        .ok_or_else(|| PassError::failed(PASS, "linalg.generic without ins count"))?;
    let arity = iterator_types.len();
    let shapes: Vec<Option<Vec<u32>>> = op
        .operands
        .iter()
        .map(|v| types.get(v).and_then(|t| operand_view(t).map(|(s, _)| s)))
        .collect();
    let hint = op.attr("bounds").and_then(|a| a.as_ints());
    let bounds =
        infer_bounds(&maps, &shapes, arity, hint).map_err(|e| PassError::failed(PASS, e))?;

    let mut new = Operation::new(GENERIC);
    new.operands = op.operands.clone();
    new.set_attr("ins", Attribute::Int(ins));
    new.set_attr("bounds", Attribute::Ints(bounds));
    new.set_attr("indexing_maps", Attribute::Maps(maps));
    new.set_attr(
        "iterator_types",
        Attribute::Strs(iterator_types),
    );
    let mut region = op.regions[0].clone();
    if let Some(term) = region.blocks[0].ops.last_mut() {
        if term.name == LINALG_YIELD {
            term.name = MS_YIELD.to_string();
        }
    }
    new.regions.push(region);
    Ok(new)
}

/// `linalg.fill` becomes an all-parallel generic writing its scalar input.
fn convert_fill(
    op: &Operation,
    types: &std::collections::HashMap<crate::ir::ValueId, Type>,
    ids: &mut IdGen,
) -> Result<Operation, PassError> {
    const PASS: &str = "ingest-linalg";
    let value = op.operands[0];
    let buf = op.operands[1];
    let (shape, _) = types
        .get(&buf)
        .and_then(operand_view)
        .ok_or_else(|| PassError::failed(PASS, "fill target is not a memref"))?;
    let elem = match types.get(&buf) {
        Some(Type::MemRef { elem, .. }) => (**elem).clone(),
        _ => return Err(PassError::failed(PASS, "fill target is not a memref")),
    };
    let arity = shape.len();
    let bounds: Vec<i64> = shape.iter().map(|d| *d as i64).collect();

    let mut new = Operation::new(GENERIC);
    new.operands = vec![value, buf];
    new.set_attr("ins", Attribute::Int(1));
    new.set_attr("bounds", Attribute::Ints(bounds));
    new.set_attr(
        "indexing_maps",
        Attribute::Maps(vec![
            AffineMap::new(arity, Vec::new()),
            AffineMap::identity(arity),
        ]),
    );
    new.set_attr(
        "iterator_types",
        Attribute::Strs(vec![PARALLEL.to_string(); arity]),
    );
    let value_arg = ids.value(elem.clone());
    let out_arg = ids.value(elem);
    let yield_op = Operation::new(MS_YIELD).with_operands([value_arg.id]);
    new.regions.push(Region {
        blocks: vec![Block {
            args: vec![value_arg, out_arg],
            ops: vec![yield_op],
        }],
    });
    Ok(new)
}
