//! Lowers `snitch_stream.streaming_region` into explicit stream
//! configuration writes, an enable/disable bracket, and direct uses of the
//! reserved stream registers.
//!
//! Stream reads become non-printing register anchors; a stream write is
//! folded into its producing FP instruction's destination register when the
//! producer sits in the same block with a single use, and becomes an `fmv.d`
//! into the stream register otherwise.

use std::collections::HashMap;

use crate::ir::pass::{Pass, PassError};
use crate::ir::types::{stream_register, Type};
use crate::ir::{Attribute, IdGen, Module, Operation, ValueId};
use crate::rv;
use crate::snitch::MAX_PATTERN_RANK;

pub struct LowerStreamingRegions;

impl Pass for LowerStreamingRegions {
    fn name(&self) -> &str {
        "lower-streaming-regions"
    }

    fn run(&self, module: &mut Module) -> Result<(), PassError> {
        let mut ids = std::mem::take(&mut module.ids);
        let result = lower_in_op(&mut module.top, &mut ids);
        module.ids = ids;
        result
    }
}

fn lower_in_op(op: &mut Operation, ids: &mut IdGen) -> Result<(), PassError> {
    for region in &mut op.regions {
        for block in &mut region.blocks {
            for inner in &mut block.ops {
                lower_in_op(inner, ids)?;
            }
            let mut i = 0;
            while i < block.ops.len() {
                if block.ops[i].name == rv::STREAMING_REGION {
                    let region_op = block.ops.remove(i);
                    let replacement = lower_region(region_op, ids)?;
                    let n = replacement.len();
                    block.ops.splice(i..i, replacement);
                    i += n;
                } else {
                    i += 1;
                }
            }
        }
    }
    Ok(())
}

fn lower_region(mut region_op: Operation, ids: &mut IdGen) -> Result<Vec<Operation>, PassError> {
    const PASS: &str = "lower-streaming-regions";
    let patterns = region_op
        .attr("patterns")
        .and_then(|a| a.as_stride_patterns())
        .ok_or_else(|| PassError::failed(PASS, "streaming region without resolved patterns"))?
        .to_vec();
    let reads = region_op
        .int_attr("ins")
        .ok_or_else(|| PassError::failed(PASS, "streaming region without ins attribute"))?
        as usize;
    if patterns.len() > crate::ir::types::STREAM_REGISTER_COUNT {
        return Err(PassError::failed(
            PASS,
            format!("{} streams exceed the hardware stream count", patterns.len()),
        ));
    }
    let mut out = Vec::new();
    for (lane, pattern) in patterns.iter().enumerate() {
        if pattern.rank() > MAX_PATTERN_RANK {
            return Err(PassError::failed(
                PASS,
                format!(
                    "stream pattern rank {} exceeds hardware maximum {}",
                    pattern.rank(),
                    MAX_PATTERN_RANK
                ),
            ));
        }
        for (d, bound) in pattern.ub.iter().enumerate() {
            let (li, v) = rv::li(ids, *bound);
            out.push(li);
            out.push(
                Operation::new(rv::SCFG_BOUND)
                    .with_operands([v])
                    .with_attr("stream", Attribute::Int(lane as i64))
                    .with_attr("dim", Attribute::Int(d as i64)),
            );
        }
        for (d, stride) in pattern.strides.iter().enumerate() {
            let (li, v) = rv::li(ids, *stride);
            out.push(li);
            out.push(
                Operation::new(rv::SCFG_STRIDE)
                    .with_operands([v])
                    .with_attr("stream", Attribute::Int(lane as i64))
                    .with_attr("dim", Attribute::Int(d as i64)),
            );
        }
        if pattern.repeat > 1 {
            let (li, v) = rv::li(ids, pattern.repeat);
            out.push(li);
            out.push(
                Operation::new(rv::SCFG_REP)
                    .with_operands([v])
                    .with_attr("stream", Attribute::Int(lane as i64)),
            );
        }
        out.push(
            Operation::new(rv::SCFG_BASE)
                .with_operands([region_op.operands[lane]])
                .with_attr("stream", Attribute::Int(lane as i64))
                .with_attr("write", Attribute::Bool(lane >= reads)),
        );
    }
    out.push(Operation::new(rv::SSR_ENABLE));

    // Rewrite the body: map stream block args to lanes, then eliminate
    // read/write ops.
    let body = region_op.regions.remove(0).blocks.remove(0);
    let lane_of: HashMap<ValueId, usize> = body
        .args
        .iter()
        .enumerate()
        .map(|(i, a)| (a.id, i))
        .collect();
    let mut ops = body.ops;
    let mut use_counts: HashMap<ValueId, usize> = HashMap::new();
    for op in &ops {
        op.walk(&mut |o| {
            for v in &o.operands {
                *use_counts.entry(*v).or_default() += 1;
            }
        });
    }
    rewrite_stream_ops(&mut ops, &lane_of, &use_counts, ids)?;
    out.extend(ops);
    out.push(Operation::new(rv::SSR_DISABLE));
    Ok(out)
}

fn rewrite_stream_ops(
    ops: &mut Vec<Operation>,
    lane_of: &HashMap<ValueId, usize>,
    use_counts: &HashMap<ValueId, usize>,
    ids: &mut IdGen,
) -> Result<(), PassError> {
    const PASS: &str = "lower-streaming-regions";
    let mut i = 0;
    while i < ops.len() {
        match ops[i].name.as_str() {
            rv::STREAM_READ => {
                let lane = *lane_of
                    .get(&ops[i].operands[0])
                    .ok_or_else(|| PassError::failed(PASS, "read of an unknown stream"))?;
                let mut anchor = Operation::new(rv::GET_REGISTER);
                anchor.results = ops[i].results.clone();
                anchor.results[0].ty = Type::FpReg(Some(stream_register(lane)));
                ops[i] = anchor;
                i += 1;
            }
            rv::STREAM_WRITE => {
                let value = ops[i].operands[0];
                let lane = *lane_of
                    .get(&ops[i].operands[1])
                    .ok_or_else(|| PassError::failed(PASS, "write to an unknown stream"))?;
                let reg = Type::FpReg(Some(stream_register(lane)));
                // Fold into the producer when it is an FP instruction in this
                // block whose only use is this write.
                let producer = ops[..i].iter_mut().find(|o| {
                    o.results.first().map(|r| r.id) == Some(value)
                });
                let foldable = producer.as_ref().is_some_and(|p| {
                    rv::is_fpu_op(&p.name)
                        && p.results[0].ty.is_unallocated_register()
                        && use_counts.get(&value).copied().unwrap_or(0) == 1
                });
                if foldable {
                    producer.unwrap().results[0].ty = reg;
                    ops.remove(i);
                } else {
                    // Writes have no results; the move's destination carries
                    // the stream register.
                    let mut mv = Operation::new(rv::FMV_D).with_operands([value]);
                    mv.add_result(ids, reg);
                    ops[i] = mv;
                    i += 1;
                }
            }
            _ => {
                // Recurse into nested regions (loop bodies).
                for region in &mut ops[i].regions {
                    for block in &mut region.blocks {
                        rewrite_stream_ops(&mut block.ops, lane_of, use_counts, ids)?;
                    }
                }
                i += 1;
            }
        }
    }
    Ok(())
}
