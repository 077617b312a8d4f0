//! The high-level generic-operation dialect (`memref_stream`) and the
//! scheduling pipeline that rewrites it in place before lowering to the
//! RISC-V dialects: accumulator scalarization, fill fusion, unroll-and-jam,
//! pair vectorization for f32, dimension collapsing, and stream separation.

pub mod eval;
pub mod ingest;
pub mod lower;
pub mod passes;
pub mod streamify;

use crate::ir::affine::AffineMap;
use crate::ir::verify::DialectVerifier;
use crate::ir::{Operation, Type};

pub const FUNC: &str = "func.func";
pub const RETURN: &str = "func.return";

pub const CONSTANT: &str = "arith.constant";
pub const MULF: &str = "arith.mulf";
pub const ADDF: &str = "arith.addf";
pub const SUBF: &str = "arith.subf";
pub const MAXF: &str = "arith.maxf";

pub const LINALG_GENERIC: &str = "linalg.generic";
pub const LINALG_FILL: &str = "linalg.fill";
pub const LINALG_YIELD: &str = "linalg.yield";

pub const GENERIC: &str = "memref_stream.generic";
pub const MS_YIELD: &str = "memref_stream.yield";
pub const MS_STREAMING_REGION: &str = "memref_stream.streaming_region";

pub const PARALLEL: &str = "parallel";
pub const REDUCTION: &str = "reduction";
pub const INTERLEAVED: &str = "interleaved";

/// Reduction dimensions with extents up to this bound are fully unrolled
/// into the loop body instead of materialized as loops.
pub const REDUCTION_UNROLL_LIMIT: i64 = 4;

/// A read-only, validated view of a `memref_stream.generic`.
pub struct GenericView<'a> {
    pub op: &'a Operation,
    pub bounds: Vec<i64>,
    pub maps: Vec<AffineMap>,
    pub iterator_types: Vec<String>,
    pub num_inputs: usize,
}

impl<'a> GenericView<'a> {
    pub fn of(op: &'a Operation) -> Option<GenericView<'a>> {
        if op.name != GENERIC {
            return None;
        }
        let bounds = op.attr("bounds")?.as_ints()?.to_vec();
        let maps = op.attr("indexing_maps")?.as_maps()?.to_vec();
        let iterator_types = op.attr("iterator_types")?.as_strs()?.to_vec();
        let num_inputs = op.int_attr("ins")? as usize;
        Some(GenericView {
            op,
            bounds,
            maps,
            iterator_types,
            num_inputs,
        })
    }

    pub fn num_outputs(&self) -> usize {
        self.op.operands.len() - self.num_inputs
    }

    pub fn reduction_dims(&self) -> Vec<usize> {
        self.iterator_types
            .iter()
            .enumerate()
            .filter(|(_, t)| *t == REDUCTION)
            .map(|(d, _)| d)
            .collect()
    }

    /// Dimensions of the output iteration space: everything but reductions,
    /// in bounds order (the interleaved dimension stays last).
    pub fn non_reduction_dims(&self) -> Vec<usize> {
        self.iterator_types
            .iter()
            .enumerate()
            .filter(|(_, t)| *t != REDUCTION)
            .map(|(d, _)| d)
            .collect()
    }

    pub fn interleave_factor(&self) -> i64 {
        self.iterator_types
            .iter()
            .position(|t| t == INTERLEAVED)
            .map(|d| self.bounds[d])
            .unwrap_or(1)
    }

    /// True once output maps range over the non-reduction dimensions only,
    /// i.e. results accumulate in local values rather than memory.
    pub fn scalar_replaced(&self) -> bool {
        let non_red = self.non_reduction_dims().len();
        if non_red == self.bounds.len() {
            return false;
        }
        self.maps[self.num_inputs..]
            .iter()
            .all(|m| m.arity == non_red)
    }

    pub fn init_values(&self) -> Option<Vec<f64>> {
        self.op
            .attr("init_values")
            .and_then(|a| a.as_floats())
            .map(|f| f.to_vec())
    }
}

/// The element view of a generic operand used for address computations:
/// row-major shape in elements plus the element byte width.
pub fn operand_view(ty: &Type) -> Option<(Vec<u32>, u32)> {
    match ty {
        Type::MemRef { elem, shape } => {
            let bytes = elem.elem_bytes()?;
            Some((shape.clone(), bytes))
        }
        _ => None,
    }
}

/// The shape a map's results index into: a single-result map addresses the
/// operand as flat storage.
pub fn view_shape_for_map(shape: &[u32], map: &AffineMap) -> Vec<u32> {
    if map.exprs.len() == 1 && shape.len() != 1 {
        vec![shape.iter().product()]
    } else {
        shape.to_vec()
    }
}

pub struct MemrefStreamVerifier;

impl DialectVerifier for MemrefStreamVerifier {
    fn dialect(&self) -> &str {
        "memref_stream"
    }

    fn check(&self, op: &Operation, _ancestors: &[String]) -> Vec<String> {
        let mut out = Vec::new();
        match op.name.as_str() {
            GENERIC => {
                let Some(view) = GenericView::of(op) else {
                    out.push("generic needs bounds, indexing_maps, iterator_types, ins".into());
                    return out;
                };
                if view.bounds.len() != view.iterator_types.len() {
                    out.push(format!(
                        "{} bounds for {} iterator types",
                        view.bounds.len(),
                        view.iterator_types.len()
                    ));
                }
                if view.maps.len() != op.operands.len() {
                    out.push(format!(
                        "{} indexing maps for {} operands",
                        view.maps.len(),
                        op.operands.len()
                    ));
                }
                for m in &view.maps[..view.num_inputs.min(view.maps.len())] {
                    if m.arity != view.bounds.len() {
                        out.push(format!(
                            "input map arity {} does not match {} iteration dimensions",
                            m.arity,
                            view.bounds.len()
                        ));
                    }
                }
                let non_red = view.non_reduction_dims().len();
                for m in view.maps.get(view.num_inputs..).unwrap_or(&[]) {
                    if m.arity != view.bounds.len() && m.arity != non_red {
                        out.push(format!(
                            "output map arity {} matches neither the full ({}) nor the \
                             non-reduction ({}) iteration space",
                            m.arity,
                            view.bounds.len(),
                            non_red
                        ));
                    }
                }
                if let Some(d) = view.iterator_types.iter().position(|t| t == INTERLEAVED) {
                    if d + 1 != view.iterator_types.len() {
                        out.push("interleaved dimension must be last".into());
                    }
                    let u = view.bounds[d] as usize;
                    let lanes = op.operands.len() * u;
                    let args = op.body().args.len();
                    if args != lanes {
                        out.push(format!(
                            "interleaved generic must take {lanes} body arguments, found {args}"
                        ));
                    }
                }
                if let Some(inits) = view.init_values() {
                    if inits.len() != view.num_outputs() {
                        out.push("one init value per output required".into());
                    }
                }
            }
            MS_STREAMING_REGION => {
                let Some(patterns) = op.attr("patterns").and_then(|a| a.as_patterns()) else {
                    out.push("streaming region needs affine patterns".into());
                    return out;
                };
                if patterns.len() != op.operands.len() {
                    out.push("one pattern per streamed operand required".into());
                }
                if patterns.len() > crate::ir::types::STREAM_REGISTER_COUNT {
                    out.push(format!(
                        "{} streams exceed the hardware stream count",
                        patterns.len()
                    ));
                }
            }
            _ => {}
        }
        out
    }
}
