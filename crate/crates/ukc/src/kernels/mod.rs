//! The kernel suite: builders producing high-level IR for each kernel at
//! requested shapes and precisions, seeded input generation, analytic FLOP
//! counts, and the reference semantics used to validate simulations.

pub mod reference;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ir::affine::{AffineExpr, AffineMap};
use crate::ir::{Attribute, Block, Module, Operation, Region, Type};
use crate::schedule;
use crate::sim::TCDM_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelName {
    Fill,
    Sum,
    Relu,
    Conv3x3,
    MaxPool3x3,
    SumPool3x3,
    MatMul,
    MatMulT,
}

impl KernelName {
    pub fn parse(s: &str) -> Option<KernelName> {
        Some(match s {
            "fill" => KernelName::Fill,
            "sum" => KernelName::Sum,
            "relu" => KernelName::Relu,
            "conv3x3" => KernelName::Conv3x3,
            "maxpool3x3" => KernelName::MaxPool3x3,
            "sumpool3x3" => KernelName::SumPool3x3,
            "matmul" => KernelName::MatMul,
            "matmult" => KernelName::MatMulT,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            KernelName::Fill => "fill",
            KernelName::Sum => "sum",
            KernelName::Relu => "relu",
            KernelName::Conv3x3 => "conv3x3",
            KernelName::MaxPool3x3 => "maxpool3x3",
            KernelName::SumPool3x3 => "sumpool3x3",
            KernelName::MatMul => "matmul",
            KernelName::MatMulT => "matmult",
        }
    }

    pub fn all() -> [KernelName; 8] {
        [
            KernelName::Fill,
            KernelName::Sum,
            KernelName::Relu,
            KernelName::Conv3x3,
            KernelName::MaxPool3x3,
            KernelName::SumPool3x3,
            KernelName::MatMul,
            KernelName::MatMulT,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F64,
    F32,
}

impl DType {
    pub fn bytes(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
        }
    }

    pub fn ty(self) -> Type {
        match self {
            DType::F64 => Type::F64,
            DType::F32 => Type::F32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub name: KernelName,
    pub dtype: DType,
    pub n: u32,
    pub m: u32,
    pub k: u32,
}

impl KernelSpec {
    pub fn new(name: KernelName, dtype: DType, n: u32, m: u32, k: u32) -> KernelSpec {
        KernelSpec { name, dtype, n, m, k }
    }

    /// Function argument buffers: (shape, is_output). A `None` shape is the
    /// scalar fill value.
    pub fn args(&self) -> Vec<(Option<Vec<u32>>, bool)> {
        let (n, m, k) = (self.n, self.m, self.k);
        match self.name {
            KernelName::Fill => vec![(None, false), (Some(vec![n, m]), true)],
            KernelName::Sum => vec![
                (Some(vec![n, m]), false),
                (Some(vec![n, m]), false),
                (Some(vec![n, m]), true),
            ],
            KernelName::Relu => vec![(Some(vec![n, m]), false), (Some(vec![n, m]), true)],
            KernelName::Conv3x3 => vec![
                (Some(vec![n + 2, m + 2]), false),
                (Some(vec![3, 3]), false),
                (Some(vec![n, m]), true),
            ],
            KernelName::MaxPool3x3 | KernelName::SumPool3x3 => vec![
                (Some(vec![n + 2, m + 2]), false),
                (Some(vec![n, m]), true),
            ],
            KernelName::MatMul => vec![
                (Some(vec![n, k]), false),
                (Some(vec![k, m]), false),
                (Some(vec![n, m]), true),
            ],
            KernelName::MatMulT => vec![
                (Some(vec![n, k]), false),
                (Some(vec![m, k]), false),
                (Some(vec![n, m]), true),
            ],
        }
    }

    pub fn total_bytes(&self) -> usize {
        self.args()
            .iter()
            .map(|(shape, _)| match shape {
                Some(s) => s.iter().product::<u32>() as usize * self.dtype.bytes(),
                None => 0,
            })
            .sum()
    }

    pub fn fits_tcdm(&self) -> bool {
        self.total_bytes() <= TCDM_BYTES
    }

    /// Analytic FLOP count (the minimum FPU issue cycles of the kernel).
    pub fn flop_count(&self) -> u64 {
        let (n, m, k) = (self.n as u64, self.m as u64, self.k as u64);
        match self.name {
            KernelName::Fill | KernelName::Sum | KernelName::Relu => n * m,
            KernelName::Conv3x3 => 18 * n * m,
            KernelName::MaxPool3x3 | KernelName::SumPool3x3 => 9 * n * m,
            KernelName::MatMul | KernelName::MatMulT => 2 * n * m * k,
        }
    }
}

/// One function argument at run time.
#[derive(Debug, Clone)]
pub enum KernelArg {
    Buffer(Vec<u8>),
    Scalar(f64),
}

/// Seeded uniform inputs in [-1, 1]; outputs start as a sentinel pattern so
/// missing writes are caught by validation.
pub fn generate_inputs(spec: &KernelSpec, seed: u64) -> Vec<KernelArg> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (shape, is_output) in spec.args() {
        match shape {
            None => out.push(KernelArg::Scalar(rng.gen_range(-1.0..=1.0))),
            Some(shape) => {
                let elems = shape.iter().product::<u32>() as usize;
                let mut bytes = Vec::with_capacity(elems * spec.dtype.bytes());
                if is_output {
                    bytes.resize(elems * spec.dtype.bytes(), 0xAB);
                } else {
                    match spec.dtype {
                        DType::F64 => {
                            for _ in 0..elems {
                                let v: f64 = rng.gen_range(-1.0..=1.0);
                                bytes.extend_from_slice(&v.to_le_bytes());
                            }
                        }
                        DType::F32 => {
                            for _ in 0..elems {
                                let v: f32 = rng.gen_range(-1.0..=1.0);
                                bytes.extend_from_slice(&v.to_le_bytes());
                            }
                        }
                    }
                }
                out.push(KernelArg::Buffer(bytes));
            }
        }
    }
    out
}

/// Builds the high-level module for a kernel: a function over buffer
/// arguments containing the fill (for reduction kernels) and the generic
/// computation.
pub fn build_kernel(spec: &KernelSpec) -> Result<Module, String> {
    if !spec.fits_tcdm() {
        return Err(format!(
            "kernel buffers need {} bytes, the scratchpad holds {}",
            spec.total_bytes(),
            TCDM_BYTES
        ));
    }
    if spec.dtype == DType::F32 && !matches!(spec.name, KernelName::Sum | KernelName::Relu | KernelName::MatMulT) {
        return Err(format!("{} has no f32 variant", spec.name.as_str()));
    }
    let elem = spec.dtype.ty();
    let mut module = Module::empty();
    let ids = &mut module.ids;

    // Function arguments.
    let mut args = Vec::new();
    for (shape, _) in spec.args() {
        let ty = match shape {
            None => elem.clone(),
            Some(s) => Type::memref(elem.clone(), &s),
        };
        args.push(ids.value(ty));
    }

    let mut body: Vec<Operation> = Vec::new();
    let fma_body = |ids: &mut crate::ir::IdGen, elem: &Type| -> (Vec<crate::ir::ValueDef>, Vec<Operation>) {
        // (x, w, acc) -> acc + x * w
        let x = ids.value(elem.clone());
        let w = ids.value(elem.clone());
        let acc = ids.value(elem.clone());
        let (mul, m) = binary_op(ids, schedule::MULF, x.id, w.id, elem.clone());
        let (add, a) = binary_op(ids, schedule::ADDF, acc.id, m, elem.clone());
        let yield_op = Operation::new(schedule::LINALG_YIELD).with_operands([a]);
        (vec![x, w, acc], vec![mul, add, yield_op])
    };

    match spec.name {
        KernelName::Fill => {
            body.push(
                Operation::new(schedule::LINALG_FILL).with_operands([args[0].id, args[1].id]),
            );
        }
        KernelName::Sum => {
            let (a, b, c) = (args[0].id, args[1].id, args[2].id);
            let x = ids.value(elem.clone());
            let y = ids.value(elem.clone());
            let o = ids.value(elem.clone());
            let (add, r) = binary_op(ids, schedule::ADDF, x.id, y.id, elem.clone());
            let yield_op = Operation::new(schedule::LINALG_YIELD).with_operands([r]);
            body.push(generic(
                vec![a, b, c],
                2,
                vec![AffineMap::identity(2); 3],
                vec!["parallel"; 2],
                vec![x, y, o],
                vec![add, yield_op],
            ));
        }
        KernelName::Relu => {
            let (a, c) = (args[0].id, args[1].id);
            let x = ids.value(elem.clone());
            let o = ids.value(elem.clone());
            let mut zero = Operation::new(schedule::CONSTANT)
                .with_attr("value", Attribute::Float(0.0));
            let z = zero.add_result(ids, elem.clone());
            let (max, r) = binary_op(ids, schedule::MAXF, x.id, z, elem.clone());
            let yield_op = Operation::new(schedule::LINALG_YIELD).with_operands([r]);
            body.push(generic(
                vec![a, c],
                1,
                vec![AffineMap::identity(2); 2],
                vec!["parallel"; 2],
                vec![x, o],
                vec![zero, max, yield_op],
            ));
        }
        KernelName::Conv3x3 => {
            let (input, weights, out) = (args[0].id, args[1].id, args[2].id);
            let (konst, fill) = fill_with_constant(ids, 0.0, out, &elem);
            body.push(konst);
            body.push(fill);
            let (bargs, bops) = fma_body(ids, &elem);
            body.push(generic(
                vec![input, weights, out],
                2,
                vec![window_map(), weight_map(), out_map()],
                vec!["parallel", "parallel", "reduction", "reduction"],
                bargs,
                bops,
            ));
        }
        KernelName::MaxPool3x3 | KernelName::SumPool3x3 => {
            let (input, out) = (args[0].id, args[1].id);
            let is_max = spec.name == KernelName::MaxPool3x3;
            let init = if is_max { f64::NEG_INFINITY } else { 0.0 };
            let (konst, fill) = fill_with_constant(ids, init, out, &elem);
            body.push(konst);
            body.push(fill);
            let x = ids.value(elem.clone());
            let acc = ids.value(elem.clone());
            let (op, r) = binary_op(
                ids,
                if is_max { schedule::MAXF } else { schedule::ADDF },
                acc.id,
                x.id,
                elem.clone(),
            );
            let yield_op = Operation::new(schedule::LINALG_YIELD).with_operands([r]);
            // The window extents cannot be recovered from any operand shape
            // (there is no weights operand); pin them explicitly.
            let mut pool = generic(
                vec![input, out],
                1,
                vec![window_map(), out_map()],
                vec!["parallel", "parallel", "reduction", "reduction"],
                vec![x, acc],
                vec![op, yield_op],
            );
            pool.set_attr(
                "bounds",
                Attribute::Ints(vec![0, 0, 3, 3]),
            );
            body.push(pool);
        }
        KernelName::MatMul | KernelName::MatMulT => {
            let (a, b, c) = (args[0].id, args[1].id, args[2].id);
            let (konst, fill) = fill_with_constant(ids, 0.0, c, &elem);
            body.push(konst);
            body.push(fill);
            let a_map = AffineMap::select(3, &[0, 2]);
            let b_map = if spec.name == KernelName::MatMul {
                AffineMap::select(3, &[2, 1])
            } else {
                AffineMap::select(3, &[1, 2])
            };
            let c_map = AffineMap::select(3, &[0, 1]);
            let (bargs, bops) = fma_body(ids, &elem);
            body.push(generic(
                vec![a, b, c],
                2,
                vec![a_map, b_map, c_map],
                vec!["parallel", "parallel", "reduction"],
                bargs,
                bops,
            ));
        }
    }
    body.push(Operation::new(schedule::RETURN));

    let mut func = Operation::new(schedule::FUNC)
        .with_attr("sym", Attribute::Str(spec.name.as_str().to_string()));
    func.regions.push(Region {
        blocks: vec![Block { args, ops: body }],
    });
    module.top.regions[0].blocks[0].ops.push(func);
    Ok(module)
}

fn binary_op(
    ids: &mut crate::ir::IdGen,
    name: &str,
    a: crate::ir::ValueId,
    b: crate::ir::ValueId,
    ty: Type,
) -> (Operation, crate::ir::ValueId) {
    let mut op = Operation::new(name).with_operands([a, b]);
    let r = op.add_result(ids, ty);
    (op, r)
}

/// `in[(d0 + d2, d1 + d3)]`: the 3x3 window over the padded input.
fn window_map() -> AffineMap {
    AffineMap::new(
        4,
        vec![
            AffineExpr {
                coefs: vec![1, 0, 1, 0],
                constant: 0,
            },
            AffineExpr {
                coefs: vec![0, 1, 0, 1],
                constant: 0,
            },
        ],
    )
}

fn weight_map() -> AffineMap {
    AffineMap::select(4, &[2, 3])
}

fn out_map() -> AffineMap {
    AffineMap::select(4, &[0, 1])
}

fn generic(
    operands: Vec<crate::ir::ValueId>,
    ins: i64,
    maps: Vec<AffineMap>,
    iters: Vec<&str>,
    args: Vec<crate::ir::ValueDef>,
    ops: Vec<Operation>,
) -> Operation {
    let mut op = Operation::new(schedule::LINALG_GENERIC)
        .with_operands(operands)
        .with_attr("ins", Attribute::Int(ins))
        .with_attr("indexing_maps", Attribute::Maps(maps))
        .with_attr(
            "iterator_types",
            Attribute::Strs(iters.into_iter().map(str::to_string).collect()),
        );
    op.regions.push(Region {
        blocks: vec![Block { args, ops }],
    });
    op
}

/// An `arith.constant` plus the `linalg.fill` consuming it.
fn fill_with_constant(
    ids: &mut crate::ir::IdGen,
    value: f64,
    buffer: crate::ir::ValueId,
    elem: &Type,
) -> (Operation, Operation) {
    let mut konst =
        Operation::new(schedule::CONSTANT).with_attr("value", Attribute::Float(value));
    let v = konst.add_result(ids, elem.clone());
    let fill = Operation::new(schedule::LINALG_FILL).with_operands([v, buffer]);
    (konst, fill)
}
