//! The RISC-V dialect family: flat instructions (`rv`), unstructured control
//! flow (`rv_cf`), structured loops (`rv_scf`), functions with the A-register
//! calling convention (`rv_func`), and the Snitch extension ops
//! (`rv_snitch`).
//!
//! Instruction operations carry register-typed operands and results; the
//! destination register of an instruction is its result value's register.

pub mod emit;
pub mod flatten;

use crate::ir::types::Type;
use crate::ir::verify::DialectVerifier;
use crate::ir::{Attribute, IdGen, Operation, ValueId};

// Integer core instructions.
pub const LI: &str = "rv.li";
pub const MV: &str = "rv.mv";
pub const ADD: &str = "rv.add";
pub const ADDI: &str = "rv.addi";
pub const SUB: &str = "rv.sub";
pub const MUL: &str = "rv.mul";
pub const SLLI: &str = "rv.slli";
pub const GET_REGISTER: &str = "rv.get_register";

// Memory.
pub const FLD: &str = "rv.fld";
pub const FSD: &str = "rv.fsd";
pub const FLW: &str = "rv.flw";
pub const FSW: &str = "rv.fsw";

// FP arithmetic and moves.
pub const FMV_D: &str = "rv.fmv.d";
pub const FMV_D_X: &str = "rv.fmv.d.x";
pub const FCVT_D_W: &str = "rv.fcvt.d.w";
pub const FADD_D: &str = "rv.fadd.d";
pub const FSUB_D: &str = "rv.fsub.d";
pub const FMUL_D: &str = "rv.fmul.d";
pub const FMAX_D: &str = "rv.fmax.d";
pub const FMADD_D: &str = "rv.fmadd.d";
pub const FADD_S: &str = "rv.fadd.s";
pub const FMUL_S: &str = "rv.fmul.s";
pub const FMAX_S: &str = "rv.fmax.s";
pub const FMADD_S: &str = "rv.fmadd.s";

// Packed SIMD (two f32 lanes per 64-bit register).
pub const VFADD_S: &str = "rv.vfadd.s";
pub const VFMUL_S: &str = "rv.vfmul.s";
pub const VFMAX_S: &str = "rv.vfmax.s";
pub const VFMAC_S: &str = "rv.vfmac.s";
pub const VFSUM_S: &str = "rv.vfsum.s";
pub const VFCPKA_S_S: &str = "rv.vfcpka.s.s";

// Control flow.
pub const J: &str = "rv_cf.j";
pub const BLT: &str = "rv_cf.blt";
pub const BGE: &str = "rv_cf.bge";

// Functions.
pub const FUNC: &str = "rv_func.func";
pub const RET: &str = "rv_func.ret";

// Structured loops.
pub const FOR: &str = "rv_scf.for";
pub const YIELD: &str = "rv_scf.yield";

// Snitch extensions.
pub const FREP: &str = "rv_snitch.frep";
pub const FREP_YIELD: &str = "rv_snitch.frep_yield";
pub const SCFG_BOUND: &str = "rv_snitch.scfg_bound";
pub const SCFG_STRIDE: &str = "rv_snitch.scfg_stride";
pub const SCFG_REP: &str = "rv_snitch.scfg_rep";
pub const SCFG_BASE: &str = "rv_snitch.scfg_base";
pub const SSR_ENABLE: &str = "rv_snitch.ssr_enable";
pub const SSR_DISABLE: &str = "rv_snitch.ssr_disable";

// Streams before stream lowering.
pub const STREAMING_REGION: &str = "snitch_stream.streaming_region";
pub const STREAM_READ: &str = "snitch_stream.read";
pub const STREAM_WRITE: &str = "snitch_stream.write";

/// Instructions executed by the FPU datapath (arithmetic, moves, converts,
/// packed SIMD). These are the only instructions legal inside an frep body.
pub fn is_fpu_op(name: &str) -> bool {
    matches!(
        name,
        FMV_D
            | FMV_D_X
            | FCVT_D_W
            | FADD_D
            | FSUB_D
            | FMUL_D
            | FMAX_D
            | FMADD_D
            | FADD_S
            | FMUL_S
            | FMAX_S
            | FMADD_S
            | VFADD_S
            | VFMUL_S
            | VFMAX_S
            | VFMAC_S
            | VFSUM_S
            | VFCPKA_S_S
    )
}

pub fn is_load(name: &str) -> bool {
    matches!(name, FLD | FLW)
}

pub fn is_store(name: &str) -> bool {
    matches!(name, FSD | FSW)
}

/// Ops that exist to bridge SSA values and registers and emit no assembly.
pub fn prints_nothing(name: &str) -> bool {
    matches!(name, GET_REGISTER | YIELD | FREP_YIELD)
}

// ---- builders ----

pub fn li(ids: &mut IdGen, imm: i64) -> (Operation, ValueId) {
    let mut op = Operation::new(LI).with_attr("imm", Attribute::Int(imm));
    let r = op.add_result(ids, Type::IntReg(None));
    (op, r)
}

pub fn unary(ids: &mut IdGen, name: &str, a: ValueId, ty: Type) -> (Operation, ValueId) {
    let mut op = Operation::new(name).with_operands([a]);
    let r = op.add_result(ids, ty);
    (op, r)
}

pub fn binary(ids: &mut IdGen, name: &str, a: ValueId, b: ValueId, ty: Type) -> (Operation, ValueId) {
    let mut op = Operation::new(name).with_operands([a, b]);
    let r = op.add_result(ids, ty);
    (op, r)
}

pub fn addi(ids: &mut IdGen, a: ValueId, imm: i64) -> (Operation, ValueId) {
    let mut op = Operation::new(ADDI)
        .with_operands([a])
        .with_attr("imm", Attribute::Int(imm));
    let r = op.add_result(ids, Type::IntReg(None));
    (op, r)
}

pub fn slli(ids: &mut IdGen, a: ValueId, imm: i64) -> (Operation, ValueId) {
    let mut op = Operation::new(SLLI)
        .with_operands([a])
        .with_attr("imm", Attribute::Int(imm));
    let r = op.add_result(ids, Type::IntReg(None));
    (op, r)
}

/// `rd = rs1 * rs2 + rs3` in one rounding, f64 or f32 scalar.
pub fn fmadd(
    ids: &mut IdGen,
    name: &str,
    a: ValueId,
    b: ValueId,
    acc: ValueId,
) -> (Operation, ValueId) {
    let mut op = Operation::new(name).with_operands([a, b, acc]);
    let r = op.add_result(ids, Type::FpReg(None));
    (op, r)
}

pub fn get_register(ids: &mut IdGen, ty: Type) -> (Operation, ValueId) {
    let mut op = Operation::new(GET_REGISTER);
    let r = op.add_result(ids, ty);
    (op, r)
}

pub fn fld(ids: &mut IdGen, name: &str, addr: ValueId) -> (Operation, ValueId) {
    let mut op = Operation::new(name)
        .with_operands([addr])
        .with_attr("offset", Attribute::Int(0));
    let r = op.add_result(ids, Type::FpReg(None));
    (op, r)
}

pub fn fsd(name: &str, value: ValueId, addr: ValueId) -> Operation {
    Operation::new(name)
        .with_operands([value, addr])
        .with_attr("offset", Attribute::Int(0))
}

/// Removes pure instructions whose results are never used. Pre-named
/// results stay: they may anchor ABI registers or stream traffic.
pub struct Dce;

impl crate::ir::pass::Pass for Dce {
    fn name(&self) -> &str {
        "dce"
    }

    fn run(&self, module: &mut crate::ir::Module) -> Result<(), crate::ir::pass::PassError> {
        loop {
            let mut uses: std::collections::HashSet<ValueId> = std::collections::HashSet::new();
            module.top.walk(&mut |op| {
                for v in &op.operands {
                    uses.insert(*v);
                }
                for s in &op.successors {
                    for v in &s.args {
                        uses.insert(*v);
                    }
                }
            });
            let mut removed = false;
            module.top.walk_mut(&mut |op| {
                for region in &mut op.regions {
                    for block in &mut region.blocks {
                        let before = block.ops.len();
                        block.ops.retain(|o| {
                            let pure = matches!(
                                o.name.as_str(),
                                LI | MV | ADD | ADDI | SUB | MUL | SLLI | GET_REGISTER
                            ) || is_fpu_op(&o.name);
                            let removable = pure
                                && o.regions.is_empty()
                                && o.successors.is_empty()
                                && !o.results.is_empty()
                                && o.results.iter().all(|r| {
                                    r.ty.is_unallocated_register() && !uses.contains(&r.id)
                                });
                            !removable
                        });
                        removed |= block.ops.len() != before;
                    }
                }
            });
            if !removed {
                return Ok(());
            }
        }
    }
}

/// The verifier for the rv / rv_cf / rv_scf / rv_func / rv_snitch dialects.
pub struct RvVerifier {
    dialect: &'static str,
}

impl RvVerifier {
    pub fn all() -> Vec<RvVerifier> {
        ["rv", "rv_cf", "rv_scf", "rv_func", "rv_snitch"]
            .into_iter()
            .map(|dialect| RvVerifier { dialect })
            .collect()
    }
}

fn check_register_typed(op: &Operation, out: &mut Vec<String>) {
    for r in &op.results {
        if !r.ty.is_register() {
            out.push(format!("result of {} must be register-typed", op.name));
        }
    }
}

fn frep_body_violations(op: &Operation, out: &mut Vec<String>) {
    for inner in &op.body().ops {
        let name = inner.name.as_str();
        if name == FREP {
            out.push("nested frep is not supported".to_string());
            continue;
        }
        let allowed = is_fpu_op(name)
            || name == STREAM_READ
            || name == STREAM_WRITE
            || name == FREP_YIELD
            || (name == GET_REGISTER && inner.results[0].ty.is_float_class());
        if !allowed {
            out.push(format!(
                "frep body may contain only FP-register and stream operations, found {name}"
            ));
        }
        if !inner.successors.is_empty() {
            out.push("frep body must be straight-line code".to_string());
        }
        for r in &inner.results {
            if matches!(r.ty, Type::IntReg(_)) {
                out.push(format!(
                    "frep body instruction {name} writes an integer register"
                ));
            }
        }
    }
}

impl DialectVerifier for RvVerifier {
    fn dialect(&self) -> &str {
        self.dialect
    }

    fn check(&self, op: &Operation, ancestors: &[String]) -> Vec<String> {
        let mut out = Vec::new();
        match op.name.as_str() {
            FOR => {
                if op.operands.len() < 3 {
                    out.push("rv_scf.for needs lower, upper and step operands".into());
                    return out;
                }
                let iters = op.operands.len() - 3;
                if op.results.len() != iters {
                    out.push(format!(
                        "rv_scf.for has {} iter operands but {} results",
                        iters,
                        op.results.len()
                    ));
                }
                if op.regions.len() != 1 || op.regions[0].blocks.len() != 1 {
                    out.push("rv_scf.for takes exactly one single-block region".into());
                    return out;
                }
                let block = op.body();
                if block.args.len() != iters + 1 {
                    out.push(format!(
                        "rv_scf.for body must take induction variable plus {} iter arguments",
                        iters
                    ));
                }
                match block.ops.last() {
                    Some(t) if t.name == YIELD => {
                        if t.operands.len() != iters {
                            out.push(format!(
                                "rv_scf.yield must carry {} values, found {}",
                                iters,
                                t.operands.len()
                            ));
                        }
                    }
                    _ => out.push("rv_scf.for body must end with rv_scf.yield".into()),
                }
            }
            FREP => {
                if op.operands.is_empty() {
                    out.push("frep needs an iteration-count operand".into());
                    return out;
                }
                let iters = op.operands.len() - 1;
                if op.results.len() != iters {
                    out.push(format!(
                        "frep has {} iter operands but {} results",
                        iters,
                        op.results.len()
                    ));
                }
                if op.regions.len() != 1 || op.regions[0].blocks.len() != 1 {
                    out.push("frep takes exactly one single-block region".into());
                    return out;
                }
                if ancestors.iter().any(|a| a == FREP) {
                    out.push("nested frep is not supported".into());
                }
                match op.body().ops.last() {
                    Some(t) if t.name == FREP_YIELD => {}
                    _ => out.push("frep body must end with rv_snitch.frep_yield".into()),
                }
                frep_body_violations(op, &mut out);
            }
            FUNC => {
                if op.str_attr("sym").is_none() {
                    out.push("rv_func.func needs a sym attribute".into());
                }
                if op.regions.len() != 1 {
                    out.push("rv_func.func takes exactly one region".into());
                    return out;
                }
                for arg in &op.regions[0].blocks[0].args {
                    let ok = match &arg.ty {
                        Type::IntReg(Some(r)) => r.abi_name().starts_with('a'),
                        Type::FpReg(Some(r)) => r.abi_name().starts_with("fa"),
                        _ => false,
                    };
                    if !ok {
                        out.push(format!(
                            "function argument must be a named A register, found {}",
                            arg.ty
                        ));
                    }
                }
            }
            LI | MV | ADD | ADDI | SUB | MUL | SLLI => {
                check_register_typed(op, &mut out);
            }
            SCFG_BOUND | SCFG_STRIDE | SCFG_REP | SCFG_BASE => {
                if op.operands.len() != 1 {
                    out.push(format!("{} takes exactly one register operand", op.name));
                }
                if op.int_attr("stream").is_none() {
                    out.push(format!("{} needs a stream attribute", op.name));
                }
            }
            name if is_fpu_op(name) => {
                check_register_typed(op, &mut out);
                for r in &op.results {
                    if !r.ty.is_float_class() {
                        out.push(format!("{name} must produce an FP register"));
                    }
                }
            }
            _ => {}
        }
        out
    }
}

/// Streams: the `snitch_stream` dialect verifier.
pub struct SnitchStreamVerifier;

impl DialectVerifier for SnitchStreamVerifier {
    fn dialect(&self) -> &str {
        "snitch_stream"
    }

    fn check(&self, op: &Operation, ancestors: &[String]) -> Vec<String> {
        let mut out = Vec::new();
        match op.name.as_str() {
            STREAMING_REGION => {
                let Some(patterns) = op.attr("patterns").and_then(|a| a.as_stride_patterns())
                else {
                    out.push("streaming region needs resolved stride patterns".into());
                    return out;
                };
                if patterns.len() > crate::ir::types::STREAM_REGISTER_COUNT {
                    out.push(format!(
                        "streaming region uses {} streams, hardware has {}",
                        patterns.len(),
                        crate::ir::types::STREAM_REGISTER_COUNT
                    ));
                }
                if patterns.len() != op.operands.len() {
                    out.push("one base-address operand per stream pattern required".into());
                }
                for p in patterns {
                    if p.rank() == 0 || p.rank() > 4 {
                        out.push(format!(
                            "stream pattern rank {} outside hardware range 1..=4",
                            p.rank()
                        ));
                    }
                }
                if ancestors.iter().any(|a| a == STREAMING_REGION) {
                    out.push("nested streaming regions are not supported".into());
                }
                // Explicit FP loads/stores of reserved stream registers are
                // invalid while streaming.
                let streams = patterns.len();
                for block in &op.regions[0].blocks {
                    for inner in &block.ops {
                        inner.walk(&mut |o| {
                            if is_load(&o.name) {
                                if let Type::FpReg(Some(r)) = &o.results[0].ty {
                                    if (r.0 as usize) < streams {
                                        out.push(format!(
                                            "explicit load into reserved stream register {r} inside streaming region"
                                        ));
                                    }
                                }
                            }
                        });
                    }
                }
            }
            STREAM_READ | STREAM_WRITE => {
                if !ancestors.iter().any(|a| a == STREAMING_REGION) {
                    out.push(format!("{} outside of a streaming region", op.name));
                }
            }
            _ => {}
        }
        out
    }
}
