//! Assembly emission: the IR is walked in order and each operation prints
//! itself; structural ops (register anchors, yields) print nothing. Output
//! is deterministic byte-for-byte for identical modules.

use std::collections::HashMap;
use std::fmt::Write;

use thiserror::Error;

use crate::ir::types::{FpReg, IntReg};
use crate::ir::{Attribute, Module, Operation, Type, ValueId};
use crate::rv;
use crate::sim::{FpBinOp, Instr};

#[derive(Debug, Error, PartialEq)]
pub enum EmitError {
    #[error("operation {0} cannot be printed as assembly")]
    Unprintable(String),
    #[error("operation {0} has an unallocated register")]
    Unallocated(String),
    #[error("{0}")]
    Malformed(String),
}

fn int_of(regs: &HashMap<ValueId, Type>, v: ValueId, op: &str) -> Result<IntReg, EmitError> {
    match regs.get(&v) {
        Some(Type::IntReg(Some(r))) => Ok(*r),
        Some(Type::IntReg(None)) => Err(EmitError::Unallocated(op.to_string())),
        _ => Err(EmitError::Malformed(format!(
            "{op}: operand %{} is not an integer register",
            v.0
        ))),
    }
}

fn fp_of(regs: &HashMap<ValueId, Type>, v: ValueId, op: &str) -> Result<FpReg, EmitError> {
    match regs.get(&v) {
        Some(Type::FpReg(Some(r))) => Ok(*r),
        Some(Type::FpReg(None)) => Err(EmitError::Unallocated(op.to_string())),
        _ => Err(EmitError::Malformed(format!(
            "{op}: operand %{} is not an FP register",
            v.0
        ))),
    }
}

fn result_int(op: &Operation, regs: &HashMap<ValueId, Type>) -> Result<IntReg, EmitError> {
    match op.results.first().map(|r| &r.ty) {
        Some(Type::IntReg(Some(r))) => Ok(*r),
        Some(Type::IntReg(None)) => Err(EmitError::Unallocated(op.name.clone())),
        _ => {
            let _ = regs;
            Err(EmitError::Malformed(format!(
                "{} lacks an integer result",
                op.name
            )))
        }
    }
}

fn result_fp(op: &Operation) -> Result<FpReg, EmitError> {
    match op.results.first().map(|r| &r.ty) {
        Some(Type::FpReg(Some(r))) => Ok(*r),
        Some(Type::FpReg(None)) => Err(EmitError::Unallocated(op.name.clone())),
        _ => Err(EmitError::Malformed(format!(
            "{} lacks an FP result",
            op.name
        ))),
    }
}

/// Converts a flat instruction operation into its executable form; `None`
/// for operations that exist only in the IR.
pub fn instr_of(
    op: &Operation,
    regs: &HashMap<ValueId, Type>,
) -> Result<Option<Instr>, EmitError> {
    let imm = |key: &str| -> i64 {
        match op.attr(key) {
            Some(Attribute::Int(v)) => *v,
            _ => 0,
        }
    };
    let name = op.name.as_str();
    let fp_bin = |bin: FpBinOp| -> Result<Option<Instr>, EmitError> {
        Ok(Some(Instr::FpBin {
            op: bin,
            rd: result_fp(op)?,
            rs1: fp_of(regs, op.operands[0], name)?,
            rs2: fp_of(regs, op.operands[1], name)?,
        }))
    };
    match name {
        rv::GET_REGISTER | rv::YIELD | rv::FREP_YIELD => Ok(None),
        rv::LI => Ok(Some(Instr::Li {
            rd: result_int(op, regs)?,
            imm: imm("imm"),
        })),
        rv::MV => Ok(Some(Instr::Mv {
            rd: result_int(op, regs)?,
            rs: int_of(regs, op.operands[0], name)?,
        })),
        rv::ADD | rv::SUB | rv::MUL => {
            let rd = result_int(op, regs)?;
            let rs1 = int_of(regs, op.operands[0], name)?;
            let rs2 = int_of(regs, op.operands[1], name)?;
            Ok(Some(match name {
                rv::ADD => Instr::Add { rd, rs1, rs2 },
                rv::SUB => Instr::Sub { rd, rs1, rs2 },
                _ => Instr::Mul { rd, rs1, rs2 },
            }))
        }
        rv::ADDI => Ok(Some(Instr::Addi {
            rd: result_int(op, regs)?,
            rs1: int_of(regs, op.operands[0], name)?,
            imm: imm("imm"),
        })),
        rv::SLLI => Ok(Some(Instr::Slli {
            rd: result_int(op, regs)?,
            rs1: int_of(regs, op.operands[0], name)?,
            imm: imm("imm"),
        })),
        rv::FLD | rv::FLW => {
            let rd = result_fp(op)?;
            let base = int_of(regs, op.operands[0], name)?;
            let off = imm("offset");
            Ok(Some(if name == rv::FLD {
                Instr::Fld { rd, base, off }
            } else {
                Instr::Flw { rd, base, off }
            }))
        }
        rv::FSD | rv::FSW => {
            let rs = fp_of(regs, op.operands[0], name)?;
            let base = int_of(regs, op.operands[1], name)?;
            let off = imm("offset");
            Ok(Some(if name == rv::FSD {
                Instr::Fsd { rs, base, off }
            } else {
                Instr::Fsw { rs, base, off }
            }))
        }
        rv::FMV_D => Ok(Some(Instr::FmvD {
            rd: result_fp(op)?,
            rs: fp_of(regs, op.operands[0], name)?,
        })),
        rv::FMV_D_X => Ok(Some(Instr::FmvDX {
            rd: result_fp(op)?,
            rs: int_of(regs, op.operands[0], name)?,
        })),
        rv::FCVT_D_W => Ok(Some(Instr::FcvtDW {
            rd: result_fp(op)?,
            rs: int_of(regs, op.operands[0], name)?,
        })),
        rv::FADD_D => fp_bin(FpBinOp::AddD),
        rv::FSUB_D => fp_bin(FpBinOp::SubD),
        rv::FMUL_D => fp_bin(FpBinOp::MulD),
        rv::FMAX_D => fp_bin(FpBinOp::MaxD),
        rv::FADD_S => fp_bin(FpBinOp::AddS),
        rv::FMUL_S => fp_bin(FpBinOp::MulS),
        rv::FMAX_S => fp_bin(FpBinOp::MaxS),
        rv::VFADD_S => fp_bin(FpBinOp::VAddS),
        rv::VFMUL_S => fp_bin(FpBinOp::VMulS),
        rv::VFMAX_S => fp_bin(FpBinOp::VMaxS),
        rv::VFCPKA_S_S => fp_bin(FpBinOp::VCpkaSS),
        rv::FMADD_D | rv::FMADD_S => Ok(Some(Instr::Fmadd {
            wide: name == rv::FMADD_D,
            rd: result_fp(op)?,
            rs1: fp_of(regs, op.operands[0], name)?,
            rs2: fp_of(regs, op.operands[1], name)?,
            rs3: fp_of(regs, op.operands[2], name)?,
        })),
        rv::VFMAC_S => {
            let rd = result_fp(op)?;
            let acc = fp_of(regs, op.operands[2], name)?;
            if rd != acc {
                return Err(EmitError::Malformed(format!(
                    "vfmac accumulator register {acc} does not match destination {rd}"
                )));
            }
            Ok(Some(Instr::VfmacS {
                rd,
                rs1: fp_of(regs, op.operands[0], name)?,
                rs2: fp_of(regs, op.operands[1], name)?,
            }))
        }
        rv::VFSUM_S => {
            let rd = result_fp(op)?;
            let init = fp_of(regs, op.operands[1], name)?;
            if rd != init {
                return Err(EmitError::Malformed(format!(
                    "vfsum accumulator register {init} does not match destination {rd}"
                )));
            }
            Ok(Some(Instr::VfsumS {
                rd,
                rs: fp_of(regs, op.operands[0], name)?,
            }))
        }
        rv::SCFG_BOUND => Ok(Some(Instr::ScfgBound {
            rs: int_of(regs, op.operands[0], name)?,
            stream: imm("stream") as u8,
            dim: imm("dim") as u8,
        })),
        rv::SCFG_STRIDE => Ok(Some(Instr::ScfgStride {
            rs: int_of(regs, op.operands[0], name)?,
            stream: imm("stream") as u8,
            dim: imm("dim") as u8,
        })),
        rv::SCFG_REP => Ok(Some(Instr::ScfgRep {
            rs: int_of(regs, op.operands[0], name)?,
            stream: imm("stream") as u8,
        })),
        rv::SCFG_BASE => Ok(Some(Instr::ScfgBase {
            rs: int_of(regs, op.operands[0], name)?,
            stream: imm("stream") as u8,
            write: matches!(op.attr("write"), Some(Attribute::Bool(true))),
        })),
        rv::SSR_ENABLE => Ok(Some(Instr::SsrEnable)),
        rv::SSR_DISABLE => Ok(Some(Instr::SsrDisable)),
        rv::RET => Ok(Some(Instr::Ret)),
        other => Err(EmitError::Unprintable(other.to_string())),
    }
}

/// Number of printed instructions in an frep body.
pub fn frep_body_len(op: &Operation, regs: &HashMap<ValueId, Type>) -> Result<usize, EmitError> {
    let mut n = 0;
    for inner in &op.body().ops {
        if instr_of(inner, regs)?.is_some() {
            n += 1;
        }
    }
    Ok(n)
}

/// GNU-flavored assembly for a fully lowered, fully allocated module.
pub fn emit_assembly(module: &Module) -> Result<String, EmitError> {
    let regs: HashMap<ValueId, Type> = module
        .top
        .def_types()
        .into_iter()
        .filter(|(_, t)| t.is_register())
        .collect();
    let mut out = String::new();
    out.push_str(".text\n");
    for op in &module.top.regions[0].blocks[0].ops {
        if op.name != rv::FUNC {
            return Err(EmitError::Unprintable(op.name.clone()));
        }
        let sym = op
            .str_attr("sym")
            .ok_or_else(|| EmitError::Malformed("function without sym".to_string()))?;
        writeln!(out, ".globl {sym}").unwrap();
        writeln!(out, "{sym}:").unwrap();
        let region = &op.regions[0];
        let label = |b: usize| format!(".L{sym}_{b}");
        for (bi, block) in region.blocks.iter().enumerate() {
            if bi != 0 {
                writeln!(out, "{}:", label(bi)).unwrap();
            }
            for (oi, inner) in block.ops.iter().enumerate() {
                match inner.name.as_str() {
                    rv::BLT | rv::BGE => {
                        let rs1 = int_of(&regs, inner.operands[0], &inner.name)?;
                        let rs2 = int_of(&regs, inner.operands[1], &inner.name)?;
                        let taken = inner.successors[0].block;
                        let fallthrough = inner.successors[1].block;
                        if fallthrough != bi + 1 {
                            return Err(EmitError::Malformed(format!(
                                "branch fallthrough ^bb{fallthrough} is not the next block"
                            )));
                        }
                        let mn = if inner.name == rv::BLT { "blt" } else { "bge" };
                        writeln!(out, "\t{mn} {rs1}, {rs2}, {}", label(taken)).unwrap();
                    }
                    rv::J => {
                        writeln!(out, "\tj {}", label(inner.successors[0].block)).unwrap();
                    }
                    rv::FREP => {
                        let trips = int_of(&regs, inner.operands[0], &inner.name)?;
                        let n = frep_body_len(inner, &regs)?;
                        writeln!(out, "\tfrep.o {trips}, {n}").unwrap();
                        for body_op in &inner.body().ops {
                            if let Some(instr) = instr_of(body_op, &regs)? {
                                writeln!(out, "\t{instr}").unwrap();
                            }
                        }
                    }
                    _ => {
                        if let Some(instr) = instr_of(inner, &regs)? {
                            writeln!(out, "\t{instr}").unwrap();
                        }
                        let _ = oi;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Distinct register names appearing in an assembly listing, by class; the
/// hardwired zero register does not count.
pub fn scan_register_usage(asm: &str) -> (usize, usize) {
    let mut fp = std::collections::HashSet::new();
    let mut int = std::collections::HashSet::new();
    for line in asm.lines() {
        let line = line.trim();
        if line.ends_with(':') || line.starts_with('.') || line.is_empty() {
            continue;
        }
        let rest = line.split_once(char::is_whitespace).map(|x| x.1).unwrap_or("");
        for tok in rest.split(|c: char| [',', '(', ')', ' '].contains(&c)) {
            let tok = tok.trim();
            if tok.is_empty() {
                continue;
            }
            if let Some(r) = FpReg::from_abi_name(tok) {
                fp.insert(r.0);
            } else if let Some(r) = IntReg::from_abi_name(tok) {
                if r.0 != 0 {
                    int.insert(r.0);
                }
            }
        }
    }
    (fp.len(), int.len())
}
