//! Deterministic functional and cycle-model simulator of a single core:
//! in-order integer pipeline, FP subsystem behind a sequencer, three SSR
//! address generators, FP hardware loops, and a 128 KiB scratchpad.
//!
//! Cycle model: integer instructions retire in one cycle; taken branches
//! cost two; explicit loads cost two; FP instructions issue one per cycle
//! into a three-stage pipeline whose results are ready three cycles after
//! issue (a dependent FP instruction stalls until then); hardware-loop
//! bodies issue from the sequencer with no integer-core involvement;
//! stream-fed operands never stall.

pub mod fpmath;
pub mod interp;

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::ir::types::{FpReg, IntReg};

pub const TCDM_BASE: u64 = 0x1000_0000;
pub const TCDM_BYTES: usize = 128 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpBinOp {
    AddD,
    SubD,
    MulD,
    MaxD,
    AddS,
    MulS,
    MaxS,
    VAddS,
    VMulS,
    VMaxS,
    VCpkaSS,
}

impl FpBinOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            FpBinOp::AddD => "fadd.d",
            FpBinOp::SubD => "fsub.d",
            FpBinOp::MulD => "fmul.d",
            FpBinOp::MaxD => "fmax.d",
            FpBinOp::AddS => "fadd.s",
            FpBinOp::MulS => "fmul.s",
            FpBinOp::MaxS => "fmax.s",
            FpBinOp::VAddS => "vfadd.s",
            FpBinOp::VMulS => "vfmul.s",
            FpBinOp::VMaxS => "vfmax.s",
            FpBinOp::VCpkaSS => "vfcpka.s.s",
        }
    }

    fn flops(self) -> u64 {
        match self {
            FpBinOp::AddD | FpBinOp::SubD | FpBinOp::MulD | FpBinOp::MaxD => 1,
            FpBinOp::AddS | FpBinOp::MulS | FpBinOp::MaxS => 1,
            FpBinOp::VAddS | FpBinOp::VMulS | FpBinOp::VMaxS => 2,
            FpBinOp::VCpkaSS => 0,
        }
    }

    fn apply(self, a: u64, b: u64) -> u64 {
        use fpmath::*;
        match self {
            FpBinOp::AddD => bits_of_f64(f64_of(a) + f64_of(b)),
            FpBinOp::SubD => bits_of_f64(f64_of(a) - f64_of(b)),
            FpBinOp::MulD => bits_of_f64(f64_of(a) * f64_of(b)),
            FpBinOp::MaxD => bits_of_f64(fmax64(f64_of(a), f64_of(b))),
            FpBinOp::AddS => with_f32_lo(a, f32_lo(a) + f32_lo(b)),
            FpBinOp::MulS => with_f32_lo(a, f32_lo(a) * f32_lo(b)),
            FpBinOp::MaxS => with_f32_lo(a, fmax32(f32_lo(a), f32_lo(b))),
            FpBinOp::VAddS => pack_f32(f32_lo(a) + f32_lo(b), f32_hi(a) + f32_hi(b)),
            FpBinOp::VMulS => pack_f32(f32_lo(a) * f32_lo(b), f32_hi(a) * f32_hi(b)),
            FpBinOp::VMaxS => pack_f32(
                fmax32(f32_lo(a), f32_lo(b)),
                fmax32(f32_hi(a), f32_hi(b)),
            ),
            FpBinOp::VCpkaSS => pack_f32(f32_lo(a), f32_lo(b)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Instr {
    Li { rd: IntReg, imm: i64 },
    Mv { rd: IntReg, rs: IntReg },
    Add { rd: IntReg, rs1: IntReg, rs2: IntReg },
    Sub { rd: IntReg, rs1: IntReg, rs2: IntReg },
    Mul { rd: IntReg, rs1: IntReg, rs2: IntReg },
    Addi { rd: IntReg, rs1: IntReg, imm: i64 },
    Slli { rd: IntReg, rs1: IntReg, imm: i64 },
    Fld { rd: FpReg, base: IntReg, off: i64 },
    Fsd { rs: FpReg, base: IntReg, off: i64 },
    Flw { rd: FpReg, base: IntReg, off: i64 },
    Fsw { rs: FpReg, base: IntReg, off: i64 },
    FmvD { rd: FpReg, rs: FpReg },
    FmvDX { rd: FpReg, rs: IntReg },
    FcvtDW { rd: FpReg, rs: IntReg },
    FpBin { op: FpBinOp, rd: FpReg, rs1: FpReg, rs2: FpReg },
    Fmadd { wide: bool, rd: FpReg, rs1: FpReg, rs2: FpReg, rs3: FpReg },
    VfmacS { rd: FpReg, rs1: FpReg, rs2: FpReg },
    VfsumS { rd: FpReg, rs: FpReg },
    ScfgBound { rs: IntReg, stream: u8, dim: u8 },
    ScfgStride { rs: IntReg, stream: u8, dim: u8 },
    ScfgRep { rs: IntReg, stream: u8 },
    ScfgBase { rs: IntReg, stream: u8, write: bool },
    SsrEnable,
    SsrDisable,
    FrepO { rs: IntReg, n: usize },
    Blt { rs1: IntReg, rs2: IntReg, target: usize },
    Bge { rs1: IntReg, rs2: IntReg, target: usize },
    J { target: usize },
    Ret,
}

impl Instr {
    /// Executed by the FPU datapath (legal inside an frep body).
    pub fn is_fp(&self) -> bool {
        matches!(
            self,
            Instr::FmvD { .. }
                | Instr::FmvDX { .. }
                | Instr::FcvtDW { .. }
                | Instr::FpBin { .. }
                | Instr::Fmadd { .. }
                | Instr::VfmacS { .. }
                | Instr::VfsumS { .. }
        )
    }
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instr::Li { rd, imm } => write!(f, "li {rd}, {imm}"),
            Instr::Mv { rd, rs } => write!(f, "mv {rd}, {rs}"),
            Instr::Add { rd, rs1, rs2 } => write!(f, "add {rd}, {rs1}, {rs2}"),
            Instr::Sub { rd, rs1, rs2 } => write!(f, "sub {rd}, {rs1}, {rs2}"),
            Instr::Mul { rd, rs1, rs2 } => write!(f, "mul {rd}, {rs1}, {rs2}"),
            Instr::Addi { rd, rs1, imm } => write!(f, "addi {rd}, {rs1}, {imm}"),
            Instr::Slli { rd, rs1, imm } => write!(f, "slli {rd}, {rs1}, {imm}"),
            Instr::Fld { rd, base, off } => write!(f, "fld {rd}, {off}({base})"),
            Instr::Fsd { rs, base, off } => write!(f, "fsd {rs}, {off}({base})"),
            Instr::Flw { rd, base, off } => write!(f, "flw {rd}, {off}({base})"),
            Instr::Fsw { rs, base, off } => write!(f, "fsw {rs}, {off}({base})"),
            Instr::FmvD { rd, rs } => write!(f, "fmv.d {rd}, {rs}"),
            Instr::FmvDX { rd, rs } => write!(f, "fmv.d.x {rd}, {rs}"),
            Instr::FcvtDW { rd, rs } => write!(f, "fcvt.d.w {rd}, {rs}"),
            Instr::FpBin { op, rd, rs1, rs2 } => {
                write!(f, "{} {rd}, {rs1}, {rs2}", op.mnemonic())
            }
            Instr::Fmadd { wide, rd, rs1, rs2, rs3 } => write!(
                f,
                "fmadd.{} {rd}, {rs1}, {rs2}, {rs3}",
                if *wide { "d" } else { "s" }
            ),
            Instr::VfmacS { rd, rs1, rs2 } => write!(f, "vfmac.s {rd}, {rs1}, {rs2}"),
            Instr::VfsumS { rd, rs } => write!(f, "vfsum.s {rd}, {rs}"),
            Instr::ScfgBound { rs, stream, dim } => write!(f, "scfg.bound {rs}, {stream}, {dim}"),
            Instr::ScfgStride { rs, stream, dim } => {
                write!(f, "scfg.stride {rs}, {stream}, {dim}")
            }
            Instr::ScfgRep { rs, stream } => write!(f, "scfg.rep {rs}, {stream}"),
            Instr::ScfgBase { rs, stream, write } => write!(
                f,
                "scfg.base {rs}, {stream}, {}",
                if *write { "w" } else { "r" }
            ),
            Instr::SsrEnable => write!(f, "ssr.enable"),
            Instr::SsrDisable => write!(f, "ssr.disable"),
            Instr::FrepO { rs, n } => write!(f, "frep.o {rs}, {n}"),
            Instr::Blt { rs1, rs2, target } => write!(f, "blt {rs1}, {rs2}, @{target}"),
            Instr::Bge { rs1, rs2, target } => write!(f, "bge {rs1}, {rs2}, @{target}"),
            Instr::J { target } => write!(f, "j @{target}"),
            Instr::Ret => write!(f, "ret"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("assembly line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown entry symbol {0}")]
    UnknownEntry(String),
    #[error("memory access at {addr:#x} outside the scratchpad")]
    OutOfBounds { addr: u64 },
    #[error("stream {0} exhausted")]
    StreamExhausted(usize),
    #[error("stream {0} accessed against its direction")]
    StreamDirection(usize),
    #[error("frep body contains a non-FP instruction: {0}")]
    FrepBody(String),
    #[error("simulation exceeded {0} cycles")]
    Timeout(u64),
}

/// A loaded program: resolved instruction list plus label table.
pub struct Program {
    pub instrs: Vec<Instr>,
    pub labels: HashMap<String, usize>,
}

/// Parses assembly text into an executable image, resolving labels.
pub fn load_program(text: &str) -> Result<Program, SimError> {
    struct Pending {
        mnemonic: String,
        operands: Vec<String>,
        line: usize,
    }
    let mut labels = HashMap::new();
    let mut pending: Vec<Pending> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(label) = line.strip_suffix(':') {
            if labels.insert(label.to_string(), pending.len()).is_some() {
                return Err(SimError::Parse {
                    line: lineno + 1,
                    message: format!("duplicate label {label:?}"),
                });
            }
            continue;
        }
        if line.starts_with('.') {
            continue; // directive
        }
        let (mnemonic, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let operands: Vec<String> = rest
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        pending.push(Pending {
            mnemonic: mnemonic.to_string(),
            operands,
            line: lineno + 1,
        });
    }
    let mut instrs = Vec::with_capacity(pending.len());
    for p in &pending {
        instrs.push(decode(&p.mnemonic, &p.operands, p.line, &labels)?);
    }
    Ok(Program { instrs, labels })
}

fn int_reg(s: &str, line: usize) -> Result<IntReg, SimError> {
    IntReg::from_abi_name(s).ok_or(SimError::Parse {
        line,
        message: format!("unknown integer register {s:?}"),
    })
}

fn fp_reg(s: &str, line: usize) -> Result<FpReg, SimError> {
    FpReg::from_abi_name(s).ok_or(SimError::Parse {
        line,
        message: format!("unknown FP register {s:?}"),
    })
}

fn imm(s: &str, line: usize) -> Result<i64, SimError> {
    let parsed = if let Some(hex) = s.strip_prefix("0x") {
        u64::from_str_radix(hex, 16).map(|v| v as i64).ok()
    } else if let Some(hex) = s.strip_prefix("-0x") {
        u64::from_str_radix(hex, 16).map(|v| -(v as i64)).ok()
    } else {
        s.parse::<i64>().ok()
    };
    parsed.ok_or(SimError::Parse {
        line,
        message: format!("invalid immediate {s:?}"),
    })
}

fn mem_operand(s: &str, line: usize) -> Result<(i64, IntReg), SimError> {
    let err = || SimError::Parse {
        line,
        message: format!("invalid memory operand {s:?}"),
    };
    let open = s.find('(').ok_or_else(err)?;
    let close = s.find(')').ok_or_else(err)?;
    let off = imm(&s[..open], line)?;
    let base = int_reg(&s[open + 1..close], line)?;
    Ok((off, base))
}

fn decode(
    mnemonic: &str,
    ops: &[String],
    line: usize,
    labels: &HashMap<String, usize>,
) -> Result<Instr, SimError> {
    let arity = |n: usize| -> Result<(), SimError> {
        if ops.len() == n {
            Ok(())
        } else {
            Err(SimError::Parse {
                line,
                message: format!("{mnemonic} expects {n} operands, found {}", ops.len()),
            })
        }
    };
    let label = |s: &str| -> Result<usize, SimError> {
        if let Some(idx) = s.strip_prefix('@') {
            return idx.parse().map_err(|_| SimError::Parse {
                line,
                message: format!("invalid target {s:?}"),
            });
        }
        labels.get(s).copied().ok_or(SimError::Parse {
            line,
            message: format!("unresolved label {s:?}"),
        })
    };
    let bin_fp = |op: FpBinOp| -> Result<Instr, SimError> {
        arity(3)?;
        Ok(Instr::FpBin {
            op,
            rd: fp_reg(&ops[0], line)?,
            rs1: fp_reg(&ops[1], line)?,
            rs2: fp_reg(&ops[2], line)?,
        })
    };
    Ok(match mnemonic {
        "li" => {
            arity(2)?;
            Instr::Li { rd: int_reg(&ops[0], line)?, imm: imm(&ops[1], line)? }
        }
        "mv" => {
            arity(2)?;
            Instr::Mv { rd: int_reg(&ops[0], line)?, rs: int_reg(&ops[1], line)? }
        }
        "add" | "sub" | "mul" => {
            arity(3)?;
            let rd = int_reg(&ops[0], line)?;
            let rs1 = int_reg(&ops[1], line)?;
            let rs2 = int_reg(&ops[2], line)?;
            match mnemonic {
                "add" => Instr::Add { rd, rs1, rs2 },
                "sub" => Instr::Sub { rd, rs1, rs2 },
                _ => Instr::Mul { rd, rs1, rs2 },
            }
        }
        "addi" | "slli" => {
            arity(3)?;
            let rd = int_reg(&ops[0], line)?;
            let rs1 = int_reg(&ops[1], line)?;
            let v = imm(&ops[2], line)?;
            if mnemonic == "addi" {
                Instr::Addi { rd, rs1, imm: v }
            } else {
                Instr::Slli { rd, rs1, imm: v }
            }
        }
        "fld" | "flw" => {
            arity(2)?;
            let rd = fp_reg(&ops[0], line)?;
            let (off, base) = mem_operand(&ops[1], line)?;
            if mnemonic == "fld" {
                Instr::Fld { rd, base, off }
            } else {
                Instr::Flw { rd, base, off }
            }
        }
        "fsd" | "fsw" => {
            arity(2)?;
            let rs = fp_reg(&ops[0], line)?;
            let (off, base) = mem_operand(&ops[1], line)?;
            if mnemonic == "fsd" {
                Instr::Fsd { rs, base, off }
            } else {
                Instr::Fsw { rs, base, off }
            }
        }
        "fmv.d" => {
            arity(2)?;
            Instr::FmvD { rd: fp_reg(&ops[0], line)?, rs: fp_reg(&ops[1], line)? }
        }
        "fmv.d.x" => {
            arity(2)?;
            Instr::FmvDX { rd: fp_reg(&ops[0], line)?, rs: int_reg(&ops[1], line)? }
        }
        "fcvt.d.w" => {
            arity(2)?;
            Instr::FcvtDW { rd: fp_reg(&ops[0], line)?, rs: int_reg(&ops[1], line)? }
        }
        "fadd.d" => bin_fp(FpBinOp::AddD)?,
        "fsub.d" => bin_fp(FpBinOp::SubD)?,
        "fmul.d" => bin_fp(FpBinOp::MulD)?,
        "fmax.d" => bin_fp(FpBinOp::MaxD)?,
        "fadd.s" => bin_fp(FpBinOp::AddS)?,
        "fmul.s" => bin_fp(FpBinOp::MulS)?,
        "fmax.s" => bin_fp(FpBinOp::MaxS)?,
        "vfadd.s" => bin_fp(FpBinOp::VAddS)?,
        "vfmul.s" => bin_fp(FpBinOp::VMulS)?,
        "vfmax.s" => bin_fp(FpBinOp::VMaxS)?,
        "vfcpka.s.s" => bin_fp(FpBinOp::VCpkaSS)?,
        "fmadd.d" | "fmadd.s" => {
            arity(4)?;
            Instr::Fmadd {
                wide: mnemonic == "fmadd.d",
                rd: fp_reg(&ops[0], line)?,
                rs1: fp_reg(&ops[1], line)?,
                rs2: fp_reg(&ops[2], line)?,
                rs3: fp_reg(&ops[3], line)?,
            }
        }
        "vfmac.s" => {
            arity(3)?;
            Instr::VfmacS {
                rd: fp_reg(&ops[0], line)?,
                rs1: fp_reg(&ops[1], line)?,
                rs2: fp_reg(&ops[2], line)?,
            }
        }
        "vfsum.s" => {
            arity(2)?;
            Instr::VfsumS { rd: fp_reg(&ops[0], line)?, rs: fp_reg(&ops[1], line)? }
        }
        "scfg.bound" | "scfg.stride" => {
            arity(3)?;
            let rs = int_reg(&ops[0], line)?;
            let stream = imm(&ops[1], line)? as u8;
            let dim = imm(&ops[2], line)? as u8;
            if mnemonic == "scfg.bound" {
                Instr::ScfgBound { rs, stream, dim }
            } else {
                Instr::ScfgStride { rs, stream, dim }
            }
        }
        "scfg.rep" => {
            arity(2)?;
            Instr::ScfgRep {
                rs: int_reg(&ops[0], line)?,
                stream: imm(&ops[1], line)? as u8,
            }
        }
        "scfg.base" => {
            arity(3)?;
            Instr::ScfgBase {
                rs: int_reg(&ops[0], line)?,
                stream: imm(&ops[1], line)? as u8,
                write: match ops[2].as_str() {
                    "w" => true,
                    "r" => false,
                    other => {
                        return Err(SimError::Parse {
                            line,
                            message: format!("invalid stream direction {other:?}"),
                        })
                    }
                },
            }
        }
        "ssr.enable" => {
            arity(0)?;
            Instr::SsrEnable
        }
        "ssr.disable" => {
            arity(0)?;
            Instr::SsrDisable
        }
        "frep.o" => {
            arity(2)?;
            Instr::FrepO {
                rs: int_reg(&ops[0], line)?,
                n: imm(&ops[1], line)? as usize,
            }
        }
        "blt" | "bge" => {
            arity(3)?;
            let rs1 = int_reg(&ops[0], line)?;
            let rs2 = int_reg(&ops[1], line)?;
            let target = label(&ops[2])?;
            if mnemonic == "blt" {
                Instr::Blt { rs1, rs2, target }
            } else {
                Instr::Bge { rs1, rs2, target }
            }
        }
        "j" => {
            arity(1)?;
            Instr::J { target: label(&ops[0])? }
        }
        "ret" => {
            arity(0)?;
            Instr::Ret
        }
        other => {
            return Err(SimError::Parse {
                line,
                message: format!("unknown mnemonic {other:?}"),
            })
        }
    })
}

/// Tunable latency constants of the cycle model.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub load_cycles: u64,
    pub branch_taken_cycles: u64,
    pub fpu_depth: u64,
    pub call_overhead: u64,
    pub max_cycles: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            load_cycles: 2,
            branch_taken_cycles: 2,
            fpu_depth: 3,
            call_overhead: 2,
            max_cycles: 500_000_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    pub cycles: u64,
    pub flops: u64,
    pub fpu_busy_cycles: u64,
    pub loads: u64,
    pub stores: u64,
    pub fmadd: u64,
    pub frep_launches: u64,
    pub ssr_accesses: [u64; 3],
}

impl Metrics {
    pub fn throughput(&self) -> f64 {
        if self.cycles == 0 {
            0.0
        } else {
            self.flops as f64 / self.cycles as f64
        }
    }

    pub fn fpu_utilization(&self) -> f64 {
        if self.cycles == 0 {
            0.0
        } else {
            self.fpu_busy_cycles as f64 / self.cycles as f64
        }
    }
}

#[derive(Debug, Clone, Default)]
struct SsrLane {
    active: bool,
    write: bool,
    base: u64,
    bounds: [i64; 4],
    strides: [i64; 4],
    rank: usize,
    repeat: i64,
    idx: [i64; 4],
    rep_ctr: i64,
    done: bool,
    current: u64,
}

impl SsrLane {
    fn reset_config(&mut self) {
        *self = SsrLane::default();
    }

    fn address(&self) -> u64 {
        let mut addr = self.base as i64;
        for d in 0..self.rank {
            addr += self.idx[d] * self.strides[d];
        }
        addr as u64
    }

    fn advance(&mut self) {
        self.rep_ctr += 1;
        if self.rep_ctr < self.repeat.max(1) {
            return;
        }
        self.rep_ctr = 0;
        let mut d = self.rank;
        loop {
            if d == 0 {
                self.done = true;
                return;
            }
            d -= 1;
            self.idx[d] += 1;
            if self.idx[d] < self.bounds[d] {
                return;
            }
            self.idx[d] = 0;
        }
    }
}

/// Full machine state; lanes, register files and the scratchpad.
pub struct Machine {
    pub x: [u64; 32],
    pub f: [u64; 32],
    pub mem: Vec<u8>,
    ssr: [SsrLane; 3],
    streaming: bool,
    fp_ready: [u64; 32],
    pub cycle: u64,
    pub metrics: Metrics,
    pub config: SimConfig,
    pub trace: Option<Vec<String>>,
}

impl Machine {
    pub fn new(config: SimConfig) -> Machine {
        Machine {
            x: [0; 32],
            f: [0; 32],
            mem: vec![0; TCDM_BYTES],
            ssr: Default::default(),
            streaming: false,
            fp_ready: [0; 32],
            cycle: 0,
            metrics: Metrics::default(),
            config,
            trace: None,
        }
    }

    pub fn write_mem(&mut self, addr: u64, bytes: &[u8]) -> Result<(), SimError> {
        let start = self.check(addr, bytes.len())?;
        self.mem[start..start + bytes.len()].copy_from_slice(bytes);
        Ok(())
    }

    pub fn read_mem(&self, addr: u64, len: usize) -> Result<&[u8], SimError> {
        let start = self.check(addr, len)?;
        Ok(&self.mem[start..start + len])
    }

    fn check(&self, addr: u64, len: usize) -> Result<usize, SimError> {
        let start = addr.wrapping_sub(TCDM_BASE) as usize;
        if addr < TCDM_BASE || start + len > self.mem.len() {
            return Err(SimError::OutOfBounds { addr });
        }
        Ok(start)
    }

    fn load8(&mut self, addr: u64) -> Result<u64, SimError> {
        let b = self.read_mem(addr, 8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn load4(&mut self, addr: u64) -> Result<u32, SimError> {
        let b = self.read_mem(addr, 4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn xr(&self, r: IntReg) -> u64 {
        if r.0 == 0 {
            0
        } else {
            self.x[r.0 as usize]
        }
    }

    fn xw(&mut self, r: IntReg, v: u64) {
        if r.0 != 0 {
            self.x[r.0 as usize] = v;
        }
    }

    fn lane_of(&self, r: FpReg) -> Option<usize> {
        if self.streaming && (r.0 as usize) < 3 && self.ssr[r.0 as usize].active {
            Some(r.0 as usize)
        } else {
            None
        }
    }

    /// Reads an FP source operand, popping a stream element when the
    /// register is a live read stream.
    fn fp_src(&mut self, r: FpReg) -> Result<u64, SimError> {
        if let Some(l) = self.lane_of(r) {
            let lane = &mut self.ssr[l];
            if lane.write {
                return Err(SimError::StreamDirection(l));
            }
            if lane.done {
                return Err(SimError::StreamExhausted(l));
            }
            if lane.rep_ctr == 0 {
                let addr = lane.address();
                self.metrics.ssr_accesses[l] += 1;
                let v = self.load8(addr)?;
                self.ssr[l].current = v;
            }
            let lane = &mut self.ssr[l];
            let v = lane.current;
            lane.advance();
            Ok(v)
        } else {
            Ok(self.f[r.0 as usize])
        }
    }

    /// Writes an FP destination, pushing into a live write stream.
    fn fp_dst(&mut self, r: FpReg, v: u64, is_streamable_write: bool) -> Result<(), SimError> {
        if is_streamable_write {
            if let Some(l) = self.lane_of(r) {
                let lane = &mut self.ssr[l];
                if !lane.write {
                    return Err(SimError::StreamDirection(l));
                }
                if lane.done {
                    return Err(SimError::StreamExhausted(l));
                }
                let addr = lane.address();
                self.metrics.ssr_accesses[l] += 1;
                self.write_mem(addr, &v.to_le_bytes())?;
                self.ssr[l].advance();
                return Ok(());
            }
        }
        self.f[r.0 as usize] = v;
        Ok(())
    }

    /// Regfile-readiness of FP sources; stream-fed operands never stall.
    fn fp_stall(&mut self, srcs: &[FpReg]) {
        let mut ready = 0;
        for r in srcs {
            if self.lane_of(*r).is_none() {
                ready = ready.max(self.fp_ready[r.0 as usize]);
            }
        }
        if ready > self.cycle {
            self.cycle = ready;
        }
    }

    fn fp_issue(&mut self, rd: FpReg, flops: u64) {
        self.metrics.fpu_busy_cycles += 1;
        self.metrics.flops += flops;
        self.cycle += 1;
        if self.lane_of(rd).is_none() {
            self.fp_ready[rd.0 as usize] = self.cycle - 1 + self.config.fpu_depth;
        }
    }

    /// Executes one FP-class instruction with sequencer timing.
    fn exec_fp(&mut self, instr: &Instr) -> Result<(), SimError> {
        match instr {
            Instr::FmvD { rd, rs } => {
                self.fp_stall(&[*rs]);
                let v = self.fp_src(*rs)?;
                // A move into a live write stream produces one output
                // element and counts as one FLOP (it is the whole body of a
                // fill loop); plain moves are free.
                let writes_stream =
                    self.lane_of(*rd).is_some_and(|l| self.ssr[l].write);
                self.fp_dst(*rd, v, true)?;
                self.fp_issue(*rd, if writes_stream { 1 } else { 0 });
            }
            Instr::FmvDX { rd, rs } => {
                let v = self.xr(*rs);
                self.fp_dst(*rd, v, true)?;
                self.fp_issue(*rd, 0);
            }
            Instr::FcvtDW { rd, rs } => {
                let v = fpmath::bits_of_f64(self.xr(*rs) as i64 as i32 as f64);
                self.fp_dst(*rd, v, true)?;
                self.fp_issue(*rd, 0);
            }
            Instr::FpBin { op, rd, rs1, rs2 } => {
                self.fp_stall(&[*rs1, *rs2]);
                let a = self.fp_src(*rs1)?;
                let b = self.fp_src(*rs2)?;
                self.fp_dst(*rd, op.apply(a, b), true)?;
                self.fp_issue(*rd, op.flops());
            }
            Instr::Fmadd { wide, rd, rs1, rs2, rs3 } => {
                self.fp_stall(&[*rs1, *rs2, *rs3]);
                let a = self.fp_src(*rs1)?;
                let b = self.fp_src(*rs2)?;
                let c = self.fp_src(*rs3)?;
                let v = if *wide {
                    fpmath::bits_of_f64(fpmath::fma64(
                        fpmath::f64_of(a),
                        fpmath::f64_of(b),
                        fpmath::f64_of(c),
                    ))
                } else {
                    fpmath::with_f32_lo(
                        c,
                        fpmath::fma32(fpmath::f32_lo(a), fpmath::f32_lo(b), fpmath::f32_lo(c)),
                    )
                };
                self.fp_dst(*rd, v, true)?;
                self.metrics.fmadd += 1;
                self.fp_issue(*rd, 2);
            }
            Instr::VfmacS { rd, rs1, rs2 } => {
                self.fp_stall(&[*rs1, *rs2, *rd]);
                let a = self.fp_src(*rs1)?;
                let b = self.fp_src(*rs2)?;
                let acc = self.f[rd.0 as usize];
                let v = fpmath::pack_f32(
                    fpmath::fma32(fpmath::f32_lo(a), fpmath::f32_lo(b), fpmath::f32_lo(acc)),
                    fpmath::fma32(fpmath::f32_hi(a), fpmath::f32_hi(b), fpmath::f32_hi(acc)),
                );
                self.fp_dst(*rd, v, true)?;
                self.fp_issue(*rd, 4);
            }
            Instr::VfsumS { rd, rs } => {
                // Accumulating horizontal add: rd.lo += rs.lo + rs.hi.
                self.fp_stall(&[*rs, *rd]);
                let v = self.fp_src(*rs)?;
                let acc = self.f[rd.0 as usize];
                let sum = fpmath::f32_lo(acc) + (fpmath::f32_lo(v) + fpmath::f32_hi(v));
                let out = fpmath::with_f32_lo(acc, sum);
                self.fp_dst(*rd, out, true)?;
                self.fp_issue(*rd, 1);
            }
            other => return Err(SimError::FrepBody(other.to_string())),
        }
        Ok(())
    }

    fn trace_line(&mut self, pc: usize, instr: &Instr) {
        if let Some(t) = &mut self.trace {
            t.push(format!("{} {} {}", self.cycle, pc, instr));
        }
    }

    /// Executes one non-control instruction with its cycle cost.
    pub fn exec_straightline(&mut self, instr: &Instr) -> Result<(), SimError> {
        match instr {
            Instr::Li { rd, imm } => {
                self.xw(*rd, *imm as u64);
                self.cycle += 1;
            }
            Instr::Mv { rd, rs } => {
                let v = self.xr(*rs);
                self.xw(*rd, v);
                self.cycle += 1;
            }
            Instr::Add { rd, rs1, rs2 } => {
                let v = self.xr(*rs1).wrapping_add(self.xr(*rs2));
                self.xw(*rd, v);
                self.cycle += 1;
            }
            Instr::Sub { rd, rs1, rs2 } => {
                let v = self.xr(*rs1).wrapping_sub(self.xr(*rs2));
                self.xw(*rd, v);
                self.cycle += 1;
            }
            Instr::Mul { rd, rs1, rs2 } => {
                let v = self.xr(*rs1).wrapping_mul(self.xr(*rs2));
                self.xw(*rd, v);
                self.cycle += 1;
            }
            Instr::Addi { rd, rs1, imm } => {
                let v = self.xr(*rs1).wrapping_add(*imm as u64);
                self.xw(*rd, v);
                self.cycle += 1;
            }
            Instr::Slli { rd, rs1, imm } => {
                let v = self.xr(*rs1) << imm;
                self.xw(*rd, v);
                self.cycle += 1;
            }
            Instr::Fld { rd, base, off } => {
                let addr = self.xr(*base).wrapping_add(*off as u64);
                let v = self.load8(addr)?;
                self.f[rd.0 as usize] = v;
                self.metrics.loads += 1;
                self.cycle += self.config.load_cycles;
                self.fp_ready[rd.0 as usize] = self.cycle;
            }
            Instr::Flw { rd, base, off } => {
                let addr = self.xr(*base).wrapping_add(*off as u64);
                let v = self.load4(addr)?;
                // NaN-boxed narrow load.
                self.f[rd.0 as usize] = 0xFFFF_FFFF_0000_0000 | v as u64;
                self.metrics.loads += 1;
                self.cycle += self.config.load_cycles;
                self.fp_ready[rd.0 as usize] = self.cycle;
            }
            Instr::Fsd { rs, base, off } => {
                self.fp_stall(&[*rs]);
                let v = self.fp_src(*rs)?;
                let addr = self.xr(*base).wrapping_add(*off as u64);
                self.write_mem(addr, &v.to_le_bytes())?;
                self.metrics.stores += 1;
                self.cycle += 1;
            }
            Instr::Fsw { rs, base, off } => {
                self.fp_stall(&[*rs]);
                let v = self.fp_src(*rs)? as u32;
                let addr = self.xr(*base).wrapping_add(*off as u64);
                self.write_mem(addr, &v.to_le_bytes())?;
                self.metrics.stores += 1;
                self.cycle += 1;
            }
            Instr::ScfgBound { rs, stream, dim } => {
                let v = self.xr(*rs) as i64;
                let lane = &mut self.ssr[*stream as usize];
                lane.bounds[*dim as usize] = v;
                lane.rank = lane.rank.max(*dim as usize + 1);
                self.cycle += 1;
            }
            Instr::ScfgStride { rs, stream, dim } => {
                let v = self.xr(*rs) as i64;
                let lane = &mut self.ssr[*stream as usize];
                lane.strides[*dim as usize] = v;
                lane.rank = lane.rank.max(*dim as usize + 1);
                self.cycle += 1;
            }
            Instr::ScfgRep { rs, stream } => {
                let v = self.xr(*rs) as i64;
                self.ssr[*stream as usize].repeat = v;
                self.cycle += 1;
            }
            Instr::ScfgBase { rs, stream, write } => {
                let v = self.xr(*rs);
                let lane = &mut self.ssr[*stream as usize];
                lane.base = v;
                lane.write = *write;
                lane.active = true;
                lane.idx = [0; 4];
                lane.rep_ctr = 0;
                lane.done = false;
                if lane.repeat == 0 {
                    lane.repeat = 1;
                }
                self.cycle += 1;
            }
            Instr::SsrEnable => {
                self.streaming = true;
                self.cycle += 1;
            }
            Instr::SsrDisable => {
                self.streaming = false;
                for lane in &mut self.ssr {
                    lane.reset_config();
                }
                self.cycle += 1;
            }
            fp if fp.is_fp() => self.exec_fp(fp)?,
            other => {
                return Err(SimError::Parse {
                    line: 0,
                    message: format!("{other} is not a straight-line instruction"),
                })
            }
        }
        Ok(())
    }

    /// Runs from `entry` until the function returns. Cycle accounting starts
    /// with the call overhead; the return costs a taken jump.
    pub fn run(&mut self, program: &Program, entry: usize) -> Result<(), SimError> {
        self.cycle += self.config.call_overhead;
        let mut pc = entry;
        loop {
            if self.cycle > self.config.max_cycles {
                return Err(SimError::Timeout(self.config.max_cycles));
            }
            let Some(instr) = program.instrs.get(pc) else {
                return Err(SimError::Parse {
                    line: 0,
                    message: format!("execution ran off the program at {pc}"),
                });
            };
            self.trace_line(pc, instr);
            match instr {
                Instr::FrepO { rs, n } => {
                    let reps = self.xr(*rs).wrapping_add(1);
                    let body = pc + 1..pc + 1 + n;
                    for i in body.clone() {
                        match program.instrs.get(i) {
                            Some(instr) if instr.is_fp() => {}
                            Some(instr) => return Err(SimError::FrepBody(instr.to_string())),
                            None => {
                                return Err(SimError::Parse {
                                    line: 0,
                                    message: "frep body runs off the program".to_string(),
                                })
                            }
                        }
                    }
                    self.metrics.frep_launches += 1;
                    self.cycle += 1;
                    for _ in 0..reps {
                        for i in body.clone() {
                            let instr = program.instrs[i].clone();
                            self.exec_fp(&instr)?;
                        }
                    }
                    pc += n + 1;
                }
                Instr::Blt { rs1, rs2, target } => {
                    if (self.xr(*rs1) as i64) < (self.xr(*rs2) as i64) {
                        self.cycle += self.config.branch_taken_cycles;
                        pc = *target;
                    } else {
                        self.cycle += 1;
                        pc += 1;
                    }
                }
                Instr::Bge { rs1, rs2, target } => {
                    if (self.xr(*rs1) as i64) >= (self.xr(*rs2) as i64) {
                        self.cycle += self.config.branch_taken_cycles;
                        pc = *target;
                    } else {
                        self.cycle += 1;
                        pc += 1;
                    }
                }
                Instr::J { target } => {
                    self.cycle += self.config.branch_taken_cycles;
                    pc = *target;
                }
                Instr::Ret => {
                    self.cycle += self.config.branch_taken_cycles;
                    break;
                }
                other => {
                    let other = other.clone();
                    self.exec_straightline(&other)?;
                    pc += 1;
                }
            }
        }
        self.metrics.cycles = self.cycle;
        Ok(())
    }

    /// Executes an frep body (already validated) once per repetition with
    /// sequencer timing; used by the structured interpreter.
    pub fn run_frep(&mut self, reps: u64, body: &[Instr]) -> Result<(), SimError> {
        for instr in body {
            if !instr.is_fp() {
                return Err(SimError::FrepBody(instr.to_string()));
            }
        }
        self.metrics.frep_launches += 1;
        self.cycle += 1;
        for _ in 0..reps {
            for instr in body {
                self.exec_fp(instr)?;
            }
        }
        Ok(())
    }
}
