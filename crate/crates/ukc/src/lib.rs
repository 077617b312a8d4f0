//! A multi-level compiler backend for linear-algebra micro-kernels targeting
//! RISC-V with stream-register and FP-hardware-loop extensions, plus a
//! cycle-model instruction simulator for validating the generated code.
//!
//! The crate is organized around a family of SSA-with-regions dialects:
//!
//! * `ir` — the generic IR kernel (data model, parser, printer, verifier,
//!   pass driver);
//! * `rv` — RISC-V instruction dialects and the assembly emitter;
//! * `snitch` — stream patterns, streaming-region lowering and the FP
//!   hardware-loop conversion;
//! * `schedule` — the high-level generic-op dialect and the optimization
//!   pipeline that lowers it onto the RISC-V dialects;
//! * `regalloc` — the spill-free three-pass register allocator;
//! * `sim` — the instruction simulator and its cycle model;
//! * `kernels` — builders and reference semantics for the kernel suite;
//! * `pipeline` / `harness` — end-to-end compilation and validated runs.

pub mod harness;
pub mod ir;
pub mod kernels;
pub mod pipeline;
pub mod regalloc;
pub mod rv;
pub mod sim;
pub mod snitch;

use ir::verify::{DialectVerifier, Violation};
use ir::Module;

/// All dialect verifiers known to this crate.
pub fn dialect_verifiers() -> Vec<Box<dyn DialectVerifier>> {
    let mut v: Vec<Box<dyn DialectVerifier>> = Vec::new();
    for rv in rv::RvVerifier::all() {
        v.push(Box::new(rv));
    }
    v.push(Box::new(rv::SnitchStreamVerifier));
    v.push(Box::new(schedule::MemrefStreamVerifier));
    v
}

/// Verifies a module against SSA rules and every registered dialect
/// constraint.
pub fn verify(module: &Module) -> Result<(), Vec<Violation>> {
    let verifiers = dialect_verifiers();
    let refs: Vec<&dyn DialectVerifier> = verifiers.iter().map(|b| b.as_ref()).collect();
    ir::verify::verify_with(module, &refs)
}

pub mod schedule;
