//! End-to-end compilation: the staged optimization pipeline from high-level
//! generic operations down to emitted assembly.

use thiserror::Error;

use crate::ir::pass::{run_pipeline, Pass, PassError};
use crate::ir::Module;
use crate::kernels::KernelSpec;
use crate::regalloc::AllocateRegisters;
use crate::rv;
use crate::rv::emit::{emit_assembly, EmitError};
use crate::rv::flatten::LowerScfToCf;
use crate::schedule::ingest::IngestLinalg;
use crate::schedule::lower::LowerToRv;
use crate::schedule::passes::{
    CollapseDims, FuseFill, ScalarReplacement, UnrollAndJam, VectorizePairs,
};
use crate::schedule::streamify::Streamify;
use crate::sim::interp::static_frep_count;
use crate::snitch::frep::ConvertLoopsToFrep;
use crate::snitch::stream_lower::LowerStreamingRegions;

/// Which optimization stages run, mirroring the cumulative ablation order:
/// streams, scalar replacement, hardware loops, fill fusion, unroll-and-jam.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub streams: bool,
    pub scalar_replacement: bool,
    pub frep: bool,
    pub fuse_fill: bool,
    pub unroll_and_jam: bool,
    pub unroll_factor: Option<i64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::full()
    }
}

impl PipelineConfig {
    pub fn full() -> PipelineConfig {
        PipelineConfig {
            streams: true,
            scalar_replacement: true,
            frep: true,
            fuse_fill: true,
            unroll_and_jam: true,
            unroll_factor: None,
        }
    }

    pub fn baseline() -> PipelineConfig {
        PipelineConfig {
            streams: false,
            scalar_replacement: false,
            frep: false,
            fuse_fill: false,
            unroll_and_jam: false,
            unroll_factor: None,
        }
    }

    /// The six cumulative stage sets of the ablation, 0 = baseline.
    pub fn cumulative(stage: usize) -> PipelineConfig {
        PipelineConfig {
            streams: stage >= 1,
            scalar_replacement: stage >= 2,
            frep: stage >= 3,
            fuse_fill: stage >= 4,
            unroll_and_jam: stage >= 5,
            unroll_factor: None,
        }
    }

    pub fn stage_names() -> [&'static str; 6] {
        [
            "baseline",
            "+streams",
            "+scalar-replacement",
            "+frep",
            "+fuse-fill",
            "+unroll-and-jam",
        ]
    }

    /// Short textual form for reports, e.g. "streams,frep".
    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if self.streams {
            parts.push("streams");
        }
        if self.scalar_replacement {
            parts.push("scalar-replacement");
        }
        if self.frep {
            parts.push("frep");
        }
        if self.fuse_fill {
            parts.push("fuse-fill");
        }
        if self.unroll_and_jam {
            parts.push("unroll-and-jam");
        }
        if parts.is_empty() {
            "baseline".to_string()
        } else {
            parts.join(",")
        }
    }
}

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("{0}")]
    Build(String),
    #[error(transparent)]
    Pass(#[from] PassError),
    #[error(transparent)]
    Emit(#[from] EmitError),
}

pub struct CompileOutput {
    /// Fully allocated module with structured loops (before control-flow
    /// lowering); hardware loops and stream configuration are final.
    pub structured: Module,
    /// The flattened module the assembly was printed from.
    pub flat: Module,
    pub asm: String,
    pub fp_used: usize,
    pub int_used: usize,
    /// Number of hardware-loop instructions in the assembly.
    pub static_freps: usize,
}

/// Lowers a high-level module (functions over `linalg` operations) to
/// assembly under the given stage configuration.
pub fn compile_module(
    mut module: Module,
    cfg: &PipelineConfig,
) -> Result<CompileOutput, CompileError> {
    let ingest = IngestLinalg;
    let pack_parallel = VectorizePairs { reductions: false };
    let scalar_replacement = ScalarReplacement;
    let fuse_fill = FuseFill;
    let unroll = UnrollAndJam {
        factor_override: cfg.unroll_factor,
    };
    let pack_reduction = VectorizePairs { reductions: true };
    let collapse = CollapseDims;
    let streamify = Streamify;
    let lower = LowerToRv;
    let frep = ConvertLoopsToFrep;
    let lower_streams = LowerStreamingRegions;
    let dce = rv::Dce;
    let alloc = AllocateRegisters;

    let mut passes: Vec<&dyn Pass> = vec![&ingest, &pack_parallel];
    if cfg.scalar_replacement {
        passes.push(&scalar_replacement);
    }
    if cfg.fuse_fill {
        passes.push(&fuse_fill);
    }
    if cfg.unroll_and_jam {
        passes.push(&unroll);
    }
    passes.push(&pack_reduction);
    passes.push(&collapse);
    if cfg.streams {
        passes.push(&streamify);
    }
    passes.push(&lower);
    if cfg.frep {
        passes.push(&frep);
    }
    if cfg.streams {
        passes.push(&lower_streams);
    }
    passes.push(&dce);
    passes.push(&alloc);

    let verifiers = crate::dialect_verifiers();
    let refs: Vec<&dyn crate::ir::verify::DialectVerifier> =
        verifiers.iter().map(|b| b.as_ref()).collect();
    run_pipeline(&mut module, &passes, &refs)?;

    let structured = module.clone();
    let flatten = LowerScfToCf;
    run_pipeline(&mut module, &[&flatten as &dyn Pass], &refs)?;
    let asm = emit_assembly(&module)?;
    let (fp_used, int_used) = rv::emit::scan_register_usage(&asm);
    let static_freps = static_frep_count(&module);
    Ok(CompileOutput {
        structured,
        flat: module,
        asm,
        fp_used,
        int_used,
        static_freps,
    })
}

/// Builds and compiles one kernel.
pub fn compile_kernel(
    spec: &KernelSpec,
    cfg: &PipelineConfig,
) -> Result<CompileOutput, CompileError> {
    let module = crate::kernels::build_kernel(spec).map_err(CompileError::Build)?;
    compile_module(module, cfg)
}
