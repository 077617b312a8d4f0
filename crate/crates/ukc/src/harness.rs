//! Validated simulation runs: compile a kernel, place seeded inputs in the
//! scratchpad per the calling convention, simulate, compare against the
//! reference semantics, and collect one record per run.

use thiserror::Error;

use crate::ir::types::{FpReg, IntReg};
use crate::kernels::{generate_inputs, KernelArg, KernelSpec};
use crate::pipeline::{compile_kernel, CompileError, CompileOutput, PipelineConfig};
use crate::sim::{load_program, Machine, SimConfig, SimError, TCDM_BASE};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Setup(String),
}

/// One simulated, validated run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub kernel: String,
    pub dtype: &'static str,
    pub n: u32,
    pub m: u32,
    pub k: u32,
    pub stages: String,
    pub cycles: u64,
    pub flops: u64,
    pub throughput: f64,
    pub utilization: f64,
    pub loads: u64,
    pub stores: u64,
    pub fmadd: u64,
    /// Hardware-loop instructions in the generated assembly.
    pub frep: usize,
    pub fp_used: usize,
    pub int_used: usize,
    pub validated: bool,
}

pub const CSV_HEADER: &str = "kernel,dtype,n,m,k,stages,cycles,flops,throughput,utilization,\
loads,stores,fmadd,frep,fp_used,int_used,validation";

impl RunRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},\"{}\",{},{},{:.4},{:.4},{},{},{},{},{},{},{}",
            self.kernel,
            self.dtype,
            self.n,
            self.m,
            self.k,
            self.stages,
            self.cycles,
            self.flops,
            self.throughput,
            self.utilization,
            self.loads,
            self.stores,
            self.fmadd,
            self.frep,
            self.fp_used,
            self.int_used,
            if self.validated { "ok" } else { "FAILED" }
        )
    }
}

/// Places the argument values per the calling convention: buffer pointers in
/// a0.., scalars in fa0.., buffers allocated sequentially in the scratchpad.
pub fn place_arguments(machine: &mut Machine, args: &[KernelArg]) -> Result<Vec<u64>, HarnessError> {
    let mut addr = TCDM_BASE;
    let mut int_idx = 0u8;
    let mut fp_idx = 0u8;
    let mut addrs = Vec::new();
    for arg in args {
        match arg {
            KernelArg::Buffer(bytes) => {
                machine.write_mem(addr, bytes)?;
                machine.x[IntReg::a(int_idx).0 as usize] = addr;
                addrs.push(addr);
                int_idx += 1;
                addr += (bytes.len() as u64 + 7) & !7;
            }
            KernelArg::Scalar(v) => {
                machine.f[FpReg::fa(fp_idx).0 as usize] = v.to_bits();
                addrs.push(0);
                fp_idx += 1;
            }
        }
    }
    Ok(addrs)
}

pub struct RunOutput {
    pub record: RunRecord,
    pub output: Vec<u8>,
    pub expected: Vec<u8>,
    pub trace: Option<Vec<String>>,
    pub compiled: CompileOutput,
}

/// True when the packed transposed matrix product path is selected, which
/// changes the accumulation order the reference must follow.
pub fn uses_packed_reduction(spec: &KernelSpec, cfg: &PipelineConfig) -> bool {
    spec.name == crate::kernels::KernelName::MatMulT
        && spec.dtype == crate::kernels::DType::F32
        && cfg.unroll_and_jam
        && spec.k % 2 == 0
}

pub fn run_kernel(
    spec: &KernelSpec,
    cfg: &PipelineConfig,
    seed: u64,
    trace: bool,
) -> Result<RunOutput, HarnessError> {
    let compiled = compile_kernel(spec, cfg)?;
    run_compiled(spec, cfg, seed, trace, compiled)
}

pub fn run_compiled(
    spec: &KernelSpec,
    cfg: &PipelineConfig,
    seed: u64,
    trace: bool,
    compiled: CompileOutput,
) -> Result<RunOutput, HarnessError> {
    let program = load_program(&compiled.asm)?;
    let entry = *program
        .labels
        .get(spec.name.as_str())
        .ok_or_else(|| HarnessError::Setup(format!("no entry label {}", spec.name.as_str())))?;

    let args = generate_inputs(spec, seed);
    let mut machine = Machine::new(SimConfig::default());
    if trace {
        machine.trace = Some(Vec::new());
    }
    let addrs = place_arguments(&mut machine, &args)?;
    machine.run(&program, entry)?;

    // Output buffer is the last argument.
    let out_index = args.len() - 1;
    let out_len = match &args[out_index] {
        KernelArg::Buffer(b) => b.len(),
        _ => return Err(HarnessError::Setup("output is not a buffer".to_string())),
    };
    let output = machine.read_mem(addrs[out_index], out_len)?.to_vec();
    let expected =
        crate::kernels::reference::compute_reference(spec, &args, uses_packed_reduction(spec, cfg));
    let validated = output == expected;

    let metrics = &machine.metrics;
    let record = RunRecord {
        kernel: spec.name.as_str().to_string(),
        dtype: match spec.dtype {
            crate::kernels::DType::F64 => "f64",
            crate::kernels::DType::F32 => "f32",
        },
        n: spec.n,
        m: spec.m,
        k: spec.k,
        stages: cfg.describe(),
        cycles: metrics.cycles,
        flops: metrics.flops,
        throughput: metrics.throughput(),
        utilization: metrics.fpu_utilization(),
        loads: metrics.loads,
        stores: metrics.stores,
        fmadd: metrics.fmadd,
        frep: compiled.static_freps,
        fp_used: compiled.fp_used,
        int_used: compiled.int_used,
        validated,
    };
    Ok(RunOutput {
        record,
        output,
        expected,
        trace: machine.trace.take(),
        compiled,
    })
}

/// Runs the six cumulative stage sets in ablation order.
pub fn ablation(spec: &KernelSpec, seed: u64) -> Result<Vec<RunRecord>, HarnessError> {
    let mut out = Vec::new();
    for stage in 0..6 {
        let cfg = PipelineConfig::cumulative(stage);
        let run = run_kernel(spec, &cfg, seed, false)?;
        out.push(run.record);
    }
    Ok(out)
}
