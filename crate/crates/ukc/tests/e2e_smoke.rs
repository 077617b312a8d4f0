//! End-to-end smoke tests: every kernel compiles, simulates and validates
//! under the full pipeline and the baseline.

use ukc::harness::{run_kernel, RunOutput};
use ukc::kernels::{DType, KernelName, KernelSpec};
use ukc::pipeline::PipelineConfig;

fn check(spec: KernelSpec, cfg: &PipelineConfig) -> RunOutput {
    let run = run_kernel(&spec, cfg, 7, false).unwrap_or_else(|e| {
        panic!(
            "{} {:?} n={} m={} k={} [{}]: {e}",
            spec.name.as_str(),
            spec.dtype,
            spec.n,
            spec.m,
            spec.k,
            cfg.describe()
        )
    });
    assert!(
        run.record.validated,
        "{} [{}] output mismatch\nasm:\n{}",
        spec.name.as_str(),
        cfg.describe(),
        run.compiled.asm
    );
    run
}

#[test]
fn fill_full_pipeline() {
    let run = check(
        KernelSpec::new(KernelName::Fill, DType::F64, 4, 4, 0),
        &PipelineConfig::full(),
    );
    println!("{}", run.compiled.asm);
    println!("{:?}", run.record);
}

#[test]
fn fill_baseline() {
    check(
        KernelSpec::new(KernelName::Fill, DType::F64, 4, 4, 0),
        &PipelineConfig::baseline(),
    );
}

#[test]
fn sum_full_pipeline() {
    check(
        KernelSpec::new(KernelName::Sum, DType::F64, 4, 4, 0),
        &PipelineConfig::full(),
    );
}

#[test]
fn relu_full_pipeline() {
    check(
        KernelSpec::new(KernelName::Relu, DType::F64, 4, 4, 0),
        &PipelineConfig::full(),
    );
}

#[test]
fn matmul_full_pipeline() {
    let run = check(
        KernelSpec::new(KernelName::MatMul, DType::F64, 1, 5, 200),
        &PipelineConfig::full(),
    );
    println!("{}", run.compiled.asm);
    println!("{:?}", run.record);
}

#[test]
fn matmul_baseline() {
    let run = check(
        KernelSpec::new(KernelName::MatMul, DType::F64, 1, 5, 200),
        &PipelineConfig::baseline(),
    );
    println!("{:?}", run.record);
}

#[test]
fn conv_full_pipeline() {
    check(
        KernelSpec::new(KernelName::Conv3x3, DType::F64, 4, 4, 0),
        &PipelineConfig::full(),
    );
}

#[test]
fn pools_full_pipeline() {
    check(
        KernelSpec::new(KernelName::MaxPool3x3, DType::F64, 4, 4, 0),
        &PipelineConfig::full(),
    );
    check(
        KernelSpec::new(KernelName::SumPool3x3, DType::F64, 4, 4, 0),
        &PipelineConfig::full(),
    );
}

#[test]
fn f32_kernels_full_pipeline() {
    check(
        KernelSpec::new(KernelName::Sum, DType::F32, 4, 8, 0),
        &PipelineConfig::full(),
    );
    check(
        KernelSpec::new(KernelName::Relu, DType::F32, 4, 8, 0),
        &PipelineConfig::full(),
    );
    check(
        KernelSpec::new(KernelName::MatMulT, DType::F32, 4, 16, 16),
        &PipelineConfig::full(),
    );
}

#[test]
fn matmult_f64_full_pipeline() {
    check(
        KernelSpec::new(KernelName::MatMulT, DType::F64, 4, 16, 8),
        &PipelineConfig::full(),
    );
}
