fn main() {
    let spec = ukc::kernels::KernelSpec::new(
        ukc::kernels::KernelName::MatMulT,
        ukc::kernels::DType::F32,
        4, 16, 16,
    );
    let out = ukc::pipeline::compile_kernel(&spec, &ukc::pipeline::PipelineConfig::full()).unwrap();
    println!("{}", out.asm);
}
