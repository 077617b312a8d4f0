use ukc::harness::{ablation, run_kernel};
use ukc::kernels::{DType, KernelName, KernelSpec};
use ukc::pipeline::PipelineConfig;

fn main() {
    let spec = KernelSpec::new(KernelName::MatMul, DType::F64, 1, 5, 200);
    println!("stage                 loads stores fmadd frep cycles  occ%   fp int");
    for r in ablation(&spec, 7).unwrap() {
        println!(
            "{:22} {:5} {:6} {:5} {:4} {:6} {:6.2} {:4} {:3} {}",
            r.stages, r.loads, r.stores, r.fmadd, r.frep, r.cycles,
            r.utilization * 100.0, r.fp_used, r.int_used,
            if r.validated { "ok" } else { "FAIL" }
        );
    }
    println!();
    println!("Table-2 register usage (full pipeline):");
    let table2 = [
        (KernelName::Fill, DType::F64, 4, 4, 0, (3, 3)),
        (KernelName::Relu, DType::F64, 4, 4, 0, (3, 5)),
        (KernelName::Sum, DType::F64, 4, 4, 0, (3, 7)),
        (KernelName::MaxPool3x3, DType::F64, 4, 4, 0, (7, 6)),
        (KernelName::SumPool3x3, DType::F64, 4, 4, 0, (7, 6)),
        (KernelName::Conv3x3, DType::F64, 4, 4, 0, (8, 8)),
        (KernelName::MatMul, DType::F64, 4, 16, 8, (8, 8)),
        (KernelName::Relu, DType::F32, 4, 8, 0, (3, 5)),
        (KernelName::Sum, DType::F32, 4, 8, 0, (3, 7)),
        (KernelName::MatMulT, DType::F32, 4, 16, 16, (11, 12)),
    ];
    for (name, dtype, n, m, k, want) in table2 {
        let spec = KernelSpec::new(name, dtype, n, m, k);
        match run_kernel(&spec, &PipelineConfig::full(), 7, false) {
            Ok(run) => println!(
                "{:12} {:?}: fp {:2} (want {:2})  int {:2} (want {:2})  {} util {:.2}",
                spec.name.as_str(), dtype, run.record.fp_used, want.0,
                run.record.int_used, want.1,
                if run.record.validated { "ok" } else { "FAIL" },
                run.record.utilization * 100.0,
            ),
            Err(e) => println!("{:12} {:?}: ERROR {e}", spec.name.as_str(), dtype),
        }
    }
}
