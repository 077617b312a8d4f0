//! Naive nested-loop reference semantics for every kernel, evaluated with
//! the operation order the generated code uses (fused multiply-adds along
//! ascending reduction indices), so simulated outputs must match to the bit.
//!
//! The scalar type is generic so the same loops serve both precisions.

use num_traits::Float;

use crate::sim::fpmath;

use super::{DType, KernelArg, KernelName, KernelSpec};

/// Scalar operations with the exact instruction semantics.
pub trait RefScalar: Float {
    fn fma(a: Self, b: Self, c: Self) -> Self;
    fn max_ieee(a: Self, b: Self) -> Self;
    fn from_lit(v: f64) -> Self;
    fn read(bytes: &[u8], index: usize) -> Self;
    fn write(bytes: &mut [u8], index: usize, v: Self);
}

impl RefScalar for f64 {
    fn fma(a: f64, b: f64, c: f64) -> f64 {
        fpmath::fma64(a, b, c)
    }

    fn max_ieee(a: f64, b: f64) -> f64 {
        fpmath::fmax64(a, b)
    }

    fn from_lit(v: f64) -> f64 {
        v
    }

    fn read(bytes: &[u8], index: usize) -> f64 {
        f64::from_le_bytes(bytes[index * 8..index * 8 + 8].try_into().unwrap())
    }

    fn write(bytes: &mut [u8], index: usize, v: f64) {
        bytes[index * 8..index * 8 + 8].copy_from_slice(&v.to_le_bytes());
    }
}

impl RefScalar for f32 {
    fn fma(a: f32, b: f32, c: f32) -> f32 {
        fpmath::fma32(a, b, c)
    }

    fn max_ieee(a: f32, b: f32) -> f32 {
        fpmath::fmax32(a, b)
    }

    fn from_lit(v: f64) -> f32 {
        v as f32
    }

    fn read(bytes: &[u8], index: usize) -> f32 {
        f32::from_le_bytes(bytes[index * 4..index * 4 + 4].try_into().unwrap())
    }

    fn write(bytes: &mut [u8], index: usize, v: f32) {
        bytes[index * 4..index * 4 + 4].copy_from_slice(&v.to_le_bytes());
    }
}

fn buffer(args: &[KernelArg], i: usize) -> &[u8] {
    match &args[i] {
        KernelArg::Buffer(b) => b,
        KernelArg::Scalar(_) => panic!("argument {i} is a scalar"),
    }
}

fn scalar(args: &[KernelArg], i: usize) -> f64 {
    match &args[i] {
        KernelArg::Scalar(s) => *s,
        KernelArg::Buffer(_) => panic!("argument {i} is a buffer"),
    }
}

/// Computes the expected output buffer. `simd` selects the lane-split
/// accumulation order of the packed transposed matrix product; it has no
/// effect on any other kernel.
pub fn compute_reference(spec: &KernelSpec, args: &[KernelArg], simd: bool) -> Vec<u8> {
    match spec.dtype {
        DType::F64 => compute::<f64>(spec, args, simd),
        DType::F32 => compute::<f32>(spec, args, simd),
    }
}

fn compute<T: RefScalar>(spec: &KernelSpec, args: &[KernelArg], simd: bool) -> Vec<u8> {
    let (n, m, k) = (spec.n as usize, spec.m as usize, spec.k as usize);
    let elem = spec.dtype.bytes();
    let mut out = vec![0u8; n * m * elem];
    match spec.name {
        KernelName::Fill => {
            let v = T::from_lit(scalar(args, 0));
            for i in 0..n * m {
                T::write(&mut out, i, v);
            }
        }
        KernelName::Sum => {
            let a = buffer(args, 0);
            let b = buffer(args, 1);
            for i in 0..n * m {
                T::write(&mut out, i, T::read(a, i) + T::read(b, i));
            }
        }
        KernelName::Relu => {
            let a = buffer(args, 0);
            let zero = T::from_lit(0.0);
            for i in 0..n * m {
                T::write(&mut out, i, T::max_ieee(T::read(a, i), zero));
            }
        }
        KernelName::Conv3x3 => {
            let input = buffer(args, 0);
            let w = buffer(args, 1);
            let width = m + 2;
            for i in 0..n {
                for j in 0..m {
                    let mut acc = T::from_lit(0.0);
                    for r in 0..3 {
                        for s in 0..3 {
                            let x = T::read(input, (i + r) * width + (j + s));
                            let wv = T::read(w, r * 3 + s);
                            acc = T::fma(x, wv, acc);
                        }
                    }
                    T::write(&mut out, i * m + j, acc);
                }
            }
        }
        KernelName::MaxPool3x3 | KernelName::SumPool3x3 => {
            let input = buffer(args, 0);
            let width = m + 2;
            let is_max = spec.name == KernelName::MaxPool3x3;
            for i in 0..n {
                for j in 0..m {
                    let mut acc = if is_max {
                        T::neg_infinity()
                    } else {
                        T::from_lit(0.0)
                    };
                    for r in 0..3 {
                        for s in 0..3 {
                            let x = T::read(input, (i + r) * width + (j + s));
                            acc = if is_max { T::max_ieee(acc, x) } else { acc + x };
                        }
                    }
                    T::write(&mut out, i * m + j, acc);
                }
            }
        }
        KernelName::MatMul => {
            let a = buffer(args, 0);
            let b = buffer(args, 1);
            for i in 0..n {
                for j in 0..m {
                    let mut acc = T::from_lit(0.0);
                    for p in 0..k {
                        acc = T::fma(T::read(a, i * k + p), T::read(b, p * m + j), acc);
                    }
                    T::write(&mut out, i * m + j, acc);
                }
            }
        }
        KernelName::MatMulT => {
            let a = buffer(args, 0);
            let b = buffer(args, 1);
            for i in 0..n {
                for j in 0..m {
                    if simd && spec.dtype == DType::F32 && k % 2 == 0 {
                        // Packed pairs: even and odd partial sums in separate
                        // lanes, summed at the end.
                        let mut even = T::from_lit(0.0);
                        let mut odd = T::from_lit(0.0);
                        for p in (0..k).step_by(2) {
                            even = T::fma(T::read(a, i * k + p), T::read(b, j * k + p), even);
                            odd = T::fma(
                                T::read(a, i * k + p + 1),
                                T::read(b, j * k + p + 1),
                                odd,
                            );
                        }
                        // The horizontal sum accumulates into a
                        // zero-initialized register.
                        T::write(&mut out, i * m + j, T::from_lit(0.0) + (even + odd));
                    } else {
                        let mut acc = T::from_lit(0.0);
                        for p in 0..k {
                            acc = T::fma(T::read(a, i * k + p), T::read(b, j * k + p), acc);
                        }
                        T::write(&mut out, i * m + j, acc);
                    }
                }
            }
        }
    }
    out
}
