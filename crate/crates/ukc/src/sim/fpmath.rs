//! Floating-point primitives with the instruction-set semantics, shared by
//! the simulator, the structured interpreter, and the reference evaluators
//! so all routes round identically.

use crate::schedule::eval::Val;
use crate::schedule::{ADDF, MAXF, MULF, SUBF};

/// max with the F-extension rules: a NaN operand yields the other operand,
/// and +0.0 beats -0.0.
pub fn fmax64(a: f64, b: f64) -> f64 {
    if a.is_nan() {
        return b;
    }
    if b.is_nan() {
        return a;
    }
    if a == 0.0 && b == 0.0 {
        return if a.is_sign_positive() || b.is_sign_positive() {
            0.0
        } else {
            -0.0
        };
    }
    if a > b {
        a
    } else {
        b
    }
}

pub fn fmax32(a: f32, b: f32) -> f32 {
    if a.is_nan() {
        return b;
    }
    if b.is_nan() {
        return a;
    }
    if a == 0.0 && b == 0.0 {
        return if a.is_sign_positive() || b.is_sign_positive() {
            0.0
        } else {
            -0.0
        };
    }
    if a > b {
        a
    } else {
        b
    }
}

/// Fused multiply-add, single rounding.
pub fn fma64(a: f64, b: f64, c: f64) -> f64 {
    a.mul_add(b, c)
}

pub fn fma32(a: f32, b: f32, c: f32) -> f32 {
    a.mul_add(b, c)
}

// Bit-level views used by the register-file simulators.

pub fn f64_of(bits: u64) -> f64 {
    f64::from_bits(bits)
}

pub fn bits_of_f64(v: f64) -> u64 {
    v.to_bits()
}

pub fn f32_lo(bits: u64) -> f32 {
    f32::from_bits(bits as u32)
}

pub fn f32_hi(bits: u64) -> f32 {
    f32::from_bits((bits >> 32) as u32)
}

pub fn pack_f32(lo: f32, hi: f32) -> u64 {
    (lo.to_bits() as u64) | ((hi.to_bits() as u64) << 32)
}

/// Keeps the upper half, replacing the low lane (scalar f32 results are
/// NaN-boxed by the loader; arithmetic writes the low lane only).
pub fn with_f32_lo(bits: u64, lo: f32) -> u64 {
    (bits & 0xFFFF_FFFF_0000_0000) | lo.to_bits() as u64
}

// Typed-value arithmetic for the high-level evaluator.

pub fn val_fma(a: Val, b: Val, c: Val) -> Val {
    match (a, b, c) {
        (Val::F64(a), Val::F64(b), Val::F64(c)) => Val::F64(fma64(a, b, c)),
        (Val::F32(a), Val::F32(b), Val::F32(c)) => Val::F32(fma32(a, b, c)),
        (Val::F32x2(a), Val::F32x2(b), Val::F32x2(c)) => {
            Val::F32x2([fma32(a[0], b[0], c[0]), fma32(a[1], b[1], c[1])])
        }
        _ => panic!("mixed-precision fma"),
    }
}

pub fn val_bin(op: &str, a: Val, b: Val) -> Result<Val, String> {
    let out = match (a, b) {
        (Val::F64(a), Val::F64(b)) => Val::F64(match op {
            ADDF => a + b,
            SUBF => a - b,
            MULF => a * b,
            MAXF => fmax64(a, b),
            _ => return Err(format!("unknown op {op}")),
        }),
        (Val::F32(a), Val::F32(b)) => Val::F32(match op {
            ADDF => a + b,
            SUBF => a - b,
            MULF => a * b,
            MAXF => fmax32(a, b),
            _ => return Err(format!("unknown op {op}")),
        }),
        (Val::F32x2(a), Val::F32x2(b)) => {
            let lane = |x: f32, y: f32| -> Result<f32, String> {
                Ok(match op {
                    ADDF => x + y,
                    SUBF => x - y,
                    MULF => x * y,
                    MAXF => fmax32(x, y),
                    _ => return Err(format!("unknown op {op}")),
                })
            };
            Val::F32x2([lane(a[0], b[0])?, lane(a[1], b[1])?])
        }
        _ => return Err("mixed-precision arithmetic".to_string()),
    };
    Ok(out)
}
