//! Types carried by SSA values, including the register types used by the
//! RISC-V level dialects.

use std::fmt;

/// An integer register, identified by its x-index (0..=31).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IntReg(pub u8);

/// A floating-point register, identified by its f-index (0..=31).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FpReg(pub u8);

const INT_ABI_NAMES: [&str; 32] = [
    "zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2", "s0", "s1", "a0", "a1", "a2", "a3", "a4",
    "a5", "a6", "a7", "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9", "s10", "s11", "t3", "t4",
    "t5", "t6",
];

const FP_ABI_NAMES: [&str; 32] = [
    "ft0", "ft1", "ft2", "ft3", "ft4", "ft5", "ft6", "ft7", "fs0", "fs1", "fa0", "fa1", "fa2",
    "fa3", "fa4", "fa5", "fa6", "fa7", "fs2", "fs3", "fs4", "fs5", "fs6", "fs7", "fs8", "fs9",
    "fs10", "fs11", "ft8", "ft9", "ft10", "ft11",
];

impl IntReg {
    pub fn abi_name(self) -> &'static str {
        INT_ABI_NAMES[self.0 as usize]
    }

    pub fn from_abi_name(name: &str) -> Option<IntReg> {
        INT_ABI_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| IntReg(i as u8))
    }

    pub const ZERO: IntReg = IntReg(0);
    pub const RA: IntReg = IntReg(1);

    pub fn a(n: u8) -> IntReg {
        debug_assert!(n < 8);
        IntReg(10 + n)
    }

    pub fn t(n: u8) -> IntReg {
        debug_assert!(n < 7);
        IntReg(if n < 3 { 5 + n } else { 25 + n })
    }
}

impl FpReg {
    pub fn abi_name(self) -> &'static str {
        FP_ABI_NAMES[self.0 as usize]
    }

    pub fn from_abi_name(name: &str) -> Option<FpReg> {
        FP_ABI_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| FpReg(i as u8))
    }

    pub fn fa(n: u8) -> FpReg {
        debug_assert!(n < 8);
        FpReg(10 + n)
    }

    pub fn ft(n: u8) -> FpReg {
        debug_assert!(n < 12);
        FpReg(if n < 8 { n } else { 20 + n })
    }
}

impl fmt::Display for IntReg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abi_name())
    }
}

impl fmt::Display for FpReg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abi_name())
    }
}

/// The caller-saved integer registers available to the allocator, in
/// allocation order (a-class first, then t-class).
pub const CALLER_SAVED_INT: [IntReg; 15] = [
    IntReg(10),
    IntReg(11),
    IntReg(12),
    IntReg(13),
    IntReg(14),
    IntReg(15),
    IntReg(16),
    IntReg(17),
    IntReg(5),
    IntReg(6),
    IntReg(7),
    IntReg(28),
    IntReg(29),
    IntReg(30),
    IntReg(31),
];

/// The caller-saved FP registers available to the allocator, in allocation
/// order (ft-class first, then fa-class).
pub const CALLER_SAVED_FP: [FpReg; 20] = [
    FpReg(0),
    FpReg(1),
    FpReg(2),
    FpReg(3),
    FpReg(4),
    FpReg(5),
    FpReg(6),
    FpReg(7),
    FpReg(28),
    FpReg(29),
    FpReg(30),
    FpReg(31),
    FpReg(10),
    FpReg(11),
    FpReg(12),
    FpReg(13),
    FpReg(14),
    FpReg(15),
    FpReg(16),
    FpReg(17),
];

/// Number of stream-capable FP registers reserved while streaming is enabled.
pub const STREAM_REGISTER_COUNT: usize = 3;

/// FP registers ft0..ft2 double as stream registers while streaming is on.
pub fn stream_register(lane: usize) -> FpReg {
    debug_assert!(lane < STREAM_REGISTER_COUNT);
    FpReg(lane as u8)
}

/// Type of an SSA value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Type {
    F64,
    F32,
    /// A 64-bit register value holding two packed f32 lanes.
    F32x2,
    /// Integer / index values at the high level.
    Index,
    /// A memory reference with element type and shape (row-major).
    MemRef { elem: Box<Type>, shape: Vec<u32> },
    /// A readable stream of elements.
    ReadStream(Box<Type>),
    /// A writable stream of elements.
    WriteStream(Box<Type>),
    /// An integer register, allocated when the register is named.
    IntReg(Option<IntReg>),
    /// A floating-point register, allocated when the register is named.
    FpReg(Option<FpReg>),
}

impl Type {
    pub fn memref(elem: Type, shape: &[u32]) -> Type {
        Type::MemRef {
            elem: Box::new(elem),
            shape: shape.to_vec(),
        }
    }

    pub fn is_register(&self) -> bool {
        matches!(self, Type::IntReg(_) | Type::FpReg(_))
    }

    pub fn is_unallocated_register(&self) -> bool {
        matches!(self, Type::IntReg(None) | Type::FpReg(None))
    }

    pub fn is_float_class(&self) -> bool {
        matches!(self, Type::FpReg(_))
    }

    /// Element byte width of scalar compute types.
    pub fn elem_bytes(&self) -> Option<u32> {
        match self {
            Type::F64 | Type::F32x2 => Some(8),
            Type::F32 => Some(4),
            _ => None,
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::F64 => f.write_str("f64"),
            Type::F32 => f.write_str("f32"),
            Type::F32x2 => f.write_str("f32x2"),
            Type::Index => f.write_str("index"),
            Type::MemRef { elem, shape } => {
                f.write_str("memref<")?;
                for d in shape {
                    write!(f, "{d}x")?;
                }
                write!(f, "{elem}>")
            }
            Type::ReadStream(elem) => write!(f, "stream<{elem}>"),
            Type::WriteStream(elem) => write!(f, "wstream<{elem}>"),
            Type::IntReg(None) => f.write_str("reg"),
            Type::IntReg(Some(r)) => write!(f, "reg<{r}>"),
            Type::FpReg(None) => f.write_str("freg"),
            Type::FpReg(Some(r)) => write!(f, "freg<{r}>"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abi_names_round_trip() {
        for i in 0..32u8 {
            let r = IntReg(i);
            assert_eq!(IntReg::from_abi_name(r.abi_name()), Some(r));
            let fr = FpReg(i);
            assert_eq!(FpReg::from_abi_name(fr.abi_name()), Some(fr));
        }
    }

    #[test]
    fn pool_sizes_match_abi() {
        assert_eq!(CALLER_SAVED_INT.len(), 15);
        assert_eq!(CALLER_SAVED_FP.len(), 20);
        assert_eq!(IntReg::a(0).abi_name(), "a0");
        assert_eq!(IntReg::t(3).abi_name(), "t3");
        assert_eq!(FpReg::ft(8).abi_name(), "ft8");
        assert_eq!(FpReg::fa(7).abi_name(), "fa7");
    }
}
