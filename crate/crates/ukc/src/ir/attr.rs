//! Operation attributes: compile-time constants attached to operations.

use std::fmt;

use super::affine::AffineMap;

/// An SSR address pattern in resolved form: per-dimension iteration counts
/// (outermost first), per-dimension byte strides, and an element repetition
/// count. The address sequence iterates the last dimension innermost and
/// delivers each generated element `repeat` times.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StridePattern {
    pub ub: Vec<i64>,
    pub strides: Vec<i64>,
    pub repeat: i64,
}

impl StridePattern {
    pub fn new(ub: Vec<i64>, strides: Vec<i64>) -> StridePattern {
        assert_eq!(ub.len(), strides.len());
        StridePattern {
            ub,
            strides,
            repeat: 1,
        }
    }

    pub fn rank(&self) -> usize {
        self.ub.len()
    }

    /// Total number of elements delivered (bounds product times repeat).
    pub fn elements_delivered(&self) -> i64 {
        self.ub.iter().product::<i64>() * self.repeat
    }
}

/// A not-yet-resolved pattern: iteration bounds plus the affine map from the
/// iteration space into the operand's element index space.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AffinePattern {
    pub ub: Vec<i64>,
    pub map: AffineMap,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Attribute {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
    Ints(Vec<i64>),
    Strs(Vec<String>),
    Floats(Vec<f64>),
    Map(AffineMap),
    Maps(Vec<AffineMap>),
    Pattern(AffinePattern),
    Patterns(Vec<AffinePattern>),
    StridePattern(StridePattern),
    StridePatterns(Vec<StridePattern>),
}

impl Attribute {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Attribute::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            Attribute::Float(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Attribute::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_ints(&self) -> Option<&[i64]> {
        match self {
            Attribute::Ints(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_strs(&self) -> Option<&[String]> {
        match self {
            Attribute::Strs(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_floats(&self) -> Option<&[f64]> {
        match self {
            Attribute::Floats(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_maps(&self) -> Option<&[AffineMap]> {
        match self {
            Attribute::Maps(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_patterns(&self) -> Option<&[AffinePattern]> {
        match self {
            Attribute::Patterns(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_stride_patterns(&self) -> Option<&[StridePattern]> {
        match self {
            Attribute::StridePatterns(v) => Some(v),
            _ => None,
        }
    }
}

fn write_float(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    if v.is_nan() {
        f.write_str("nan")
    } else if v.is_infinite() {
        f.write_str(if v < 0.0 { "-inf" } else { "inf" })
    } else if v == v.trunc() && v.abs() < 1e15 {
        write!(f, "{:.1}", v)
    } else {
        write!(f, "{v}")
    }
}

fn write_ints(f: &mut fmt::Formatter<'_>, v: &[i64]) -> fmt::Result {
    f.write_str("[")?;
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{x}")?;
    }
    f.write_str("]")
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Attribute::Int(v) => write!(f, "{v}"),
            Attribute::Float(v) => write_float(f, *v),
            Attribute::Bool(v) => write!(f, "{v}"),
            Attribute::Str(s) => write!(f, "{s:?}"),
            Attribute::Ints(v) => write_ints(f, v),
            Attribute::Strs(v) => {
                f.write_str("[")?;
                for (i, s) in v.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{s:?}")?;
                }
                f.write_str("]")
            }
            Attribute::Floats(v) => {
                f.write_str("[")?;
                for (i, x) in v.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write_float(f, *x)?;
                }
                f.write_str("]")
            }
            Attribute::Map(m) => write!(f, "{m}"),
            Attribute::Maps(ms) => {
                f.write_str("[")?;
                for (i, m) in ms.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{m}")?;
                }
                f.write_str("]")
            }
            Attribute::Pattern(p) => {
                write!(f, "pattern<ub = ")?;
                write_ints(f, &p.ub)?;
                write!(f, ", map = {}>", p.map)
            }
            Attribute::Patterns(ps) => {
                f.write_str("[")?;
                for (i, p) in ps.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}", Attribute::Pattern(p.clone()))?;
                }
                f.write_str("]")
            }
            Attribute::StridePattern(p) => {
                write!(f, "spattern<ub = ")?;
                write_ints(f, &p.ub)?;
                f.write_str(", strides = ")?;
                write_ints(f, &p.strides)?;
                if p.repeat != 1 {
                    write!(f, ", repeat = {}", p.repeat)?;
                }
                f.write_str(">")
            }
            Attribute::StridePatterns(ps) => {
                f.write_str("[")?;
                for (i, p) in ps.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{}", Attribute::StridePattern(p.clone()))?;
                }
                f.write_str("]")
            }
        }
    }
}
