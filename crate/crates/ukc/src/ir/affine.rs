//! Linear affine expressions and maps over iteration dimensions.
//!
//! Maps relate iteration-space points to operand element indices. Only
//! integer-linear expressions plus a constant are representable; anything
//! else is rejected at construction time.

use std::fmt;

/// `c0 + sum_i coefs[i] * d_i` over `coefs.len()` dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AffineExpr {
    pub coefs: Vec<i64>,
    pub constant: i64,
}

impl AffineExpr {
    pub fn dim(arity: usize, d: usize) -> AffineExpr {
        let mut coefs = vec![0; arity];
        coefs[d] = 1;
        AffineExpr { coefs, constant: 0 }
    }

    pub fn constant(arity: usize, c: i64) -> AffineExpr {
        AffineExpr {
            coefs: vec![0; arity],
            constant: c,
        }
    }

    pub fn eval(&self, point: &[i64]) -> i64 {
        debug_assert_eq!(point.len(), self.coefs.len());
        self.constant
            + self
                .coefs
                .iter()
                .zip(point)
                .map(|(c, p)| c * p)
                .sum::<i64>()
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0 && self.coefs.iter().all(|c| *c == 0)
    }
}

impl fmt::Display for AffineExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, c) in self.coefs.iter().enumerate() {
            if *c == 0 {
                continue;
            }
            if !first {
                f.write_str(" + ")?;
            }
            first = false;
            if *c == 1 {
                write!(f, "d{i}")?;
            } else {
                write!(f, "d{i} * {c}")?;
            }
        }
        if self.constant != 0 || first {
            if !first {
                f.write_str(" + ")?;
            }
            write!(f, "{}", self.constant)?;
        }
        Ok(())
    }
}

/// A multi-result affine map `(d0, .., dN-1) -> (e0, .., eM-1)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AffineMap {
    pub arity: usize,
    pub exprs: Vec<AffineExpr>,
}

impl AffineMap {
    pub fn new(arity: usize, exprs: Vec<AffineExpr>) -> AffineMap {
        debug_assert!(exprs.iter().all(|e| e.coefs.len() == arity));
        AffineMap { arity, exprs }
    }

    /// Identity map over `arity` dimensions.
    pub fn identity(arity: usize) -> AffineMap {
        AffineMap {
            arity,
            exprs: (0..arity).map(|d| AffineExpr::dim(arity, d)).collect(),
        }
    }

    /// Map selecting the given dimensions, e.g. `(d0,d1,d2) -> (d0, d2)`.
    pub fn select(arity: usize, dims: &[usize]) -> AffineMap {
        AffineMap {
            arity,
            exprs: dims.iter().map(|d| AffineExpr::dim(arity, *d)).collect(),
        }
    }

    pub fn eval(&self, point: &[i64]) -> Vec<i64> {
        self.exprs.iter().map(|e| e.eval(point)).collect()
    }

    /// Flattens the map results against a row-major shape into a single
    /// linear expression in elements.
    pub fn flatten(&self, shape: &[u32]) -> AffineExpr {
        assert_eq!(
            self.exprs.len(),
            shape.len(),
            "map result count {} does not match operand rank {}",
            self.exprs.len(),
            shape.len()
        );
        let mut coefs = vec![0i64; self.arity];
        let mut constant = 0i64;
        let mut row = 1i64;
        for (expr, dim) in self.exprs.iter().zip(shape).rev() {
            for (c, e) in coefs.iter_mut().zip(&expr.coefs) {
                *c += e * row;
            }
            constant += expr.constant * row;
            row *= *dim as i64;
        }
        AffineExpr { coefs, constant }
    }

    /// Substitutes dimension `d` with the expression `outer * factor + inner`
    /// where `outer` keeps position `d` and `inner` is appended as a new last
    /// dimension. With `drop_outer`, position `d` is removed instead (the
    /// whole extent was unrolled).
    pub fn split_dim(&self, d: usize, factor: i64, drop_outer: bool) -> AffineMap {
        let new_arity = if drop_outer {
            self.arity
        } else {
            self.arity + 1
        };
        let exprs = self
            .exprs
            .iter()
            .map(|e| {
                let mut coefs = Vec::with_capacity(new_arity);
                for (i, c) in e.coefs.iter().enumerate() {
                    if i == d {
                        if !drop_outer {
                            coefs.push(c * factor);
                        }
                    } else {
                        coefs.push(*c);
                    }
                }
                coefs.push(e.coefs[d]);
                AffineExpr {
                    coefs,
                    constant: e.constant,
                }
            })
            .collect();
        AffineMap {
            arity: new_arity,
            exprs,
        }
    }

    /// Merges adjacent dimensions `d` and `d+1` (with `inner_bound` the
    /// extent of `d+1`) into a single dimension at position `d`. Only valid
    /// when for every expression `coef[d] == coef[d+1] * inner_bound`.
    pub fn merge_dims(&self, d: usize, inner_bound: i64) -> Option<AffineMap> {
        for e in &self.exprs {
            if e.coefs[d] != e.coefs[d + 1] * inner_bound {
                return None;
            }
        }
        let exprs = self
            .exprs
            .iter()
            .map(|e| {
                let mut coefs = e.coefs.clone();
                let inner = coefs.remove(d + 1);
                coefs[d] = inner;
                AffineExpr {
                    coefs,
                    constant: e.constant,
                }
            })
            .collect();
        Some(AffineMap {
            arity: self.arity - 1,
            exprs,
        })
    }

    /// Removes a dimension the map does not reference.
    pub fn drop_dim(&self, d: usize) -> Option<AffineMap> {
        if self.exprs.iter().any(|e| e.coefs[d] != 0) {
            return None;
        }
        let exprs = self
            .exprs
            .iter()
            .map(|e| {
                let mut coefs = e.coefs.clone();
                coefs.remove(d);
                AffineExpr {
                    coefs,
                    constant: e.constant,
                }
            })
            .collect();
        Some(AffineMap {
            arity: self.arity - 1,
            exprs,
        })
    }
}

impl fmt::Display for AffineMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for d in 0..self.arity {
            if d > 0 {
                f.write_str(", ")?;
            }
            write!(f, "d{d}")?;
        }
        f.write_str(") -> (")?;
        for (i, e) in self.exprs.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{e}")?;
        }
        f.write_str(")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_row_major() {
        // (d0, d1, d2) -> (d0 * 5 + d2, d1) over a 5x200 operand:
        // linear element index = (d0*5 + d2)*200 + d1.
        let arity = 3;
        let m = AffineMap::new(
            arity,
            vec![
                AffineExpr {
                    coefs: vec![5, 0, 1],
                    constant: 0,
                },
                AffineExpr::dim(arity, 1),
            ],
        );
        let flat = m.flatten(&[5, 200]);
        assert_eq!(flat.coefs, vec![1000, 1, 200]);
        assert_eq!(flat.constant, 0);
    }

    #[test]
    fn split_keeps_semantics() {
        // (d0, d1) -> (d0, d1), split d0 by 4: (d0, d1, d2) -> (d0*4 + d2, d1)
        let m = AffineMap::identity(2);
        let s = m.split_dim(0, 4, false);
        assert_eq!(s.eval(&[2, 7, 3]), m.eval(&[11, 7]));
        let dropped = m.split_dim(0, 4, true);
        assert_eq!(dropped.eval(&[7, 3]), m.eval(&[3, 7]));
    }

    #[test]
    fn merge_requires_contiguity() {
        // (d0, d1) -> (d0*5 + d1) merges to (d0) when inner bound is 5.
        let m = AffineMap::new(
            2,
            vec![AffineExpr {
                coefs: vec![5, 1],
                constant: 0,
            }],
        );
        let merged = m.merge_dims(0, 5).unwrap();
        assert_eq!(merged.eval(&[13]), m.eval(&[2, 3]));
        assert!(m.merge_dims(0, 4).is_none());
    }
}
