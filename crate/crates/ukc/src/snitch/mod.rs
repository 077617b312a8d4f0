//! Stream address patterns and their transformations: resolving affine
//! access maps into byte-stride patterns, canonicalizing patterns to the
//! cheapest hardware configuration, converting eligible loops into FP
//! hardware loops, and lowering streaming regions into configuration
//! instruction sequences.

pub mod frep;
pub mod stream_lower;

use crate::ir::affine::AffineMap;
pub use crate::ir::attr::StridePattern;

/// Maximum pattern rank the address generators support.
pub const MAX_PATTERN_RANK: usize = 4;

/// Canonicalizes a pattern without changing the delivered element sequence:
/// unit dimensions are dropped, contiguous adjacent dimensions merged, and a
/// trailing zero-stride dimension folded into the repeat count.
pub fn canonicalize_pattern(p: &StridePattern) -> StridePattern {
    let mut ub = p.ub.clone();
    let mut strides = p.strides.clone();
    let mut repeat = p.repeat;
    loop {
        let mut changed = false;
        if let Some(i) = ub.iter().position(|b| *b == 1) {
            ub.remove(i);
            strides.remove(i);
            changed = true;
        }
        if !ub.is_empty() && strides[ub.len() - 1] == 0 {
            repeat *= ub[ub.len() - 1];
            ub.pop();
            strides.pop();
            changed = true;
        }
        let mut j = 0;
        while j + 1 < ub.len() {
            if strides[j] == strides[j + 1] * ub[j + 1] {
                ub[j + 1] *= ub[j];
                ub.remove(j);
                strides.remove(j);
                changed = true;
            } else {
                j += 1;
            }
        }
        if !changed {
            break;
        }
    }
    if ub.is_empty() {
        ub.push(1);
        strides.push(0);
    }
    StridePattern {
        ub,
        strides,
        repeat,
    }
}

/// Resolves an affine access into a byte-stride pattern. Returns the pattern
/// plus a constant byte offset to fold into the base address.
///
/// `bounds` is the iteration space (outermost first), `map` the access map
/// into the operand's element index space, and `shape` the operand's
/// row-major shape.
pub fn pattern_from_affine(
    bounds: &[i64],
    map: &AffineMap,
    elem_size: i64,
    shape: &[u32],
) -> Result<(StridePattern, i64), String> {
    if map.arity != bounds.len() {
        return Err(format!(
            "access map has {} dimensions, iteration space has {}",
            map.arity,
            bounds.len()
        ));
    }
    if map.exprs.len() != shape.len() {
        return Err(format!(
            "access map produces {} indices for an operand of rank {}",
            map.exprs.len(),
            shape.len()
        ));
    }
    let flat = map.flatten(shape);
    let strides = flat.coefs.iter().map(|c| c * elem_size).collect();
    let pattern = StridePattern {
        ub: bounds.to_vec(),
        strides,
        repeat: 1,
    };
    Ok((pattern, flat.constant * elem_size))
}

/// Enumerates the delivered element addresses (relative to the base) in
/// delivery order, including repeats. This is the reference semantics the
/// canonicalizer must preserve exactly.
pub fn pattern_addresses(p: &StridePattern) -> Vec<i64> {
    let mut out = Vec::new();
    let rank = p.rank();
    let mut idx = vec![0i64; rank];
    if p.ub.iter().any(|b| *b <= 0) {
        return out;
    }
    loop {
        let addr: i64 = idx.iter().zip(&p.strides).map(|(i, s)| i * s).sum();
        for _ in 0..p.repeat {
            out.push(addr);
        }
        // Advance with the last dimension innermost.
        let mut d = rank;
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < p.ub[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::affine::{AffineExpr, AffineMap};

    #[test]
    fn contiguous_rows_collapse() {
        // 4x5 row-major f64 walked row by row is one contiguous run.
        let p = StridePattern::new(vec![4, 5], vec![40, 8]);
        let c = canonicalize_pattern(&p);
        assert_eq!(c, StridePattern::new(vec![20], vec![8]));
        assert_eq!(pattern_addresses(&p), pattern_addresses(&c));
    }

    #[test]
    fn broadcast_inner_folds_into_repeat() {
        // Indexed by the middle dimension only: each element is delivered
        // five times in a row.
        let p = StridePattern::new(vec![1, 200, 5], vec![0, 8, 0]);
        let c = canonicalize_pattern(&p);
        assert_eq!(
            c,
            StridePattern {
                ub: vec![200],
                strides: vec![8],
                repeat: 5
            }
        );
        assert_eq!(pattern_addresses(&p), pattern_addresses(&c));
    }

    #[test]
    fn already_canonical_is_unchanged() {
        let p = StridePattern::new(vec![16], vec![8]);
        assert_eq!(canonicalize_pattern(&p), p);
    }

    #[test]
    fn affine_resolution_computes_byte_strides() {
        // bounds [1,200,5], map (d0,d1,d2) -> (d0*5 + d2, d1) on 5x200 f64.
        let map = AffineMap::new(
            3,
            vec![
                AffineExpr {
                    coefs: vec![5, 0, 1],
                    constant: 0,
                },
                AffineExpr::dim(3, 1),
            ],
        );
        let (p, off) = pattern_from_affine(&[1, 200, 5], &map, 8, &[5, 200]).unwrap();
        assert_eq!(off, 0);
        assert_eq!(p.strides, vec![8000, 8, 1600]);
        assert_eq!(p.ub, vec![1, 200, 5]);

        // Brute force: addresses from the pattern equal direct evaluation of
        // the map at every iteration point.
        let addrs = pattern_addresses(&p);
        let mut expected = Vec::new();
        for d0 in 0..1 {
            for d1 in 0..200 {
                for d2 in 0..5 {
                    let idx = map.eval(&[d0, d1, d2]);
                    let linear = idx[0] * 200 + idx[1];
                    expected.push(linear * 8);
                }
            }
        }
        assert_eq!(addrs, expected);
    }

    #[test]
    fn affine_unit_and_broadcast() {
        let identity = AffineMap::identity(1);
        let (p, _) = pattern_from_affine(&[7], &identity, 8, &[7]).unwrap();
        assert_eq!(p.strides, vec![8]);

        let broadcast = AffineMap::new(1, vec![AffineExpr::constant(1, 0)]);
        let (p, _) = pattern_from_affine(&[7], &broadcast, 8, &[1]).unwrap();
        assert_eq!(p.strides, vec![0]);
    }
}
