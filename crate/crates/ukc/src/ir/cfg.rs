//! Small CFG helpers for multi-block regions: successor graphs, dominators,
//! and back-edge classification.

use super::Region;

/// Successor block indices for each block in the region.
pub fn successors(region: &Region) -> Vec<Vec<usize>> {
    region
        .blocks
        .iter()
        .map(|b| {
            b.ops
                .last()
                .map(|t| t.successors.iter().map(|s| s.block).collect())
                .unwrap_or_default()
        })
        .collect()
}

/// Immediate dominators by iterative dataflow; entry is block 0.
/// `idom[i] == usize::MAX` marks an unreachable block.
pub fn immediate_dominators(region: &Region) -> Vec<usize> {
    let n = region.blocks.len();
    let succ = successors(region);
    let mut preds = vec![Vec::new(); n];
    for (b, ss) in succ.iter().enumerate() {
        for s in ss {
            preds[*s].push(b);
        }
    }
    // Reverse postorder.
    let mut order = Vec::new();
    let mut seen = vec![false; n];
    fn dfs(b: usize, succ: &[Vec<usize>], seen: &mut [bool], order: &mut Vec<usize>) {
        seen[b] = true;
        for s in &succ[b] {
            if !seen[*s] {
                dfs(*s, succ, seen, order);
            }
        }
        order.push(b);
    }
    if n > 0 {
        dfs(0, &succ, &mut seen, &mut order);
    }
    order.reverse();
    let mut rpo_index = vec![usize::MAX; n];
    for (i, b) in order.iter().enumerate() {
        rpo_index[*b] = i;
    }

    let mut idom = vec![usize::MAX; n];
    if n == 0 {
        return idom;
    }
    idom[0] = 0;
    let mut changed = true;
    while changed {
        changed = false;
        for &b in order.iter().skip(1) {
            let mut new_idom = usize::MAX;
            for &p in &preds[b] {
                if idom[p] == usize::MAX {
                    continue;
                }
                new_idom = if new_idom == usize::MAX {
                    p
                } else {
                    intersect(new_idom, p, &idom, &rpo_index)
                };
            }
            if new_idom != usize::MAX && idom[b] != new_idom {
                idom[b] = new_idom;
                changed = true;
            }
        }
    }
    idom
}

fn intersect(mut a: usize, mut b: usize, idom: &[usize], rpo: &[usize]) -> usize {
    while a != b {
        while rpo[a] > rpo[b] {
            a = idom[a];
        }
        while rpo[b] > rpo[a] {
            b = idom[b];
        }
    }
    a
}

/// True if `a` dominates `b`.
pub fn dominates(a: usize, b: usize, idom: &[usize]) -> bool {
    let mut cur = b;
    loop {
        if cur == a {
            return true;
        }
        if cur == 0 || idom[cur] == usize::MAX {
            return false;
        }
        cur = idom[cur];
    }
}

/// Edges `u -> v` where the target dominates the source.
pub fn back_edges(region: &Region) -> Vec<(usize, usize)> {
    let idom = immediate_dominators(region);
    let mut out = Vec::new();
    for (u, ss) in successors(region).iter().enumerate() {
        for &v in ss {
            if dominates(v, u, &idom) {
                out.push((u, v));
            }
        }
    }
    out
}
