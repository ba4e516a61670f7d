//! Maximum-arborescence decoding of a sentence score matrix.
//!
//! `G[(i, j)]` scores sentence `i` pointing at sentence `j`; the diagonal
//! scores the self-loop. Decoding builds an augmented graph whose node 0 is a
//! virtual root and whose node `k + 1` is sentence `k`. The argumentative
//! head of a sentence is its arborescence parent, so every sentence keeps
//! exactly one outgoing link; attaching to the virtual root stands for a
//! self-loop and may happen for several sentences (major claim and non-ACs).

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tree::ArgTree;

pub type ScoreMatrix = Array2<f64>;

/// Largest essay accepted by [`brute_force_decode`].
pub const BRUTE_FORCE_MAX_N: usize = 8;

/// Sum of the selected cells, accumulated in node order.
pub fn tree_score(g: &ScoreMatrix, heads: &[usize]) -> f64 {
    heads
        .iter()
        .enumerate()
        .map(|(i, &h)| g[[i, h]])
        .fold(0.0, |acc, s| acc + s)
}

/// Dense edge weights `w[parent * n + child]` of the augmented graph.
fn augmented_weights(g: &ScoreMatrix) -> Vec<f64> {
    let n = g.nrows() + 1;
    let mut w = vec![f64::NEG_INFINITY; n * n];
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let parent = if i == j { 0 } else { j + 1 };
            w[parent * n + i + 1] = g[[i, j]];
        }
    }
    w
}

fn parents_to_heads(parents: &[usize]) -> Vec<usize> {
    parents[1..]
        .iter()
        .enumerate()
        .map(|(i, &p)| if p == 0 { i } else { p - 1 })
        .collect()
}

/// Maximum-score tree for `g`, ties resolved towards the lexicographically
/// smallest head vector.
pub fn decode(g: &ScoreMatrix) -> Result<ArgTree> {
    let n = g.nrows();
    if g.ncols() != n {
        return Err(Error::Shape(format!("score matrix is {}x{}", n, g.ncols())));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("score matrix".into()));
    }
    if n == 0 {
        return ArgTree::from_heads(Vec::new());
    }
    let mut w = augmented_weights(g);
    let mut heads = parents_to_heads(&chu_liu_edmonds(&w, n + 1, 0));
    let best = tree_score(g, &heads);
    let tol = 1e-12 * best.abs().max(1.0);

    // Walk the positions left to right, trying every smaller head; keep the
    // first one that still reaches the optimum and freeze it.
    let na = n + 1;
    for i in 0..n {
        let child = i + 1;
        for h in 0..heads[i] {
            if creates_forced_cycle(&heads[..i], i, h) {
                continue;
            }
            let mut trial = w.clone();
            force_parent(&mut trial, na, child, if h == i { 0 } else { h + 1 });
            if relaxation_bound(&trial, na) < best - tol {
                continue;
            }
            let cand = parents_to_heads(&chu_liu_edmonds(&trial, na, 0));
            if tree_score(g, &cand) >= best - tol {
                heads = cand;
                break;
            }
        }
        let p = if heads[i] == i { 0 } else { heads[i] + 1 };
        force_parent(&mut w, na, child, p);
    }
    ArgTree::from_heads(heads)
}

fn force_parent(w: &mut [f64], n: usize, child: usize, parent: usize) {
    for u in 0..n {
        if u != parent {
            w[u * n + child] = f64::NEG_INFINITY;
        }
    }
}

/// Whether fixing `heads[..i]` plus `i -> h` already closes a cycle.
fn creates_forced_cycle(prefix: &[usize], i: usize, h: usize) -> bool {
    let mut node = h;
    let mut steps = 0;
    loop {
        if node == i {
            return h != i;
        }
        if node >= prefix.len() || prefix[node] == node || steps > prefix.len() {
            return false;
        }
        node = prefix[node];
        steps += 1;
    }
}

/// Sum of each node's best incoming edge: an upper bound on any arborescence.
fn relaxation_bound(w: &[f64], n: usize) -> f64 {
    (1..n)
        .map(|v| (0..n).map(|u| w[u * n + v]).fold(f64::NEG_INFINITY, f64::max))
        .sum()
}

/// Chu-Liu-Edmonds maximum arborescence over dense weights
/// `w[parent * n + child]` (`-inf` marks a missing edge). Returns the parent
/// of every node; the root is its own parent.
pub(crate) fn chu_liu_edmonds(w: &[f64], n: usize, root: usize) -> Vec<usize> {
    let mut parent = vec![root; n];
    for v in 0..n {
        if v == root {
            continue;
        }
        let mut best = f64::NEG_INFINITY;
        for u in 0..n {
            if u != v && w[u * n + v] > best {
                best = w[u * n + v];
                parent[v] = u;
            }
        }
    }

    let Some(cycle) = find_cycle(&parent, root) else {
        return parent;
    };
    let mut in_cycle = vec![false; n];
    for &v in &cycle {
        in_cycle[v] = true;
    }

    // Old node -> contracted index; the cycle collapses into the last slot.
    let mut index = vec![0; n];
    let mut outside = Vec::new();
    for v in 0..n {
        if !in_cycle[v] {
            index[v] = outside.len();
            outside.push(v);
        }
    }
    let m = outside.len() + 1;
    let c = m - 1;
    for &v in &cycle {
        index[v] = c;
    }

    let mut cw = vec![f64::NEG_INFINITY; m * m];
    let mut enter = vec![usize::MAX; n];
    let mut leave = vec![usize::MAX; n];
    for &u in &outside {
        for &x in &outside {
            if u != x {
                cw[index[u] * m + index[x]] = w[u * n + x];
            }
        }
        let mut best = f64::NEG_INFINITY;
        for &v in &cycle {
            let gain = w[u * n + v] - w[parent[v] * n + v];
            if gain > best || enter[u] == usize::MAX {
                best = gain;
                enter[u] = v;
            }
        }
        cw[index[u] * m + c] = best;

        let mut best = f64::NEG_INFINITY;
        for &v in &cycle {
            if w[v * n + u] > best || leave[u] == usize::MAX {
                best = w[v * n + u];
                leave[u] = v;
            }
        }
        cw[c * m + index[u]] = best;
    }

    let contracted = chu_liu_edmonds(&cw, m, index[root]);

    let mut result = parent.clone();
    for &x in &outside {
        if x == root {
            continue;
        }
        let p = contracted[index[x]];
        result[x] = if p == c { leave[x] } else { outside[p] };
    }
    let u = outside[contracted[c]];
    result[enter[u]] = u;
    result
}

fn find_cycle(parent: &[usize], root: usize) -> Option<Vec<usize>> {
    let n = parent.len();
    let mut visited_from = vec![usize::MAX; n];
    for start in 0..n {
        let mut v = start;
        while v != root && visited_from[v] == usize::MAX {
            visited_from[v] = start;
            v = parent[v];
        }
        if v != root && visited_from[v] == start {
            let mut cycle = vec![v];
            let mut u = parent[v];
            while u != v {
                cycle.push(u);
                u = parent[u];
            }
            cycle.sort_unstable();
            return Some(cycle);
        }
    }
    None
}

/// Exhaustive search over all acyclic head vectors (N <= 8). Among equal
/// scores the lexicographically smallest head vector wins.
pub fn brute_force_decode(g: &ScoreMatrix) -> Result<ArgTree> {
    let n = g.nrows();
    if g.ncols() != n {
        return Err(Error::Shape(format!("score matrix is {}x{}", n, g.ncols())));
    }
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::Argument(format!(
            "brute-force decoding refuses N = {n} > {BRUTE_FORCE_MAX_N}"
        )));
    }
    if n == 0 {
        return ArgTree::from_heads(Vec::new());
    }
    let mut heads = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        if is_acyclic(&heads) {
            let s = tree_score(g, &heads);
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, heads.clone()));
            }
        }
        // odometer increment, last position fastest
        let mut k = n;
        loop {
            if k == 0 {
                let (_, h) = best.expect("self-loops everywhere is always acyclic");
                return ArgTree::from_heads(h);
            }
            k -= 1;
            heads[k] += 1;
            if heads[k] < n {
                break;
            }
            heads[k] = 0;
        }
    }
}

fn is_acyclic(heads: &[usize]) -> bool {
    let n = heads.len();
    (0..n).all(|start| {
        let mut v = start;
        for _ in 0..=n {
            if heads[v] == v {
                return true;
            }
            v = heads[v];
        }
        false
    })
}

/// Per-sentence distances of a decoded tree.
pub fn tree_to_predictions(tree: &ArgTree) -> Vec<i64> {
    tree.heads_to_distances()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_sentence() {
        let t = decode(&array![[0.3]]).unwrap();
        assert_eq!(t.heads(), &[0]);
    }

    #[test]
    fn breaks_greedy_two_cycle() {
        // rows prefer 1 <-> 2, which is cyclic
        let g = array![[5.0, 0.0, 0.0], [0.0, 0.0, 4.0], [0.0, 4.0, 0.0]];
        let t = decode(&g).unwrap();
        let b = brute_force_decode(&g).unwrap();
        assert_eq!(t.heads(), b.heads());
        assert_eq!(t.heads(), &[0, 0, 1]);
        assert_eq!(tree_score(&g, t.heads()), 9.0);
    }

    #[test]
    fn symmetric_tie_is_lexicographic() {
        let g = array![[1.0, 1.0], [1.0, 1.0]];
        assert_eq!(decode(&g).unwrap().heads(), &[0, 0]);
        assert_eq!(brute_force_decode(&g).unwrap().heads(), &[0, 0]);
    }

    #[test]
    fn brute_force_refuses_large_input() {
        assert!(brute_force_decode(&Array2::zeros((9, 9))).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(decode(&array![[f64::NAN]]).is_err());
    }

    #[test]
    fn cycle_detection_in_forced_prefix() {
        assert!(creates_forced_cycle(&[1], 1, 0));
        assert!(!creates_forced_cycle(&[0], 1, 0));
        assert!(!creates_forced_cycle(&[0, 0], 2, 2));
    }
}
