//! Maximum spanning arborescence decoding (Chu-Liu/Edmonds) over dense arc
//! scores, with an optional single-root constraint.
//!
//! `scores[h][d]` is the score of head `h` governing dependent `d`; node 0
//! is the artificial root. The root never depends on anything and, under the
//! single-root constraint, heads exactly one token.

use crate::mat::Mat;

/// Heads (indexed by dependent, 1-based positions 1..=n; entry 0 unused) of
/// the maximum-score arborescence rooted at node 0.
pub fn mst_decode(scores: &Mat, single_root: bool) -> Vec<usize> {
    let n = scores.rows();
    assert_eq!(n, scores.cols(), "score matrix must be square");
    if n <= 1 {
        return vec![0; n];
    }
    if n == 2 {
        return vec![0, 0];
    }
    if !single_root {
        return decode_free(scores);
    }

    // Best arborescence among those with exactly one child of the root:
    // try each candidate root child with the rest of the root row masked.
    let mut best: Option<(f64, Vec<usize>)> = None;
    for candidate in 1..n {
        let mut masked = scores.clone();
        for j in 1..n {
            if j != candidate {
                masked.set(0, j, f64::NEG_INFINITY);
            }
        }
        let heads = decode_free(&masked);
        let total = tree_score(scores, &heads);
        if best.as_ref().map_or(true, |(s, _)| total > *s) {
            best = Some((total, heads));
        }
    }
    best.expect("n >= 2 always yields a candidate").1
}

/// Total score of a head assignment under `scores`.
pub fn tree_score(scores: &Mat, heads: &[usize]) -> f64 {
    let mut total = 0.0;
    for (dep, &head) in heads.iter().enumerate().skip(1) {
        total += scores.get(head, dep);
    }
    total
}

/// True iff every non-root node has one head and reaches the root.
pub fn is_arborescence(heads: &[usize]) -> bool {
    let n = heads.len();
    for start in 1..n {
        let mut cur = start;
        let mut steps = 0;
        while cur != 0 {
            if heads[cur] == cur {
                return false;
            }
            cur = heads[cur];
            steps += 1;
            if steps > n {
                return false;
            }
        }
    }
    true
}

fn decode_free(scores: &Mat) -> Vec<usize> {
    let n = scores.rows();
    let mut working = scores.clone();
    // The root has no head; nobody may head themselves.
    for j in 0..n {
        working.set(j, j, f64::NEG_INFINITY);
        working.set(j, 0, f64::NEG_INFINITY);
    }
    let mut active = vec![true; n];
    recurse(&mut working, &mut active)
}

fn recurse(scores: &mut Mat, active: &mut [bool]) -> Vec<usize> {
    let n = scores.rows();

    // Greedy best head for each active non-root node.
    let mut parents = vec![0usize; n];
    for dep in 1..n {
        if !active[dep] {
            continue;
        }
        let mut best = usize::MAX;
        for head in 0..n {
            if head == dep || !active[head] {
                continue;
            }
            if best == usize::MAX || scores.get(head, dep) > scores.get(best, dep) {
                best = head;
            }
        }
        parents[dep] = best;
    }

    let Some(cycle) = find_cycle(&parents, active) else {
        return parents;
    };

    // Contract the cycle into its first vertex.
    let rep = cycle[0];
    let in_cycle = vec_to_mask(&cycle, n);
    let cycle_sum: f64 = cycle.iter().map(|&v| scores.get(parents[v], v)).sum();
    // Vertices outside the cycle at *this* level; deeper recursions mutate
    // `active`, so the expansion below must use this snapshot.
    let outside: Vec<usize> = (0..n)
        .filter(|&u| active[u] && !in_cycle[u])
        .collect();
    for &v in &cycle[1..] {
        active[v] = false;
    }

    // For every outside vertex, the best replacement edges into and out of
    // the contracted node.
    let mut incoming_origin = vec![usize::MAX; n]; // outside u -> cycle vertex
    let mut outgoing_origin = vec![usize::MAX; n]; // cycle vertex -> outside w
    for &u in &outside {
        let mut best_in = f64::NEG_INFINITY;
        let mut best_in_v = usize::MAX;
        let mut best_out = f64::NEG_INFINITY;
        let mut best_out_v = usize::MAX;
        for &v in &cycle {
            let out_score = scores.get(v, u);
            if out_score > best_out {
                best_out = out_score;
                best_out_v = v;
            }
            let enter = scores.get(u, v);
            let candidate = if enter == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                cycle_sum + enter - scores.get(parents[v], v)
            };
            if candidate > best_in {
                best_in = candidate;
                best_in_v = v;
            }
        }
        scores.set(u, rep, best_in);
        scores.set(rep, u, best_out);
        incoming_origin[u] = best_in_v;
        outgoing_origin[u] = best_out_v;
    }

    let contracted = recurse(scores, active);

    // Expand: the chosen edge into the contraction kicks out one cycle edge.
    let mut result = contracted;
    let outer_parent = result[rep];
    let broken = incoming_origin[outer_parent];
    debug_assert_ne!(broken, usize::MAX, "contraction must have an incoming edge");
    for &v in &cycle {
        result[v] = if v == broken { outer_parent } else { parents[v] };
    }
    // Every outside node whose chosen head is the contraction really hangs
    // off the cycle vertex that supplied the replacement edge.
    for &w in &outside {
        if result[w] == rep {
            result[w] = outgoing_origin[w];
        }
    }
    result
}

fn vec_to_mask(cycle: &[usize], n: usize) -> Vec<bool> {
    let mut mask = vec![false; n];
    for &v in cycle {
        mask[v] = true;
    }
    mask
}

fn find_cycle(parents: &[usize], active: &[bool]) -> Option<Vec<usize>> {
    let n = parents.len();
    // 0 = unvisited, 1 = on current path, 2 = done.
    let mut state = vec![0u8; n];
    state[0] = 2;
    for start in 1..n {
        if !active[start] || state[start] != 0 {
            continue;
        }
        let mut path = Vec::new();
        let mut cur = start;
        while state[cur] == 0 {
            state[cur] = 1;
            path.push(cur);
            cur = parents[cur];
        }
        if state[cur] == 1 {
            // Found a cycle; extract it from the path.
            let pos = path.iter().position(|&v| v == cur).unwrap();
            let cycle: Vec<usize> = path[pos..].to_vec();
            return Some(cycle);
        }
        for v in path {
            state[v] = 2;
        }
    }
    None
}

/// Exhaustive maximum over all arborescences; for cross-checking the decoder
/// on small inputs.
pub fn brute_force_decode(scores: &Mat, single_root: bool) -> (f64, Vec<usize>) {
    let n = scores.rows();
    assert!(n >= 1 && n <= 8, "brute force is exponential");
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut heads = vec![0usize; n];
    enumerate(scores, single_root, 1, &mut heads, &mut best);
    best.expect("at least the flat tree exists")
}

fn enumerate(
    scores: &Mat,
    single_root: bool,
    dep: usize,
    heads: &mut Vec<usize>,
    best: &mut Option<(f64, Vec<usize>)>,
) {
    let n = scores.rows();
    if dep == n {
        if !is_arborescence(heads) {
            return;
        }
        if single_root && heads.iter().skip(1).filter(|&&h| h == 0).count() != 1 {
            return;
        }
        let total = tree_score(scores, heads);
        if best.as_ref().map_or(true, |(s, _)| total > *s) {
            *best = Some((total, heads.clone()));
        }
        return;
    }
    for head in 0..n {
        if head == dep {
            continue;
        }
        heads[dep] = head;
        enumerate(scores, single_root, dep + 1, heads, best);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_token_attaches_to_root() {
        let scores = Mat::from_vec(2, 2, vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(mst_decode(&scores, true), vec![0, 0]);
    }

    #[test]
    fn greedy_cycle_is_broken_optimally() {
        // Greedy picks 2->1 and 1->2 (a cycle); the optimum keeps 1<-root.
        let mut scores = Mat::zeros(3, 3);
        scores.set(0, 1, 9.0);
        scores.set(0, 2, 0.0);
        scores.set(2, 1, 10.0);
        scores.set(1, 2, 10.0);
        let heads = mst_decode(&scores, false);
        assert_eq!(heads, vec![0, 0, 1]);
        let (best, _) = brute_force_decode(&scores, false);
        assert_eq!(tree_score(&scores, &heads), best);
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for case in 0..300 {
            let n = rng.gen_range(2..=5); // root + up to 4 tokens
            let scores = Mat::from_fn(n, n, |_, _| rng.gen_range(-10.0..10.0));
            for single_root in [false, true] {
                let heads = mst_decode(&scores, single_root);
                assert!(is_arborescence(&heads), "case {case}: invalid tree");
                if single_root {
                    let roots = heads.iter().skip(1).filter(|&&h| h == 0).count();
                    assert_eq!(roots, 1, "case {case}: root children");
                }
                let (best, _) = brute_force_decode(&scores, single_root);
                let got = tree_score(&scores, &heads);
                assert_eq!(
                    got, best,
                    "case {case} single_root={single_root}: {got} vs {best}"
                );
            }
        }
    }

    #[test]
    fn structural_invariants_on_larger_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let n = rng.gen_range(2..=51);
            let scores = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            for single_root in [false, true] {
                let heads = mst_decode(&scores, single_root);
                assert_eq!(heads.len(), n);
                assert!(is_arborescence(&heads));
                if single_root {
                    assert_eq!(heads.iter().skip(1).filter(|&&h| h == 0).count(), 1);
                }
            }
        }
    }

    #[test]
    fn empty_input() {
        let scores = Mat::zeros(0, 0);
        assert!(mst_decode(&scores, true).is_empty());
    }
}
