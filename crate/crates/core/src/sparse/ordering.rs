//! Fill-reducing orderings.
//!
//! [`minimum_degree`] is an approximate minimum degree ordering on the
//! quotient graph: eliminated nodes become elements, degrees are the
//! AMD-style upper bounds, indistinguishable variables are merged into
//! supervariables, and elements covered by a new element are absorbed.
//! Ties are broken by the smallest node index, so the ordering is
//! deterministic.

use std::collections::{BTreeSet, HashMap};

/// Choice of symmetric permutation before factorization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Ordering {
    Natural,
    #[default]
    MinimumDegree,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Status {
    Variable,
    /// Merged into another supervariable.
    Merged,
    Element,
    /// Element absorbed into a newer one.
    Absorbed,
}

/// Returns `perm` with `perm[new] = old` for the symmetric pattern given as
/// adjacency lists (the diagonal may or may not be listed).
pub fn minimum_degree(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let mut status = vec![Status::Variable; n];
    let mut var_adj: Vec<Vec<usize>> = adjacency
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut v: Vec<usize> = a.iter().copied().filter(|&j| j != i).collect();
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect();
    let mut elem_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut elem_vars: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut weight = vec![1usize; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut degree: Vec<usize> = var_adj.iter().map(Vec::len).collect();
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|i| (degree[i], i)).collect();

    let mut order = Vec::with_capacity(n);
    let mut remaining = n;
    // mark[v] == stamp means v is in the current pivot's element
    let mut mark = vec![0usize; n];
    let mut stamp = 0usize;
    // external weight |L_e \ L_p| of elements touched in this step
    let mut ext: Vec<isize> = vec![-1; n];

    while let Some((_, pivot)) = queue.pop_first() {
        stamp += 1;
        let mut lp: Vec<usize> = Vec::new();
        mark[pivot] = stamp;
        for &e in &elem_adj[pivot] {
            if status[e] != Status::Element {
                continue;
            }
            for &v in &elem_vars[e] {
                if status[v] == Status::Variable && mark[v] != stamp {
                    mark[v] = stamp;
                    lp.push(v);
                }
            }
            status[e] = Status::Absorbed;
            elem_vars[e] = Vec::new();
        }
        for &v in &var_adj[pivot] {
            if status[v] == Status::Variable && mark[v] != stamp {
                mark[v] = stamp;
                lp.push(v);
            }
        }
        lp.sort_unstable();

        status[pivot] = Status::Element;
        var_adj[pivot] = Vec::new();
        elem_adj[pivot] = Vec::new();
        order.extend_from_slice(&members[pivot]);
        remaining -= weight[pivot];

        for &i in &lp {
            queue.remove(&(degree[i], i));
        }
        let lp_weight: usize = lp.iter().map(|&i| weight[i]).sum();

        // Prune adjacency of the new element's variables: variables now
        // reachable through the pivot element are dropped from A_i.
        for &i in &lp {
            var_adj[i].retain(|&v| status[v] == Status::Variable && mark[v] != stamp);
            elem_adj[i].retain(|&e| status[e] == Status::Element);
        }

        // |L_e \ L_p| for every other element adjacent to L_p
        let mut touched = Vec::new();
        for &i in &lp {
            for &e in &elem_adj[i] {
                if ext[e] < 0 {
                    elem_vars[e].retain(|&v| status[v] == Status::Variable);
                    ext[e] = elem_vars[e].iter().map(|&v| weight[v] as isize).sum();
                    touched.push(e);
                }
                ext[e] -= weight[i] as isize;
            }
        }
        for &e in &touched {
            if ext[e] == 0 {
                // covered by the pivot element
                status[e] = Status::Absorbed;
                elem_vars[e] = Vec::new();
            }
        }

        for &i in &lp {
            elem_adj[i].retain(|&e| status[e] == Status::Element);
            let mut d = lp_weight - weight[i];
            for &v in &var_adj[i] {
                d += weight[v];
            }
            for &e in &elem_adj[i] {
                d += ext[e].max(0) as usize;
            }
            elem_adj[i].push(pivot);
            let bound = degree[i] + lp_weight - weight[i];
            degree[i] = d.min(bound).min(remaining - weight[i]);
        }
        for &e in &touched {
            ext[e] = -1;
        }

        merge_indistinguishable(
            &lp,
            &mut status,
            &var_adj,
            &mut elem_adj,
            &mut weight,
            &mut members,
            &mut degree,
        );

        let alive: Vec<usize> = lp
            .into_iter()
            .filter(|&i| status[i] == Status::Variable)
            .collect();
        for &i in &alive {
            queue.insert((degree[i], i));
        }
        elem_vars[pivot] = alive;
    }
    debug_assert_eq!(order.len(), n);
    order
}

// Variables of the new element with identical element and variable
// adjacency are merged into the smallest-index one.
fn merge_indistinguishable(
    lp: &[usize],
    status: &mut [Status],
    var_adj: &[Vec<usize>],
    elem_adj: &mut [Vec<usize>],
    weight: &mut [usize],
    members: &mut [Vec<usize>],
    degree: &mut [usize],
) {
    let mut buckets: HashMap<u64, Vec<usize>> = HashMap::new();
    for &i in lp {
        elem_adj[i].sort_unstable();
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &x in elem_adj[i].iter().chain(std::iter::once(&usize::MAX)).chain(&var_adj[i]) {
            h ^= x as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        buckets.entry(h).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = buckets.into_values().filter(|g| g.len() > 1).collect();
    groups.sort_unstable();
    for group in groups {
        for (x, &i) in group.iter().enumerate() {
            if status[i] != Status::Variable {
                continue;
            }
            for &j in &group[x + 1..] {
                if status[j] != Status::Variable {
                    continue;
                }
                if elem_adj[i] == elem_adj[j] && var_adj[i] == var_adj[j] {
                    status[j] = Status::Merged;
                    weight[i] += weight[j];
                    degree[i] = degree[i].saturating_sub(weight[j]);
                    let moved = std::mem::take(&mut members[j]);
                    members[i].extend(moved);
                }
            }
        }
    }
}

/// Inverse permutation: `inv[perm[k]] = k`.
pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn is_permutation(p: &[usize]) -> bool {
        let mut seen = vec![false; p.len()];
        p.iter().all(|&i| i < p.len() && !std::mem::replace(&mut seen[i], true))
    }

    fn grid_graph(side: usize) -> Vec<Vec<usize>> {
        let idx = |x: usize, y: usize| y * side + x;
        let mut adj = vec![Vec::new(); side * side];
        for y in 0..side {
            for x in 0..side {
                if x + 1 < side {
                    adj[idx(x, y)].push(idx(x + 1, y));
                    adj[idx(x + 1, y)].push(idx(x, y));
                }
                if y + 1 < side {
                    adj[idx(x, y)].push(idx(x, y + 1));
                    adj[idx(x, y + 1)].push(idx(x, y));
                }
            }
        }
        adj
    }

    #[test]
    fn star_graph_eliminates_leaves_first() {
        // node 0 is the hub; with one leaf left the two are interchangeable
        let n = 6;
        let mut adj = vec![Vec::new(); n];
        for i in 1..n {
            adj[0].push(i);
            adj[i].push(0);
        }
        let perm = minimum_degree(&adj);
        assert!(is_permutation(&perm));
        assert!(perm[n - 2..].contains(&0), "{perm:?}");
    }

    #[test]
    fn empty_and_diagonal_graphs() {
        assert!(minimum_degree(&[]).is_empty());
        let perm = minimum_degree(&[vec![0], vec![1], vec![2]]);
        assert_eq!(perm, vec![0, 1, 2]);
    }

    #[test]
    fn deterministic_on_grids() {
        let adj = grid_graph(12);
        let a = minimum_degree(&adj);
        let b = minimum_degree(&adj);
        assert_eq!(a, b);
        assert!(is_permutation(&a));
    }

    #[test]
    fn invert_round_trip() {
        let perm = vec![2, 0, 3, 1];
        let inv = invert(&perm);
        for (k, &p) in perm.iter().enumerate() {
            assert_eq!(inv[p], k);
        }
    }

    proptest::proptest! {
        #[test]
        fn random_graphs_give_permutations(edges in proptest::collection::vec((0usize..40, 0usize..40), 0..200)) {
            let mut adj = vec![Vec::new(); 40];
            for (a, b) in edges {
                adj[a].push(b);
                adj[b].push(a);
            }
            let perm = minimum_degree(&adj);
            proptest::prop_assert!(is_permutation(&perm));
        }
    }
}
