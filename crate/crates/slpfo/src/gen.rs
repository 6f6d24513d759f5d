//! Instance generators: deterministic families used by the benchmarks and
//! acceptance properties, and a seeded random apex-SLP generator for
//! oracle-equivalence testing. Every generator is a pure function of its
//! parameters (and seed), so fixtures are reproducible.

use crate::slp::{Production, Reference, Slp};
use crate::structure::Signature;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn edge_sig() -> Arc<Signature> {
    Arc::new(Signature::new(vec![("r1".into(), 2)]))
}

fn marked_sig() -> Arc<Signature> {
    Arc::new(Signature::new(vec![("r1".into(), 2), ("c".into(), 1)]))
}

fn prod(name: &str, sig: &Signature, contacts: usize, internals: &[&str]) -> Production {
    let labels: Vec<String> = (0..contacts)
        .map(|i| format!("k{}", i + 1))
        .chain(internals.iter().map(|s| s.to_string()))
        .collect();
    Production {
        name: name.to_string(),
        rank: contacts,
        n_local: labels.len(),
        contacts: (0..contacts).collect(),
        local_labels: labels,
        tuples: vec![Vec::new(); sig.rels.len()],
        refs: Vec::new(),
    }
}

/// Perfect binary tree of height `h` (2^(h+1)−1 nodes, 2^h leaves), edges
/// parent→child, compressed to O(h) productions by subtree sharing.
pub fn ptree(h: u32) -> Slp {
    let sig = edge_sig();
    let mut nts = Vec::new();
    // index 0 = initial; index i >= 1 produces the subtree of height h−i,
    // rooted at its single contact
    if h == 0 {
        let s = prod("S", &sig, 0, &["r"]);
        return Slp { sig, nts: vec![s], initial: 0 };
    }
    let mut s = prod("S", &sig, 0, &["r", "l", "rr"]);
    s.add_edge(0, 1);
    s.add_edge(0, 2);
    s.refs = vec![Reference { nt: 1, sigma: vec![1] }, Reference { nt: 1, sigma: vec![2] }];
    nts.push(s);
    for i in 1..=h {
        let name = format!("T{}", h - i);
        let mut t = if h - i == 0 {
            prod(&name, &sig, 1, &[])
        } else {
            let mut t = prod(&name, &sig, 1, &["l", "rr"]);
            t.add_edge(0, 1);
            t.add_edge(0, 2);
            t.refs = vec![
                Reference { nt: i as usize + 1, sigma: vec![1] },
                Reference { nt: i as usize + 1, sigma: vec![2] },
            ];
            t
        };
        t.rank = 1;
        nts.push(t);
    }
    Slp { sig, nts, initial: 0 }
}

/// Directed path family with |D| ∈ O(n): lengths follow L(1) = 1,
/// L(i) = 2·L(i−1) + 2, so `chain 1` is a single edge and the value grows
/// exponentially while the program stays linear.
pub fn chain(n: u32) -> Slp {
    assert!(n >= 1);
    let sig = edge_sig();
    let mut nts = Vec::new();
    let mut s = prod("S", &sig, 0, &["s", "t"]);
    s.refs = vec![Reference { nt: 1, sigma: vec![0, 1] }];
    nts.push(s);
    for i in (1..=n).rev() {
        let name = format!("C{i}");
        if i == 1 {
            let mut c = prod(&name, &sig, 2, &[]);
            c.add_edge(0, 1);
            nts.push(c);
        } else {
            let mut c = prod(&name, &sig, 2, &["p", "m", "q"]);
            c.add_edge(0, 2); // a → p
            c.add_edge(4, 1); // q → b
            let child = nts.len() + 1;
            c.refs = vec![
                Reference { nt: child, sigma: vec![2, 3] },
                Reference { nt: child, sigma: vec![3, 4] },
            ];
            nts.push(c);
        }
    }
    Slp { sig, nts, initial: 0 }
}

/// Number of edges produced by `chain(n)`.
pub fn chain_len(n: u32) -> u64 {
    (1..n).fold(1u64, |l, _| 2 * l + 2)
}

/// 2×n strip: n rungs a_i→b_i plus rails a_i→a_{i+1}, b_i→b_{i+1};
/// one production per column, degree ≤ 3.
pub fn grid_strip(n: usize) -> Slp {
    assert!(n >= 1);
    let sig = edge_sig();
    let mut nts = Vec::new();
    let mut s = prod("S", &sig, 0, &["a1", "b1"]);
    s.add_edge(0, 1);
    if n >= 2 {
        s.refs = vec![Reference { nt: 1, sigma: vec![0, 1] }];
    }
    nts.push(s);
    for j in 2..=n {
        let name = format!("K{j}");
        let mut k = prod(&name, &sig, 2, &["c", "d"]);
        k.add_edge(0, 2); // rail a → c
        k.add_edge(1, 3); // rail b → d
        k.add_edge(2, 3); // rung c → d
        if j < n {
            k.refs = vec![Reference { nt: nts.len() + 1, sigma: vec![2, 3] }];
        }
        nts.push(k);
    }
    Slp { sig, nts, initial: 0 }
}

impl Production {
    fn add_edge(&mut self, a: usize, b: usize) {
        self.tuples[0].push(vec![a, b]);
    }
}

pub struct RandomParams {
    pub max_nts: usize,
    pub max_val: usize,
    pub max_degree: usize,
    /// upper bound on references per production
    pub max_refs: usize,
}

impl Default for RandomParams {
    fn default() -> Self {
        RandomParams { max_nts: 12, max_val: 5000, max_degree: 4, max_refs: 3 }
    }
}

/// Seeded random apex SLP over `r1/2, c/1`; rejects and retries until the
/// instance is valid, apex, within the value-size and degree caps.
pub fn random_apex(seed: u64, params: &RandomParams) -> Slp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        if let Some(slp) = try_random(&mut rng, params) {
            return slp;
        }
    }
}

fn try_random(rng: &mut ChaCha8Rng, params: &RandomParams) -> Option<Slp> {
    let sig = marked_sig();
    let n_nts = rng.gen_range(2..=params.max_nts.max(2));
    let mut ranks = vec![0usize; n_nts];
    for r in ranks.iter_mut().skip(1) {
        *r = rng.gen_range(1..=2);
    }
    let mut nts: Vec<Production> = Vec::with_capacity(n_nts);
    for (i, &rank) in ranks.iter().enumerate() {
        let internals = rng.gen_range(rank.max(1)..=3 + rank);
        let names: Vec<String> = (0..internals).map(|v| format!("n{v}")).collect();
        let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let name = if i == 0 { "S".to_string() } else { format!("N{i}") };
        let mut p = prod(&name, &sig, rank, &name_refs);
        // sparse local edges and marks
        let n_edges = rng.gen_range(0..=p.n_local);
        for _ in 0..n_edges {
            let a = rng.gen_range(0..p.n_local);
            let b = rng.gen_range(0..p.n_local);
            if a != b {
                p.tuples[0].push(vec![a, b]);
            }
        }
        for v in 0..p.n_local {
            if rng.gen_bool(0.2) {
                p.tuples[1].push(vec![v]);
            }
        }
        nts.push(p);
    }
    // references point to higher indices (acyclic); every nonterminal is
    // reachable: j gets a mandatory parent in 0..j
    for j in 1..n_nts {
        let parent = rng.gen_range(0..j);
        add_ref(rng, &mut nts, parent, j, &ranks)?;
    }
    for i in 0..n_nts {
        let extra = rng.gen_range(0..=params.max_refs.saturating_sub(nts[i].refs.len()));
        for _ in 0..extra {
            if i + 1 >= n_nts {
                break;
            }
            let j = rng.gen_range(i + 1..n_nts);
            add_ref(rng, &mut nts, i, j, &ranks)?;
        }
    }
    let slp = Slp { sig, nts, initial: 0 };
    let report = slp.validate();
    if !report.ok() || !report.apex {
        return None;
    }
    let counts = slp.val_node_counts().ok()?;
    if counts[slp.initial] > num_bigint::BigUint::from(params.max_val) {
        return None;
    }
    if slp.val_degree().ok()? > params.max_degree {
        return None;
    }
    Some(slp)
}

fn add_ref(
    rng: &mut ChaCha8Rng,
    nts: &mut [Production],
    host: usize,
    child: usize,
    ranks: &[usize],
) -> Option<()> {
    let internals = nts[host].internals();
    if internals.len() < ranks[child] {
        return None;
    }
    let mut pool = internals;
    let mut sigma = Vec::with_capacity(ranks[child]);
    for _ in 0..ranks[child] {
        let at = rng.gen_range(0..pool.len());
        sigma.push(pool.swap_remove(at));
    }
    nts[host].refs.push(Reference { nt: child, sigma });
    Some(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slp::parse_slp;
    use crate::slp::write_slp;

    #[test]
    fn ptree_small_decompresses_to_perfect_tree() {
        for h in 0..=3u32 {
            let slp = ptree(h);
            assert!(slp.validate().ok());
            let (s, _) = slp.decompress(1 << 20).unwrap();
            let n = (1usize << (h + 1)) - 1;
            assert_eq!(s.n, n);
            assert_eq!(s.tuples[0].len(), n - 1);
            let leaves = (0..s.n)
                .filter(|&v| s.tuples[0].iter().all(|t| t[0] != v))
                .count();
            assert_eq!(leaves, 1usize << h);
        }
    }

    #[test]
    fn ptree_size_is_linear() {
        let s10 = ptree(10).size();
        let s20 = ptree(20).size();
        let s40 = ptree(40).size();
        assert_eq!(s20 - s10, (s40 - s20) / 2);
    }

    #[test]
    fn chain_lengths() {
        assert_eq!(chain_len(1), 1);
        assert_eq!(chain_len(2), 4);
        assert_eq!(chain_len(3), 10);
        for n in 1..=4u32 {
            let slp = chain(n);
            assert!(slp.validate().ok());
            let (s, _) = slp.decompress(1 << 20).unwrap();
            assert_eq!(s.tuples[0].len() as u64, chain_len(n));
            assert_eq!(s.n as u64, chain_len(n) + 1);
            assert!(s.max_degree() <= 2);
        }
    }

    #[test]
    fn grid_strip_shape() {
        for n in 1..=5usize {
            let slp = grid_strip(n);
            assert!(slp.validate().ok());
            let (s, _) = slp.decompress(1 << 20).unwrap();
            assert_eq!(s.n, 2 * n);
            assert_eq!(s.tuples[0].len(), n + 2 * (n - 1));
            assert!(s.max_degree() <= 3);
        }
    }

    #[test]
    fn random_apex_is_deterministic_and_valid() {
        let params = RandomParams::default();
        for seed in 0..20u64 {
            let a = random_apex(seed, &params);
            let b = random_apex(seed, &params);
            assert_eq!(write_slp(&a), write_slp(&b));
            let report = a.validate();
            assert!(report.ok() && report.apex);
            assert!(a.val_degree().unwrap() <= params.max_degree);
            // text round-trip
            let back = parse_slp(&write_slp(&a)).unwrap();
            assert_eq!(write_slp(&back), write_slp(&a));
        }
    }
}
