//! Lexicographic path enumeration in ordered dags.
//!
//! The dag of an SLP has one node per nonterminal and an ordered edge per
//! reference. Extending every node `A` with a leaf `A'` as child 0 makes
//! initial paths of the dag correspond to initial-to-leaf paths of the
//! extension, and the weight of a path (sum of `edgeWeight`) equals its rank
//! among all initial paths in lexicographic order.
//!
//! For enumeration restricted to a set of useful leaves, the extension is
//! pruned and its maximal non-branching paths are contracted; paths of the
//! contraction are represented as sequences of triples where maximal runs of
//! first edges (`min`) and last edges (`max`) are contracted again. This
//! keeps `next_path` constant-time: every node of the contraction has
//! out-degree 0 or at least 2, so every min or middle edge has a successor.

use crate::slp::{DagPath, Slp};
use crate::Error;
use num_bigint::BigUint;
use num_traits::Zero;
use std::sync::Arc;

/// Step counter for delay and preprocessing measurements.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Steps(pub u64);

impl Steps {
    #[inline]
    pub fn bump(&mut self) {
        self.0 += 1;
    }
    #[inline]
    pub fn add(&mut self, n: u64) {
        self.0 += n;
    }
}

#[derive(Debug, Clone)]
pub struct OrderedDag {
    pub initial: usize,
    /// gamma: ordered children, one entry per (1-based) edge index
    pub gamma: Vec<Vec<usize>>,
}

impl OrderedDag {
    pub fn from_slp(slp: &Slp) -> Self {
        OrderedDag {
            initial: slp.initial,
            gamma: slp
                .nts
                .iter()
                .map(|p| p.refs.iter().map(|r| r.nt).collect())
                .collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.gamma.len()
    }

    /// Topological order (referents before referrers); errors on cycles.
    pub fn topo(&self) -> crate::Result<Vec<usize>> {
        let n = self.n();
        let mut state = vec![0u8; n];
        let mut order = Vec::with_capacity(n);
        for root in 0..n {
            if state[root] != 0 {
                continue;
            }
            let mut stack = vec![(root, 0usize)];
            state[root] = 1;
            while let Some(&mut (v, ref mut i)) = stack.last_mut() {
                if *i < self.gamma[v].len() {
                    let w = self.gamma[v][*i];
                    *i += 1;
                    match state[w] {
                        0 => {
                            state[w] = 1;
                            stack.push((w, 0));
                        }
                        1 => return Err(Error::Invalid(format!("dag has a cycle through {w}"))),
                        _ => {}
                    }
                } else {
                    state[v] = 2;
                    order.push(v);
                    stack.pop();
                }
            }
        }
        Ok(order)
    }
}

/// Node ids of the extended dag: original `A` = `A`, leaf `A'` = `n + A`.
#[inline]
pub fn prime(n: usize, a: usize) -> usize {
    n + a
}

/// The extended, weighted dag: `numberPaths`, per-edge weights, and
/// initial-to-node path counts.
#[derive(Debug)]
pub struct WeightedDag {
    pub dag: OrderedDag,
    pub n: usize,
    /// children of original nodes in the extension: position 0 = leaf,
    /// position i = gamma[i-1]
    pub children: Vec<Vec<usize>>,
    /// indexed by extended node id
    pub number_paths: Vec<BigUint>,
    /// edge_weight[a][i] = sum of number_paths over children before position i
    pub edge_weight: Vec<Vec<BigUint>>,
    /// number of initial paths of the dag ending at each original node
    /// (0 when unreachable)
    pub p_count: Vec<BigUint>,
    pub build_steps: u64,
}

pub fn extend_and_weight(dag: OrderedDag) -> crate::Result<WeightedDag> {
    let n = dag.n();
    let order = dag.topo()?;
    let mut steps = 0u64;
    let mut children = Vec::with_capacity(n);
    for a in 0..n {
        let mut c = Vec::with_capacity(dag.gamma[a].len() + 1);
        c.push(prime(n, a));
        c.extend(dag.gamma[a].iter().copied());
        children.push(c);
    }
    let mut number_paths = vec![BigUint::zero(); 2 * n];
    for a in 0..n {
        number_paths[prime(n, a)] = BigUint::from(1u32);
    }
    let mut edge_weight: Vec<Vec<BigUint>> = vec![Vec::new(); n];
    for &a in &order {
        let mut acc = BigUint::zero();
        let mut ws = Vec::with_capacity(children[a].len());
        for &c in &children[a] {
            steps += 1;
            ws.push(acc.clone());
            acc += &number_paths[c];
        }
        number_paths[a] = acc;
        edge_weight[a] = ws;
    }
    let mut p_count = vec![BigUint::zero(); n];
    p_count[dag.initial] += 1u32;
    for &a in order.iter().rev() {
        if p_count[a].is_zero() {
            continue;
        }
        let pa = p_count[a].clone();
        for &b in &dag.gamma[a] {
            steps += 1;
            p_count[b] += &pa;
        }
    }
    Ok(WeightedDag { dag, n, children, number_paths, edge_weight, p_count, build_steps: steps })
}

impl WeightedDag {
    /// lex rank of a path among all paths starting at the same node:
    /// the sum of its edge weights.
    pub fn lex_of_path(&self, path: &DagPath) -> BigUint {
        let mut total = BigUint::zero();
        let mut a = path.start;
        for &i in &path.edges {
            total += &self.edge_weight[a][i as usize];
            a = self.dag.gamma[a][i as usize - 1];
        }
        total
    }

    /// Inverse of `lex_of_path` for initial paths: the unique initial path of
    /// the given rank, if in range.
    pub fn resolve_lex(&self, rank: &BigUint) -> Option<DagPath> {
        let initial = self.dag.initial;
        if *rank >= self.number_paths[initial] {
            return None;
        }
        let mut rest = rank.clone();
        let mut a = initial;
        let mut edges = Vec::new();
        loop {
            // largest child position whose edge weight fits; position 0 ends
            let ws = &self.edge_weight[a];
            let mut pos = 0;
            for (i, w) in ws.iter().enumerate() {
                if *w <= rest {
                    pos = i;
                } else {
                    break;
                }
            }
            rest -= &ws[pos];
            if pos == 0 {
                debug_assert!(rest.is_zero());
                return Some(DagPath { start: initial, edges });
            }
            edges.push(pos as u32);
            a = self.dag.gamma[a][pos - 1];
        }
    }
}

// ---- level ancestors -------------------------------------------------------

/// Level-ancestor index over a forest, answering "ancestor of `v` at depth
/// `d`" in worst-case constant time via jump pointers plus ladders
/// (long-path decomposition, each ladder doubled upward). The
/// `la-binary-lifting` feature swaps queries for plain binary lifting
/// (O(log n) per query).
#[derive(Debug)]
pub struct LevelAncestor {
    parent: Vec<Option<usize>>,
    depth: Vec<u32>,
    jump: Vec<Vec<usize>>,
    ladder_of: Vec<usize>,
    ladder_pos: Vec<usize>,
    ladders: Vec<Vec<usize>>,
    pub build_steps: u64,
}

impl LevelAncestor {
    pub fn build(parent: Vec<Option<usize>>) -> Self {
        let m = parent.len();
        let mut steps = 0u64;
        let mut depth = vec![0u32; m];
        let mut order: Vec<usize> = Vec::with_capacity(m);
        {
            let mut children: Vec<Vec<usize>> = vec![Vec::new(); m];
            for v in 0..m {
                match parent[v] {
                    Some(p) => children[p].push(v),
                    None => order.push(v),
                }
            }
            let mut i = 0;
            while i < order.len() {
                let v = order[i];
                i += 1;
                for &c in &children[v] {
                    depth[c] = depth[v] + 1;
                    order.push(c);
                    steps += 1;
                }
            }
        }
        // height and preferred child for long paths
        let mut height = vec![0u32; m];
        let mut pref: Vec<Option<usize>> = vec![None; m];
        for &v in order.iter().rev() {
            if let Some(p) = parent[v] {
                if height[v] + 1 > height[p] || (height[v] + 1 == height[p] && pref[p].is_none()) {
                    height[p] = height[v] + 1;
                    pref[p] = Some(v);
                }
                steps += 1;
            }
        }
        let mut ladder_of = vec![usize::MAX; m];
        let mut ladder_pos = vec![0usize; m];
        let mut ladders: Vec<Vec<usize>> = Vec::new();
        for &v in &order {
            // v is a path top if it is not the preferred child of its parent
            let is_top = match parent[v] {
                Some(p) => pref[p] != Some(v),
                None => true,
            };
            if !is_top {
                continue;
            }
            // path: preferred chain down from v
            let mut path = vec![v];
            let mut x = v;
            while let Some(c) = pref[x] {
                path.push(c);
                x = c;
            }
            let len = path.len();
            // double upward: prepend up to len ancestors above v
            let mut up = Vec::new();
            let mut x = v;
            for _ in 0..len {
                match parent[x] {
                    Some(p) => {
                        up.push(p);
                        x = p;
                    }
                    None => break,
                }
            }
            up.reverse();
            let offset = up.len();
            let mut ladder = up;
            ladder.extend(path.iter().copied());
            let id = ladders.len();
            for (i, &u) in ladder.iter().enumerate().skip(offset) {
                ladder_of[u] = id;
                ladder_pos[u] = i;
            }
            steps += ladder.len() as u64;
            ladders.push(ladder);
        }
        // jump pointers
        let mut jump: Vec<Vec<usize>> = vec![Vec::new(); m];
        for &v in &order {
            let mut js = Vec::new();
            if let Some(p) = parent[v] {
                js.push(p);
                let mut k = 0;
                while let Some(&a) = jump[js[k]].get(k) {
                    js.push(a);
                    k += 1;
                }
            }
            steps += js.len() as u64;
            jump[v] = js;
        }
        LevelAncestor { parent, depth, jump, ladder_of, ladder_pos, ladders, build_steps: steps }
    }

    pub fn depth(&self, v: usize) -> u32 {
        self.depth[v]
    }

    /// Ancestor of `v` at depth `d` (d <= depth(v)).
    #[cfg(not(feature = "la-binary-lifting"))]
    pub fn ancestor_at_depth(&self, v: usize, d: u32, steps: &mut Steps) -> usize {
        steps.bump();
        let k = self.depth[v] - d;
        if k == 0 {
            return v;
        }
        let i = (u32::BITS - 1 - k.leading_zeros()) as usize; // floor(log2 k)
        let w = self.jump[v][i];
        let rest = (k - (1 << i)) as usize;
        // w has height >= 2^i > rest, so its ladder covers the target
        let lid = self.ladder_of[w];
        let pos = self.ladder_pos[w];
        self.ladders[lid][pos - rest]
    }

    #[cfg(feature = "la-binary-lifting")]
    pub fn ancestor_at_depth(&self, v: usize, d: u32, steps: &mut Steps) -> usize {
        let mut k = self.depth[v] - d;
        let mut v = v;
        while k > 0 {
            steps.bump();
            let i = (u32::BITS - 1 - k.leading_zeros()) as usize;
            v = self.jump[v][i];
            k -= 1 << i;
        }
        v
    }

    /// Child of ancestor `u` on the path towards descendant `v`.
    pub fn next_link(&self, u: usize, v: usize, steps: &mut Steps) -> usize {
        debug_assert!(self.depth[v] > self.depth[u]);
        self.ancestor_at_depth(v, self.depth[u] + 1, steps)
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }
}

// ---- pruning and contraction ------------------------------------------------

/// A dag(D)' edge in original indexing (0 = leaf edge).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrimeEdge {
    pub from: usize,
    pub orig: u32,
    pub to: usize,
}

/// An edge of the contraction: a maximal non-branching path of the pruned
/// extension, with its endpoints, total weight, and enough chain information
/// to un-contract it edge by edge.
#[derive(Debug, Clone)]
pub struct CEdge {
    pub to: usize,
    pub weight: BigUint,
    /// first node after `from` on the underlying path
    pub first: usize,
    /// original edge index of the path's first edge
    pub orig_first: u32,
    /// weight of the path's first edge alone
    pub w_first: BigUint,
    /// whether the underlying path has length >= 2
    pub len_ge2: bool,
}

/// The pruned, index-normalized, path-contracted extension for one set of
/// useful leaves, with min/max run tables and next-link indexes.
#[derive(Debug)]
pub struct ContractedDag {
    pub n: usize,
    /// initial node of the contraction, None when no useful leaf is reachable
    pub initial: Option<usize>,
    /// removed unary initial: common prefix edge of every path
    pub stub: Option<(usize, CEdge)>,
    /// out edges of contraction nodes (indexed by extended node id;
    /// normalized order = original index order)
    pub out: Vec<Vec<CEdge>>,
    pub is_node: Vec<bool>,
    /// per pruned node of out-degree one: its unique pruned out edge
    pub uniq_out: Vec<Option<(usize, BigUint, u32)>>,
    /// endpoint and weight of the maximal min / max run from each node
    pub min_run: Vec<Option<(usize, BigUint)>>,
    pub max_run: Vec<Option<(usize, BigUint)>>,
    /// reversed min-edge, max-edge, and non-branching-path forests
    pub la_min: LevelAncestor,
    pub la_max: LevelAncestor,
    pub la_nb: LevelAncestor,
    pub build_steps: u64,
}

/// Prune the extension of `wdag` to nodes on a path from the initial node to
/// a useful leaf, contract maximal non-branching paths, and index the result.
pub fn prune_contract(wdag: &WeightedDag, useful: &[bool]) -> ContractedDag {
    let n = wdag.n;
    let m = 2 * n;
    let mut steps = 0u64;
    // reach-to-useful-leaf, over extended nodes
    let order = wdag.dag.topo().expect("weighted dag is acyclic");
    let mut to_leaf = vec![false; m];
    for a in 0..n {
        to_leaf[prime(n, a)] = useful[a];
    }
    for &a in &order {
        to_leaf[a] = wdag.children[a].iter().any(|&c| to_leaf[c]);
        steps += wdag.children[a].len() as u64;
    }
    // reachable from initial
    let mut from_init = vec![false; m];
    if to_leaf[wdag.dag.initial] {
        let mut stack = vec![wdag.dag.initial];
        from_init[wdag.dag.initial] = true;
        while let Some(a) = stack.pop() {
            if a >= n {
                continue;
            }
            for &c in &wdag.children[a] {
                steps += 1;
                if to_leaf[c] && !from_init[c] {
                    from_init[c] = true;
                    stack.push(c);
                }
            }
        }
    }
    let keep: Vec<bool> = (0..m).map(|x| to_leaf[x] && from_init[x]).collect();
    // pruned out edges (original index order)
    let mut pruned: Vec<Vec<(usize, u32)>> = vec![Vec::new(); m];
    for a in 0..n {
        if keep[a] {
            for (i, &c) in wdag.children[a].iter().enumerate() {
                if keep[c] {
                    pruned[a].push((c, i as u32));
                }
            }
        }
    }
    let mut uniq_out: Vec<Option<(usize, BigUint, u32)>> = vec![None; m];
    for x in 0..m {
        if pruned[x].len() == 1 {
            let (to, orig) = pruned[x][0];
            uniq_out[x] = Some((to, wdag.edge_weight[x][orig as usize].clone(), orig));
        }
    }
    let empty = !keep[wdag.dag.initial];
    // contraction nodes: kept nodes with out-degree != 1
    let is_node: Vec<bool> = (0..m).map(|x| keep[x] && pruned[x].len() != 1).collect();
    let follow_chain = |from: usize, to0: usize, orig0: u32| -> CEdge {
        let w_first = wdag.edge_weight[from][orig0 as usize].clone();
        let mut w = w_first.clone();
        let mut end = to0;
        while pruned[end].len() == 1 {
            let (next, orig) = pruned[end][0];
            w += &wdag.edge_weight[end][orig as usize];
            end = next;
        }
        CEdge { to: end, weight: w, first: to0, orig_first: orig0, w_first, len_ge2: end != to0 }
    };
    let mut out: Vec<Vec<CEdge>> = vec![Vec::new(); m];
    for x in 0..m {
        if is_node[x] && x != wdag.dag.initial {
            out[x] = pruned[x].iter().map(|&(c, i)| follow_chain(x, c, i)).collect();
            steps += out[x].len() as u64;
        }
    }
    let mut stub = None;
    let mut initial = None;
    if !empty {
        let init = wdag.dag.initial;
        if pruned[init].len() == 1 {
            let (c, i) = pruned[init][0];
            let e = follow_chain(init, c, i);
            initial = Some(e.to);
            stub = Some((init, e));
        } else {
            out[init] = pruned[init].iter().map(|&(c, i)| follow_chain(init, c, i)).collect();
            initial = Some(init);
        }
    }
    // min / max run tables over contraction nodes, bottom-up
    let mut min_run: Vec<Option<(usize, BigUint)>> = vec![None; m];
    let mut max_run: Vec<Option<(usize, BigUint)>> = vec![None; m];
    let mut la_min_parent: Vec<Option<usize>> = vec![None; m];
    let mut la_max_parent: Vec<Option<usize>> = vec![None; m];
    let mut la_nb_parent: Vec<Option<usize>> = vec![None; m];
    for x in 0..m {
        if keep[x] && pruned[x].len() == 1 && Some(x) != stub.as_ref().map(|s| s.0) {
            la_nb_parent[x] = Some(pruned[x][0].0);
        }
    }
    // bottom-up over contraction nodes: process in reverse topological order
    // of the extension (children first); extended order: originals per topo,
    // primes are leaves
    let mut ext_order: Vec<usize> = (n..m).collect();
    ext_order.extend(order.iter().copied());
    for &x in &ext_order {
        if !is_node[x] || out[x].is_empty() {
            if is_node[x] {
                min_run[x] = Some((x, BigUint::zero()));
                max_run[x] = Some((x, BigUint::zero()));
            }
            continue;
        }
        steps += 1;
        let first = &out[x][0];
        let (e, w) = min_run[first.to].clone().expect("children processed first");
        min_run[x] = Some((e, w + &first.weight));
        la_min_parent[x] = Some(first.to);
        let last = out[x].last().unwrap();
        let (e, w) = max_run[last.to].clone().expect("children processed first");
        max_run[x] = Some((e, w + &last.weight));
        la_max_parent[x] = Some(last.to);
    }
    let la_min = LevelAncestor::build(la_min_parent);
    let la_max = LevelAncestor::build(la_max_parent);
    let la_nb = LevelAncestor::build(la_nb_parent);
    steps += la_min.build_steps + la_max.build_steps + la_nb.build_steps;
    ContractedDag {
        n,
        initial,
        stub,
        out,
        is_node,
        uniq_out,
        min_run,
        max_run,
        la_min,
        la_max,
        la_nb,
        build_steps: steps,
    }
}

// ---- path representation -----------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Kind {
    Min,
    Max,
    Idx(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub from: usize,
    pub kind: Kind,
    pub to: usize,
    pub weight: BigUint,
    /// when set, the triple is a single contracted edge un-contracted down
    /// to chain node `to`; `partial` is the chain's first node
    pub partial: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StubState {
    Absent,
    Whole,
    Partial(usize),
    Consumed,
}

#[derive(Debug)]
pub struct Record {
    popped: Vec<Triple>,
    pushed: usize,
    old_stub: StubState,
    old_end: usize,
    old_total: BigUint,
    pub removed: PrimeEdge,
}

/// Cursor over the initial-to-leaf paths of a contraction, in lexicographic
/// order; `total` is the global lex rank of the represented initial path.
#[derive(Debug, Clone)]
pub struct MinMaxPath {
    pub ctx: Arc<ContractedDag>,
    pub triples: Vec<Triple>,
    pub stub: StubState,
    pub total: BigUint,
    pub end: usize,
}

impl PartialEq for MinMaxPath {
    fn eq(&self, other: &Self) -> bool {
        self.triples == other.triples
            && self.stub == other.stub
            && self.total == other.total
            && self.end == other.end
    }
}
impl Eq for MinMaxPath {}

impl MinMaxPath {
    /// Lexicographically least initial-to-leaf path, None when the
    /// contraction is empty.
    pub fn first(ctx: Arc<ContractedDag>) -> Option<MinMaxPath> {
        let initial = ctx.initial?;
        let stub = match &ctx.stub {
            Some(_) => StubState::Whole,
            None => StubState::Absent,
        };
        let mut total = match &ctx.stub {
            Some((_, e)) => e.weight.clone(),
            None => BigUint::zero(),
        };
        let mut triples = Vec::new();
        let mut end = initial;
        if !ctx.out[initial].is_empty() {
            let (e, w) = ctx.min_run[initial].clone().unwrap();
            total += &w;
            triples.push(Triple { from: initial, kind: Kind::Min, to: e, weight: w, partial: None });
            end = e;
        }
        Some(MinMaxPath { ctx, triples, stub, total, end })
    }

    pub fn is_restored(&self) -> bool {
        self.triples.iter().all(|t| t.partial.is_none())
            && matches!(self.stub, StubState::Absent | StubState::Whole)
    }

    /// The nonterminal whose leaf the current path ends at. Only meaningful
    /// on restored paths.
    pub fn end_nonterminal(&self) -> usize {
        debug_assert!(self.end >= self.ctx.n);
        self.end - self.ctx.n
    }

    fn push_min_ext(&mut self, v: usize) {
        if !self.ctx.out[v].is_empty() {
            let (e, w) = self.ctx.min_run[v].clone().unwrap();
            self.total += &w;
            self.triples.push(Triple { from: v, kind: Kind::Min, to: e, weight: w, partial: None });
            self.end = e;
        } else {
            self.end = v;
        }
    }

    /// Append the edge of index `idx` (1-based) from `v`, merging max runs,
    /// then extend minimally to a leaf.
    fn push_successor(&mut self, v: usize, idx: u32) {
        let deg = self.ctx.out[v].len() as u32;
        debug_assert!(idx >= 1 && idx <= deg);
        let e = &self.ctx.out[v][idx as usize - 1];
        let to = e.to;
        let w = e.weight.clone();
        if idx == deg {
            // max edge: merge with a preceding max triple if present
            self.total += &w;
            match self.triples.last_mut() {
                Some(t) if t.kind == Kind::Max && t.to == v => {
                    t.to = to;
                    t.weight += &w;
                }
                _ => self
                    .triples
                    .push(Triple { from: v, kind: Kind::Max, to, weight: w, partial: None }),
            }
        } else {
            self.total += &w;
            self.triples
                .push(Triple { from: v, kind: Kind::Idx(idx), to, weight: w, partial: None });
        }
        self.push_min_ext(to);
    }

    /// Advance to the lexicographically next path. Returns false at the end.
    /// Requires a fully restored representation.
    pub fn next_path(&mut self, steps: &mut Steps) -> bool {
        debug_assert!(self.is_restored());
        steps.bump();
        loop {
            let Some(t) = self.triples.pop() else {
                return false; // single-node contraction: unique path
            };
            self.total -= &t.weight;
            match t.kind {
                Kind::Min => {
                    // pivot: predecessor of t.to on the min run from t.from
                    let v3 = if self.ctx.out[t.from][0].to == t.to {
                        t.from
                    } else {
                        self.ctx.la_min.next_link(t.to, t.from, steps)
                    };
                    if v3 != t.from {
                        let w = t.weight.clone() - &self.ctx.out[v3][0].weight;
                        self.total += &w;
                        self.triples.push(Triple {
                            from: t.from,
                            kind: Kind::Min,
                            to: v3,
                            weight: w,
                            partial: None,
                        });
                    }
                    // every min-edge source has out-degree >= 2
                    self.push_successor(v3, 2);
                    return true;
                }
                Kind::Idx(i) => {
                    self.push_successor(t.from, i + 1);
                    return true;
                }
                Kind::Max => {
                    // no successor anywhere in a max run; continue above it
                    if self.triples.is_empty() {
                        // path was the max run from the initial node
                        self.end = t.to;
                        self.total += &t.weight;
                        self.triples.push(t);
                        return false;
                    }
                    steps.bump();
                }
            }
        }
    }

    /// Remove the last edge of the underlying extension path. Pushes a
    /// record for `restore` and returns the removed edge.
    pub fn shorten(&mut self, steps: &mut Steps) -> crate::Result<Record> {
        steps.bump();
        let old_stub = self.stub.clone();
        let old_end = self.end;
        let old_total = self.total.clone();
        let ctx = self.ctx.clone();
        if let Some(t) = self.triples.pop() {
            let popped = vec![t.clone()];
            let mut pushed_triples: Vec<Triple> = Vec::new();
            let removed: PrimeEdge;
            let removed_w: BigUint;
            if let Some(first) = t.partial {
                if t.to == first {
                    // single remaining edge of the chain
                    let e = t.cedge_of(&ctx);
                    removed = PrimeEdge { from: t.from, orig: e.orig_first, to: t.to };
                    removed_w = e.w_first.clone();
                } else {
                    let a2 = ctx.la_nb.next_link(t.to, first, steps);
                    let (_, w, orig) = ctx.uniq_out[a2].clone().expect("chain interior");
                    removed = PrimeEdge { from: a2, orig, to: t.to };
                    let mut nt = t.clone();
                    nt.to = a2;
                    nt.weight = t.weight.clone() - &w;
                    pushed_triples.push(nt);
                    removed_w = w;
                }
            } else {
                // locate the last contraction edge of the triple
                let (src, cidx) = match t.kind {
                    Kind::Idx(i) => (t.from, i),
                    Kind::Min => {
                        let v3 = if ctx.out[t.from][0].to == t.to {
                            t.from
                        } else {
                            ctx.la_min.next_link(t.to, t.from, steps)
                        };
                        if v3 != t.from {
                            let w = t.weight.clone() - &ctx.out[v3][0].weight;
                            pushed_triples.push(Triple {
                                from: t.from,
                                kind: Kind::Min,
                                to: v3,
                                weight: w,
                                partial: None,
                            });
                        }
                        (v3, 1)
                    }
                    Kind::Max => {
                        let deg_last = |x: usize| ctx.out[x].len() as u32;
                        let v3 = if ctx.out[t.from].last().unwrap().to == t.to {
                            t.from
                        } else {
                            ctx.la_max.next_link(t.to, t.from, steps)
                        };
                        if v3 != t.from {
                            let w = t.weight.clone() - &ctx.out[v3].last().unwrap().weight;
                            pushed_triples.push(Triple {
                                from: t.from,
                                kind: Kind::Max,
                                to: v3,
                                weight: w,
                                partial: None,
                            });
                        }
                        (v3, deg_last(v3))
                    }
                };
                let e = &ctx.out[src][cidx as usize - 1];
                if e.len_ge2 {
                    let a2 = ctx.la_nb.next_link(t.to, e.first, steps);
                    let (_, w, orig) = ctx.uniq_out[a2].clone().expect("chain interior");
                    removed = PrimeEdge { from: a2, orig, to: t.to };
                    pushed_triples.push(Triple {
                        from: src,
                        kind: Kind::Idx(cidx),
                        to: a2,
                        weight: e.weight.clone() - &w,
                        partial: Some(e.first),
                    });
                    removed_w = w;
                } else {
                    removed = PrimeEdge { from: src, orig: e.orig_first, to: t.to };
                    removed_w = e.w_first.clone();
                }
            }
            let pushed = pushed_triples.len();
            self.triples.extend(pushed_triples);
            self.end = removed.from;
            self.total = old_total.clone() - removed_w;
            return Ok(Record {
                popped,
                pushed,
                old_stub,
                old_end,
                old_total,
                removed,
            });
        }
        // no triples: operate on the stub
        let (init0, stub_edge) = match &ctx.stub {
            Some(s) => (s.0, s.1.clone()),
            None => {
                return Err(Error::Invalid("cannot shorten the empty path".into()));
            }
        };
        let (removed, removed_w) = match &self.stub {
            StubState::Whole => {
                if stub_edge.len_ge2 {
                    let a2 = ctx.la_nb.next_link(stub_edge.to, stub_edge.first, steps);
                    let (_, w, orig) = ctx.uniq_out[a2].clone().expect("chain interior");
                    self.stub = StubState::Partial(a2);
                    (PrimeEdge { from: a2, orig, to: stub_edge.to }, w)
                } else {
                    self.stub = StubState::Consumed;
                    (
                        PrimeEdge { from: init0, orig: stub_edge.orig_first, to: stub_edge.to },
                        stub_edge.w_first.clone(),
                    )
                }
            }
            StubState::Partial(to) => {
                let to = *to;
                if to == stub_edge.first {
                    self.stub = StubState::Consumed;
                    (
                        PrimeEdge { from: init0, orig: stub_edge.orig_first, to },
                        stub_edge.w_first.clone(),
                    )
                } else {
                    let a2 = ctx.la_nb.next_link(to, stub_edge.first, steps);
                    let (_, w, orig) = ctx.uniq_out[a2].clone().expect("chain interior");
                    self.stub = StubState::Partial(a2);
                    (PrimeEdge { from: a2, orig, to }, w)
                }
            }
            StubState::Consumed | StubState::Absent => {
                return Err(Error::Invalid("cannot shorten the empty path".into()));
            }
        };
        self.end = removed.from;
        self.total = old_total.clone() - removed_w;
        Ok(Record { popped: Vec::new(), pushed: 0, old_stub, old_end, old_total, removed })
    }

    /// Undo one `shorten`; representations are restored bit-identically.
    pub fn restore(&mut self, rec: Record, steps: &mut Steps) {
        steps.bump();
        let keep = self.triples.len() - rec.pushed;
        self.triples.truncate(keep);
        self.triples.extend(rec.popped);
        self.stub = rec.old_stub;
        self.end = rec.old_end;
        self.total = rec.old_total;
    }

    /// Expand the current (restored) representation into the underlying
    /// extension path. Linear in the path length; for tests and output.
    pub fn to_prime_edges(&self) -> Vec<PrimeEdge> {
        debug_assert!(self.is_restored());
        let ctx = &self.ctx;
        let mut edges = Vec::new();
        let expand_cedge = |from: usize, e: &CEdge, edges: &mut Vec<PrimeEdge>| {
            edges.push(PrimeEdge { from, orig: e.orig_first, to: e.first });
            let mut x = e.first;
            while x != e.to {
                let (to, _, orig) = ctx.uniq_out[x].clone().expect("chain interior");
                edges.push(PrimeEdge { from: x, orig, to });
                x = to;
            }
        };
        if let (StubState::Whole, Some((init0, e))) = (&self.stub, &ctx.stub) {
            expand_cedge(*init0, e, &mut edges);
        }
        for t in &self.triples {
            match t.kind {
                Kind::Idx(i) => expand_cedge(t.from, &ctx.out[t.from][i as usize - 1], &mut edges),
                Kind::Min => {
                    let mut x = t.from;
                    while x != t.to {
                        let e = &ctx.out[x][0];
                        expand_cedge(x, e, &mut edges);
                        x = e.to;
                    }
                }
                Kind::Max => {
                    let mut x = t.from;
                    while x != t.to {
                        let e = ctx.out[x].last().unwrap();
                        expand_cedge(x, e, &mut edges);
                        x = e.to;
                    }
                }
            }
        }
        edges
    }

    /// The represented initial path of the underlying dag (leaf edge
    /// dropped). Requires a restored representation.
    pub fn to_dag_path(&self, wdag: &WeightedDag) -> DagPath {
        let edges = self.to_prime_edges();
        let mut out = Vec::with_capacity(edges.len());
        for e in &edges {
            if e.orig > 0 {
                out.push(e.orig);
            }
        }
        DagPath { start: wdag.dag.initial, edges: out }
    }
}

impl Triple {
    /// The contracted edge a partial triple came from.
    fn cedge_of<'a>(&self, ctx: &'a ContractedDag) -> &'a CEdge {
        match self.kind {
            Kind::Idx(i) => &ctx.out[self.from][i as usize - 1],
            Kind::Min => &ctx.out[self.from][0],
            Kind::Max => ctx.out[self.from].last().unwrap(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slp::parse_slp;
    use num_traits::ToPrimitive;

    fn example6() -> Slp {
        parse_slp(include_str!("../../../fixtures/example6.slp")).unwrap()
    }

    fn weighted6() -> WeightedDag {
        extend_and_weight(OrderedDag::from_slp(&example6())).unwrap()
    }

    #[test]
    fn number_paths_and_edge_weights() {
        let slp = example6();
        let w = weighted6();
        let s = slp.initial;
        let a = slp.nt_by_name("A").unwrap();
        let b = slp.nt_by_name("B").unwrap();
        assert_eq!(w.number_paths[s].to_u64(), Some(6));
        assert_eq!(w.edge_weight[s][1].to_u64(), Some(1)); // (S,1,A)
        assert_eq!(w.edge_weight[s][2].to_u64(), Some(3)); // (S,2,A)
        assert_eq!(w.edge_weight[s][3].to_u64(), Some(5)); // (S,3,B)
        assert_eq!(w.edge_weight[a][1].to_u64(), Some(1)); // (A,1,B)
        assert_eq!(w.edge_weight[s][0].to_u64(), Some(0));
        // P_S = 1, P_A = 2, P_B = 3
        assert_eq!(w.p_count[s].to_u64(), Some(1));
        assert_eq!(w.p_count[a].to_u64(), Some(2));
        assert_eq!(w.p_count[b].to_u64(), Some(3));
    }

    #[test]
    fn lex_and_resolve() {
        let slp = example6();
        let w = weighted6();
        let s = slp.initial;
        // sorted initial paths: S, S1A, S1A1B, S2A, S2A1B, S3B
        let paths = [
            vec![],
            vec![1],
            vec![1, 1],
            vec![2],
            vec![2, 1],
            vec![3],
        ];
        for (rank, edges) in paths.iter().enumerate() {
            let p = DagPath { start: s, edges: edges.clone() };
            assert_eq!(w.lex_of_path(&p).to_u64(), Some(rank as u64));
            assert_eq!(w.resolve_lex(&BigUint::from(rank)).unwrap(), p);
        }
        assert!(w.resolve_lex(&BigUint::from(6u32)).is_none());
        // lex_A(A1B) = 1
        let a = slp.nt_by_name("A").unwrap();
        assert_eq!(w.lex_of_path(&DagPath { start: a, edges: vec![1] }).to_u64(), Some(1));
    }

    #[test]
    fn contraction_useful_b() {
        let slp = example6();
        let w = weighted6();
        let b = slp.nt_by_name("B").unwrap();
        let mut useful = vec![false; slp.nts.len()];
        useful[b] = true;
        let ctx = Arc::new(prune_contract(&w, &useful));
        let s = slp.initial;
        assert_eq!(ctx.initial, Some(s));
        assert!(ctx.stub.is_none());
        let ws: Vec<u64> = ctx.out[s].iter().map(|e| e.weight.to_u64().unwrap()).collect();
        assert_eq!(ws, vec![2, 4, 5]);
        let bp = prime(w.n, b);
        assert!(ctx.out[s].iter().all(|e| e.to == bp));
        // enumeration: three paths with weights 2, 4, 5
        let mut steps = Steps::default();
        let mut p = MinMaxPath::first(ctx).unwrap();
        let mut seen = vec![p.total.to_u64().unwrap()];
        while p.next_path(&mut steps) {
            seen.push(p.total.to_u64().unwrap());
        }
        assert_eq!(seen, vec![2, 4, 5]);
    }

    #[test]
    fn contraction_all_useful_enumerates_all_paths() {
        let slp = example6();
        let w = weighted6();
        let useful = vec![true; slp.nts.len()];
        let ctx = Arc::new(prune_contract(&w, &useful));
        let mut steps = Steps::default();
        let mut p = MinMaxPath::first(ctx).unwrap();
        let mut k = 0u64;
        loop {
            assert_eq!(p.total.to_u64(), Some(k));
            // the represented dag path matches resolve_lex
            assert_eq!(p.to_dag_path(&w), w.resolve_lex(&BigUint::from(k)).unwrap());
            k += 1;
            if !p.next_path(&mut steps) {
                break;
            }
        }
        assert_eq!(k, 6);
    }

    #[test]
    fn single_useful_initial_gives_empty_representation() {
        let slp = example6();
        let w = weighted6();
        let mut useful = vec![false; slp.nts.len()];
        useful[slp.initial] = true;
        let ctx = Arc::new(prune_contract(&w, &useful));
        assert!(ctx.stub.is_some());
        let mut steps = Steps::default();
        let mut p = MinMaxPath::first(ctx).unwrap();
        assert!(p.triples.is_empty());
        assert_eq!(p.total.to_u64(), Some(0));
        assert!(!p.next_path(&mut steps));
    }

    #[test]
    fn shorten_restore_weights() {
        let slp = example6();
        let w = weighted6();
        let b = slp.nt_by_name("B").unwrap();
        let mut useful = vec![false; slp.nts.len()];
        useful[b] = true;
        let ctx = Arc::new(prune_contract(&w, &useful));
        let mut steps = Steps::default();
        // advance to the middle path S2A1B0B' (weight 4)
        let mut p = MinMaxPath::first(ctx).unwrap();
        assert!(p.next_path(&mut steps));
        assert_eq!(p.total.to_u64(), Some(4));
        let snapshot = p.clone();
        let mut recs = Vec::new();
        let mut weights = vec![p.total.to_u64().unwrap()];
        for _ in 0..3 {
            recs.push(p.shorten(&mut steps).unwrap());
            weights.push(p.total.to_u64().unwrap());
        }
        assert_eq!(weights, vec![4, 4, 3, 0]);
        // removed edges, reversed, spell S -2-> A -1-> B -0-> B'
        let origs: Vec<u32> = recs.iter().map(|r| r.removed.orig).collect();
        assert_eq!(origs, vec![0, 1, 2]);
        assert!(p.shorten(&mut steps).is_err()); // nothing left
        while let Some(r) = recs.pop() {
            p.restore(r, &mut steps);
        }
        assert_eq!(p, snapshot);
    }

    #[test]
    fn level_ancestor_on_chain_and_tree() {
        // path 0 <- 1 <- 2 <- ... <- 9 plus a branch
        let mut parent: Vec<Option<usize>> = (0..10).map(|v| if v == 0 { None } else { Some(v - 1) }).collect();
        parent.push(Some(3)); // node 10 hangs off 3
        let la = LevelAncestor::build(parent);
        let mut steps = Steps::default();
        for v in 0..10usize {
            for d in 0..=v {
                assert_eq!(la.ancestor_at_depth(v, d as u32, &mut steps), d);
            }
        }
        assert_eq!(la.ancestor_at_depth(10, 4, &mut steps), 10);
        assert_eq!(la.next_link(2, 10, &mut steps), 3);
        assert_eq!(la.next_link(0, 9, &mut steps), 1);
    }
}
