//! Finite relational structures, their Gaifman graphs, and canonical
//! neighborhood types.
//!
//! Nodes are dense indices `0..n`. A `Pointed` structure carries a partial
//! tuple of centers (position `i` = variable `x_{i+1}`); neighborhood types
//! are canonical forms of pointed structures, computed by backtracking with
//! color refinement and orbit pruning so that equality of types is equality
//! of their encodings.

use crate::{Error, Result};
use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub rels: Vec<(String, usize)>,
}

impl Signature {
    pub fn new(rels: Vec<(String, usize)>) -> Self {
        Signature { rels }
    }

    pub fn rel(&self, name: &str) -> Option<usize> {
        self.rels.iter().position(|(n, _)| n == name)
    }

    pub fn arity(&self, rel: usize) -> usize {
        self.rels[rel].1
    }

    pub fn max_arity(&self) -> usize {
        self.rels.iter().map(|&(_, a)| a).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct Structure {
    pub sig: Arc<Signature>,
    pub n: usize,
    /// Per relation, the list of tuples (each of the relation's arity).
    pub tuples: Vec<Vec<Vec<usize>>>,
    pub labels: Vec<String>,
}

impl Structure {
    pub fn new(sig: Arc<Signature>, n: usize) -> Self {
        let tuples = vec![Vec::new(); sig.rels.len()];
        let labels = (0..n).map(|i| i.to_string()).collect();
        Structure { sig, n, tuples, labels }
    }

    pub fn size(&self) -> usize {
        // |U| + sum over relations of arity * #tuples
        self.n
            + self
                .tuples
                .iter()
                .enumerate()
                .map(|(r, ts)| self.sig.arity(r) * ts.len())
                .sum::<usize>()
    }

    pub fn add_tuple(&mut self, rel: usize, t: Vec<usize>) {
        debug_assert_eq!(t.len(), self.sig.arity(rel));
        self.tuples[rel].push(t);
    }

    /// Gaifman adjacency: nodes co-occurring in a tuple, deduplicated,
    /// neighbor lists sorted.
    pub fn gaifman(&self) -> Vec<Vec<usize>> {
        let mut adj: Vec<HashSet<usize>> = vec![HashSet::new(); self.n];
        for ts in &self.tuples {
            for t in ts {
                for (i, &a) in t.iter().enumerate() {
                    for &b in &t[i + 1..] {
                        if a != b {
                            adj[a].insert(b);
                            adj[b].insert(a);
                        }
                    }
                }
            }
        }
        adj.into_iter()
            .map(|s| {
                let mut v: Vec<usize> = s.into_iter().collect();
                v.sort_unstable();
                v
            })
            .collect()
    }

    pub fn max_degree(&self) -> usize {
        self.gaifman().iter().map(|v| v.len()).max().unwrap_or(0)
    }

    /// Disjoint union: append `other`'s nodes and tuples after `self`'s.
    pub fn append_disjoint(&mut self, other: &Structure) {
        debug_assert_eq!(self.sig, other.sig);
        let off = self.n;
        self.n += other.n;
        self.labels.extend(other.labels.iter().cloned());
        for (r, ts) in other.tuples.iter().enumerate() {
            for t in ts {
                self.tuples[r].push(t.iter().map(|&v| v + off).collect());
            }
        }
    }

    /// Induced substructure on `nodes` (kept in the given order).
    /// Returns the substructure and the map new -> old.
    pub fn induced(&self, nodes: &[usize]) -> (Structure, Vec<usize>) {
        let mut old_to_new: HashMap<usize, usize> = HashMap::new();
        for (i, &v) in nodes.iter().enumerate() {
            old_to_new.insert(v, i);
        }
        let mut s = Structure::new(self.sig.clone(), nodes.len());
        for (i, &v) in nodes.iter().enumerate() {
            s.labels[i] = self.labels[v].clone();
        }
        for (r, ts) in self.tuples.iter().enumerate() {
            for t in ts {
                if let Some(nt) =
                    t.iter().map(|v| old_to_new.get(v).copied()).collect::<Option<Vec<_>>>()
                {
                    s.tuples[r].push(nt);
                }
            }
        }
        (s, nodes.to_vec())
    }

    /// Connected components of the Gaifman graph, ordered by least node.
    pub fn components(&self) -> Vec<(Structure, Vec<usize>)> {
        let adj = self.gaifman();
        let mut seen = vec![false; self.n];
        let mut out = Vec::new();
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(v) = queue.pop_front() {
                comp.push(v);
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
            comp.sort_unstable();
            out.push(self.induced(&comp));
        }
        out
    }
}

/// Multi-source BFS distances in the Gaifman graph. `None` = unreachable.
pub fn distances_from(adj: &[Vec<usize>], sources: &[usize]) -> Vec<Option<u32>> {
    let mut dist = vec![None; adj.len()];
    let mut queue = VecDeque::new();
    for &s in sources {
        if dist[s].is_none() {
            dist[s] = Some(0);
            queue.push_back(s);
        }
    }
    while let Some(v) = queue.pop_front() {
        let d = dist[v].unwrap();
        for &w in &adj[v] {
            if dist[w].is_none() {
                dist[w] = Some(d + 1);
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Nodes within distance `r` of `sources`, sorted.
pub fn sphere(adj: &[Vec<usize>], sources: &[usize], r: u32) -> Vec<usize> {
    let dist = distances_from(adj, sources);
    (0..adj.len()).filter(|&v| matches!(dist[v], Some(d) if d <= r)).collect()
}

/// A structure with a partial tuple of centers. Position `i` (0-based)
/// is variable `x_{i+1}`; `None` = position not set.
#[derive(Debug, Clone)]
pub struct Pointed {
    pub s: Structure,
    pub centers: Vec<Option<usize>>,
    pub radius: u32,
}

impl Pointed {
    pub fn center_nodes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.centers.iter().flatten().copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// `r`-neighborhood of the given partial center tuple: induced substructure
/// on the sphere, centers remapped.
pub fn neighborhood(s: &Structure, centers: &[Option<usize>], r: u32) -> Pointed {
    let adj = s.gaifman();
    neighborhood_with_adj(s, &adj, centers, r)
}

pub fn neighborhood_with_adj(
    s: &Structure,
    adj: &[Vec<usize>],
    centers: &[Option<usize>],
    r: u32,
) -> Pointed {
    let srcs: Vec<usize> = centers.iter().flatten().copied().collect();
    let nodes = sphere(adj, &srcs, r);
    let (sub, back) = s.induced(&nodes);
    let mut old_to_new = HashMap::new();
    for (i, &v) in back.iter().enumerate() {
        old_to_new.insert(v, i);
    }
    let centers = centers.iter().map(|c| c.map(|v| old_to_new[&v])).collect();
    Pointed { s: sub, centers, radius: r }
}

/// Canonical form of a pointed structure. Two pointed structures have equal
/// `code` iff they are isomorphic by a center- and relation-preserving map.
#[derive(Debug, Clone)]
pub struct NeighborhoodType {
    pub canon: Pointed,
    pub code: Vec<u64>,
}

impl PartialEq for NeighborhoodType {
    fn eq(&self, other: &Self) -> bool {
        self.code == other.code
    }
}
impl Eq for NeighborhoodType {}
impl std::hash::Hash for NeighborhoodType {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.code.hash(state);
    }
}
impl PartialOrd for NeighborhoodType {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for NeighborhoodType {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.code.cmp(&other.code)
    }
}

impl NeighborhoodType {
    pub fn node_count(&self) -> usize {
        self.canon.s.n
    }
}

// ---- canonicalization ----------------------------------------------------

struct CanonCtx<'a> {
    p: &'a Pointed,
    /// occurrences[v] = list of (rel, position, tuple index)
    occurrences: Vec<Vec<(usize, usize, usize)>>,
    best_code: Option<Vec<u64>>,
    /// labeling node -> canonical id for the best code
    best_label: Vec<usize>,
    /// union-find over nodes: discovered automorphism orbits
    orbit: Vec<usize>,
}

impl<'a> CanonCtx<'a> {
    fn find(&mut self, v: usize) -> usize {
        if self.orbit[v] != v {
            let r = self.find(self.orbit[v]);
            self.orbit[v] = r;
        }
        self.orbit[v]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.orbit[ra.max(rb)] = ra.min(rb);
        }
    }
}

fn initial_colors(p: &Pointed) -> Vec<u64> {
    let s = &p.s;
    let mut keys: Vec<Vec<u64>> = vec![Vec::new(); s.n];
    for (v, key) in keys.iter_mut().enumerate() {
        let mut cps: Vec<u64> = p
            .centers
            .iter()
            .enumerate()
            .filter(|&(_, c)| *c == Some(v))
            .map(|(i, _)| i as u64)
            .collect();
        // centers sort first, in position order, so they take the lowest
        // canonical ids (center i = canonical element i)
        key.push(cps.first().copied().unwrap_or(u64::MAX));
        key.push(cps.len() as u64);
        key.append(&mut cps);
        for (r, ts) in s.tuples.iter().enumerate() {
            let arity = s.sig.arity(r);
            for pos in 0..arity {
                key.push(ts.iter().filter(|t| t[pos] == v).count() as u64);
            }
        }
    }
    rank_keys(&keys)
}

/// Deterministically map each key to its rank among sorted distinct keys.
fn rank_keys(keys: &[Vec<u64>]) -> Vec<u64> {
    let mut sorted: Vec<&Vec<u64>> = keys.iter().collect();
    sorted.sort();
    sorted.dedup();
    let index: HashMap<&Vec<u64>, u64> =
        sorted.iter().enumerate().map(|(i, k)| (*k, i as u64)).collect();
    keys.iter().map(|k| index[k]).collect()
}

/// One refinement pass: color = (old color, sorted multiset of
/// (rel, own position, colors of co-occurring entries)).
fn refine(p: &Pointed, occ: &[Vec<(usize, usize, usize)>], colors: &[u64]) -> Vec<u64> {
    let s = &p.s;
    let mut keys: Vec<Vec<u64>> = Vec::with_capacity(s.n);
    for v in 0..s.n {
        let mut sig_parts: Vec<Vec<u64>> = Vec::new();
        for &(r, pos, ti) in &occ[v] {
            let t = &s.tuples[r][ti];
            let mut part = vec![r as u64, pos as u64];
            part.extend(t.iter().map(|&w| colors[w]));
            sig_parts.push(part);
        }
        sig_parts.sort();
        let mut key = vec![colors[v]];
        for part in sig_parts {
            key.push(u64::MAX); // separator
            key.extend(part);
        }
        keys.push(key);
    }
    rank_keys(&keys)
}

fn refine_to_fixpoint(p: &Pointed, occ: &[Vec<(usize, usize, usize)>], mut colors: Vec<u64>) -> Vec<u64> {
    loop {
        let next = refine(p, occ, &colors);
        let classes = |c: &[u64]| c.iter().collect::<HashSet<_>>().len();
        if classes(&next) == classes(&colors) {
            return next;
        }
        colors = next;
    }
}

fn encode(p: &Pointed, label: &[usize]) -> Vec<u64> {
    let s = &p.s;
    let mut code = vec![s.n as u64, p.centers.len() as u64, p.radius as u64];
    for c in &p.centers {
        code.push(match c {
            Some(v) => label[*v] as u64 + 1,
            None => 0,
        });
    }
    for (r, ts) in s.tuples.iter().enumerate() {
        let mut rel: Vec<Vec<u64>> =
            ts.iter().map(|t| t.iter().map(|&v| label[v] as u64).collect()).collect();
        rel.sort();
        code.push(u64::MAX);
        code.push(s.sig.arity(r) as u64);
        code.push(rel.len() as u64);
        for t in rel {
            code.extend(t);
        }
    }
    code
}

fn search(ctx: &mut CanonCtx, colors: Vec<u64>) {
    let n = ctx.p.s.n;
    // cells: nodes grouped by color, ordered by color
    let mut by_color: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for v in 0..n {
        by_color.entry(colors[v]).or_default().push(v);
    }
    let target = by_color.values().find(|cell| cell.len() > 1).cloned();
    match target {
        None => {
            // discrete: canonical id of v = rank of its color
            let mut label = vec![0usize; n];
            for (i, cell) in by_color.values().enumerate() {
                label[cell[0]] = i;
            }
            let code = encode(ctx.p, &label);
            match &ctx.best_code {
                Some(best) if *best < code => {}
                Some(best) if *best == code => {
                    // automorphism: best_label^{-1} . label
                    let mut inv_best = vec![0usize; n];
                    for (v, &c) in ctx.best_label.iter().enumerate() {
                        inv_best[c] = v;
                    }
                    for v in 0..n {
                        let w = inv_best[label[v]];
                        ctx.union(v, w);
                    }
                }
                _ => {
                    ctx.best_code = Some(code);
                    ctx.best_label = label;
                }
            }
        }
        Some(cell) => {
            let mut tried: Vec<usize> = Vec::new();
            for &v in &cell {
                let rv = ctx.find(v);
                if tried.iter().any(|&u| ctx.find(u) == rv) {
                    continue;
                }
                tried.push(v);
                // individualize v: give it a fresh color below its class
                let mut next = colors.clone();
                for c in next.iter_mut() {
                    *c = *c * 2 + 1;
                }
                next[v] -= 1;
                let next = refine_to_fixpoint(ctx.p, &ctx.occurrences, next);
                search(ctx, next);
            }
        }
    }
}

fn occurrences(s: &Structure) -> Vec<Vec<(usize, usize, usize)>> {
    let mut occ: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); s.n];
    for (r, ts) in s.tuples.iter().enumerate() {
        for (ti, t) in ts.iter().enumerate() {
            for (pos, &v) in t.iter().enumerate() {
                occ[v].push((r, pos, ti));
            }
        }
    }
    occ
}

/// Canonical type of a pointed structure, plus the witnessing map
/// `pi: canonical id -> input node`, lexicographically least among all
/// witnessing isomorphisms (compared as the sequence pi(0), pi(1), ...).
pub fn canonical_type(p: &Pointed) -> (NeighborhoodType, Vec<usize>) {
    let n = p.s.n;
    let occ = occurrences(&p.s);
    let colors = refine_to_fixpoint(p, &occ, initial_colors(p));
    let mut ctx = CanonCtx {
        p,
        occurrences: occ,
        best_code: None,
        best_label: Vec::new(),
        orbit: (0..n).collect(),
    };
    search(&mut ctx, colors.clone());
    let label = ctx.best_label;
    let code = ctx.best_code.expect("canonical search yields at least one labeling");

    // materialize the canonical structure
    let mut canon = Structure::new(p.s.sig.clone(), n);
    let mut pi0 = vec![0usize; n];
    for (v, &c) in label.iter().enumerate() {
        pi0[c] = v;
    }
    for (c, &v) in pi0.iter().enumerate() {
        canon.labels[c] = p.s.labels[v].clone();
    }
    for (r, ts) in p.s.tuples.iter().enumerate() {
        let mut rel: Vec<Vec<usize>> =
            ts.iter().map(|t| t.iter().map(|&v| label[v]).collect()).collect();
        rel.sort();
        canon.tuples[r] = rel;
    }
    let centers = p.centers.iter().map(|c| c.map(|v| label[v])).collect();
    let canon = Pointed { s: canon, centers, radius: p.radius };

    let pi = least_iso(&canon, p, &colors).unwrap_or(pi0);
    // labels follow the least witness, so equal inputs give equal types
    let mut canon = canon;
    for (c, &v) in pi.iter().enumerate() {
        canon.s.labels[c] = p.s.labels[v].clone();
    }
    (NeighborhoodType { canon, code }, pi)
}

/// Lexicographically least isomorphism from `a` onto `b` (both pointed, same
/// signature), trying targets in ascending node order. `b_colors` is a
/// refinement-stable coloring of `b` used to prune candidates.
fn least_iso(a: &Pointed, b: &Pointed, b_colors: &[u64]) -> Option<Vec<usize>> {
    let n = a.s.n;
    if b.s.n != n || a.centers.len() != b.centers.len() || a.radius != b.radius {
        return None;
    }
    let a_occ = occurrences(&a.s);
    let a_colors = refine_to_fixpoint(a, &a_occ, initial_colors(a));
    // color class sizes must match for an iso to exist; refinement colors are
    // computed identically on both sides, so classes correspond by rank
    let class_of = |colors: &[u64]| {
        let mut m: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (v, &c) in colors.iter().enumerate() {
            m.entry(c).or_default().push(v);
        }
        m
    };
    let ca = class_of(&a_colors);
    let cb = class_of(b_colors);
    if ca.len() != cb.len() {
        return None;
    }
    // candidate targets per a-node: members of the matching b-class
    let mut cand: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (va, vb) in ca.values().zip(cb.values()) {
        if va.len() != vb.len() {
            return None;
        }
        for &v in va {
            cand[v] = vb.clone();
        }
    }
    // backtracking in canonical id order 0..n (a is canonical here)
    let mut map = vec![usize::MAX; n];
    let b_adj = tuple_index(&b.s);
    fn extend(
        a: &Pointed,
        b: &Pointed,
        a_occ: &[Vec<(usize, usize, usize)>],
        b_idx: &HashSet<(usize, Vec<usize>)>,
        cand: &[Vec<usize>],
        map: &mut Vec<usize>,
        used: &mut Vec<usize>,
        v: usize,
    ) -> bool {
        let n = a.s.n;
        if v == n {
            // injective, tuple-preserving, counts equal => isomorphism;
            // centers are checked via the color classes (center positions
            // are part of the initial coloring)
            return a.centers.iter().zip(&b.centers).all(|(x, y)| match (x, y) {
                (Some(p), Some(q)) => map[*p] == *q,
                (None, None) => true,
                _ => false,
            });
        }
        'cands: for &w in &cand[v] {
            if used[w] != usize::MAX {
                continue;
            }
            map[v] = w;
            used[w] = v;
            // all a-tuples fully assigned and involving v must map to b-tuples
            for &(r, _, ti) in &a_occ[v] {
                let t = &a.s.tuples[r][ti];
                if t.iter().all(|&x| map[x] != usize::MAX) {
                    let img: Vec<usize> = t.iter().map(|&x| map[x]).collect();
                    if !b_idx.contains(&(r, img)) {
                        map[v] = usize::MAX;
                        used[w] = usize::MAX;
                        continue 'cands;
                    }
                }
            }
            if extend(a, b, a_occ, b_idx, cand, map, used, v + 1) {
                return true;
            }
            map[v] = usize::MAX;
            used[w] = usize::MAX;
        }
        false
    }
    let mut used_by = vec![usize::MAX; n];
    // tuple counts must match per relation or no iso exists
    for (r, ts) in a.s.tuples.iter().enumerate() {
        if ts.len() != b.s.tuples[r].len() {
            return None;
        }
    }
    if extend(a, b, &a_occ, &b_adj, &cand, &mut map, &mut used_by, 0) {
        Some(map)
    } else {
        None
    }
}

fn tuple_index(s: &Structure) -> HashSet<(usize, Vec<usize>)> {
    let mut set = HashSet::new();
    for (r, ts) in s.tuples.iter().enumerate() {
        for t in ts {
            set.insert((r, t.clone()));
        }
    }
    set
}

pub const DEFAULT_ISO_CAP: usize = 4096;

/// Center- and relation-preserving isomorphism from `a` to `b`, if any.
/// Refuses structures above `cap` nodes (resource guard).
pub fn find_isomorphism(a: &Pointed, b: &Pointed, cap: usize) -> Result<Option<Vec<usize>>> {
    if a.s.n > cap || b.s.n > cap {
        return Err(Error::CapExceeded(format!(
            "isomorphism check on {} / {} nodes exceeds cap {}",
            a.s.n, b.s.n, cap
        )));
    }
    if a.s.sig.rels != b.s.sig.rels {
        return Ok(None);
    }
    let (ta, pa) = canonical_type(a);
    let (tb, pb) = canonical_type(b);
    if ta.code != tb.code {
        return Ok(None);
    }
    // map = pb . pa^{-1}
    let mut inv_pa = vec![0usize; a.s.n];
    for (c, &v) in pa.iter().enumerate() {
        inv_pa[v] = c;
    }
    Ok(Some((0..a.s.n).map(|v| pb[inv_pa[v]]).collect()))
}

// ---- arity reduction ------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ArityReduction {
    /// name of the universe marker relation (unary)
    pub universe_rel: String,
    /// per original relation: name of its unary marker
    pub rel_markers: Vec<String>,
    /// position relations E_1..E_max (binary)
    pub pos_rels: Vec<String>,
    pub orig_sig: Arc<Signature>,
    /// whether the transformation was applied (false = identity)
    pub applied: bool,
}

/// Binary-signature encoding of a structure with relations of arity > 2:
/// one fresh node per tuple, marked by the relation's unary marker and
/// linked to the tuple's entries by position relations. Identity when all
/// arities are at most 2. Quantifier rank of rewritten formulas grows by 1.
pub fn reduce_arity(s: &Structure) -> (Structure, ArityReduction, Vec<Option<usize>>) {
    let orig_sig = s.sig.clone();
    if s.sig.max_arity() <= 2 {
        let red = ArityReduction {
            universe_rel: String::new(),
            rel_markers: Vec::new(),
            pos_rels: Vec::new(),
            orig_sig,
            applied: false,
        };
        let back = (0..s.n).map(Some).collect();
        return (s.clone(), red, back);
    }
    let max_arity = s.sig.max_arity();
    let fresh = |base: &str| -> String {
        let mut name = base.to_string();
        while s.sig.rel(&name).is_some() {
            name.push('_');
        }
        name
    };
    let universe_rel = fresh("u");
    let pos_rels: Vec<String> = (1..=max_arity).map(|j| fresh(&format!("e{j}"))).collect();
    let rel_markers: Vec<String> =
        s.sig.rels.iter().map(|(name, _)| fresh(&format!("m_{name}"))).collect();
    let mut rels: Vec<(String, usize)> = vec![(universe_rel.clone(), 1)];
    rels.extend(rel_markers.iter().map(|n| (n.clone(), 1)));
    rels.extend(pos_rels.iter().map(|n| (n.clone(), 2)));
    let sig = Arc::new(Signature::new(rels));
    let extra: usize = s.tuples.iter().map(|ts| ts.len()).sum();
    let mut out = Structure::new(sig, s.n + extra);
    for v in 0..s.n {
        out.labels[v] = s.labels[v].clone();
        out.add_tuple(0, vec![v]); // universe marker
    }
    let marker_base = 1;
    let pos_base = 1 + s.sig.rels.len();
    let mut next = s.n;
    for (r, ts) in s.tuples.iter().enumerate() {
        for t in ts {
            let b = next;
            next += 1;
            out.labels[b] = format!("t{}_{}", s.sig.rels[r].0, b - s.n);
            out.add_tuple(marker_base + r, vec![b]);
            for (j, &a) in t.iter().enumerate() {
                out.add_tuple(pos_base + j, vec![b, a]);
            }
        }
    }
    let red = ArityReduction { universe_rel, rel_markers, pos_rels, orig_sig, applied: true };
    let mut back: Vec<Option<usize>> = (0..s.n).map(Some).collect();
    back.extend((0..extra).map(|_| None));
    (out, red, back)
}

// ---- text format -----------------------------------------------------------

/// Parse the structure text format:
/// ```text
/// signature r1/2 color/1
/// node a
/// tuple r1 a b
/// ```
pub fn parse_structure(text: &str) -> Result<Structure> {
    let mut sig: Option<Arc<Signature>> = None;
    let mut labels: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut pending: Vec<(usize, usize, Vec<String>)> = Vec::new();
    for (lno, raw) in text.lines().enumerate() {
        let line = lno + 1;
        let lstr = raw.split('#').next().unwrap_or("").trim();
        if lstr.is_empty() {
            continue;
        }
        let mut parts = lstr.split_whitespace();
        let head = parts.next().unwrap();
        match head {
            "signature" => {
                if sig.is_some() {
                    return Err(Error::parse(line, "duplicate signature line"));
                }
                let mut rels = Vec::new();
                for spec in parts {
                    let (name, ar) = spec
                        .rsplit_once('/')
                        .ok_or_else(|| Error::parse(line, format!("bad relation spec `{spec}`")))?;
                    let ar: usize = ar
                        .parse()
                        .map_err(|_| Error::parse(line, format!("bad arity in `{spec}`")))?;
                    if rels.iter().any(|(n, _): &(String, usize)| n == name) {
                        return Err(Error::parse(line, format!("duplicate relation `{name}`")));
                    }
                    rels.push((name.to_string(), ar));
                }
                sig = Some(Arc::new(Signature::new(rels)));
            }
            "node" => {
                let name = parts
                    .next()
                    .ok_or_else(|| Error::parse(line, "node needs a label"))?
                    .to_string();
                if parts.next().is_some() {
                    return Err(Error::parse(line, "trailing tokens after node label"));
                }
                if index.contains_key(&name) {
                    return Err(Error::parse(line, format!("duplicate node `{name}`")));
                }
                index.insert(name.clone(), labels.len());
                labels.push(name);
            }
            "tuple" => {
                let rel = parts
                    .next()
                    .ok_or_else(|| Error::parse(line, "tuple needs a relation"))?
                    .to_string();
                let sig = sig
                    .as_ref()
                    .ok_or_else(|| Error::parse(line, "tuple before signature"))?;
                let r = sig
                    .rel(&rel)
                    .ok_or_else(|| Error::parse(line, format!("unknown relation `{rel}`")))?;
                let args: Vec<String> = parts.map(|s| s.to_string()).collect();
                if args.len() != sig.arity(r) {
                    return Err(Error::parse(
                        line,
                        format!("relation `{rel}` has arity {}, got {} args", sig.arity(r), args.len()),
                    ));
                }
                pending.push((line, r, args));
            }
            other => return Err(Error::parse(line, format!("unknown directive `{other}`"))),
        }
    }
    let sig = sig.ok_or_else(|| Error::parse(0, "missing signature line"))?;
    let mut s = Structure::new(sig, labels.len());
    s.labels = labels;
    for (line, r, args) in pending {
        let mut t = Vec::with_capacity(args.len());
        for a in &args {
            let v = index
                .get(a)
                .ok_or_else(|| Error::parse(line, format!("unknown node `{a}`")))?;
            t.push(*v);
        }
        s.tuples[r].push(t);
    }
    Ok(s)
}

pub fn write_structure(s: &Structure) -> String {
    let mut out = String::from("signature");
    for (name, ar) in &s.sig.rels {
        out.push_str(&format!(" {name}/{ar}"));
    }
    out.push('\n');
    for v in 0..s.n {
        out.push_str(&format!("node {}\n", s.labels[v]));
    }
    for (r, ts) in s.tuples.iter().enumerate() {
        for t in ts {
            out.push_str(&format!("tuple {}", s.sig.rels[r].0));
            for &v in t {
                out.push(' ');
                out.push_str(&s.labels[v]);
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig1() -> Arc<Signature> {
        Arc::new(Signature::new(vec![("r1".into(), 2)]))
    }

    fn path(n: usize) -> Structure {
        let mut s = Structure::new(sig1(), n);
        for v in 0..n.saturating_sub(1) {
            s.add_tuple(0, vec![v, v + 1]);
        }
        s
    }

    #[test]
    fn gaifman_and_degree() {
        let s = path(4);
        assert_eq!(s.max_degree(), 2);
        assert_eq!(s.gaifman()[1], vec![0, 2]);
        assert_eq!(s.size(), 4 + 2 * 3);
    }

    #[test]
    fn sphere_and_neighborhood() {
        let s = path(6);
        let adj = s.gaifman();
        assert_eq!(sphere(&adj, &[2], 1), vec![1, 2, 3]);
        let nb = neighborhood(&s, &[Some(2)], 2);
        assert_eq!(nb.s.n, 5);
        assert_eq!(nb.centers, vec![Some(2)]); // node 2 is third in 0..=4
    }

    #[test]
    fn canonical_type_invariance() {
        // a path pointed at one end equals any relabeling of it
        let s = path(5);
        let p = Pointed { s: s.clone(), centers: vec![Some(0)], radius: 4 };
        let (t1, pi1) = canonical_type(&p);
        // relabel: reverse node order, edges flipped accordingly
        let mut s2 = Structure::new(sig1(), 5);
        for v in 0..4 {
            s2.add_tuple(0, vec![4 - v, 4 - (v + 1)]);
        }
        let p2 = Pointed { s: s2, centers: vec![Some(4)], radius: 4 };
        let (t2, pi2) = canonical_type(&p2);
        assert_eq!(t1.code, t2.code);
        assert_eq!(pi1[0], 0);
        assert_eq!(pi2[0], 4);
    }

    #[test]
    fn canonical_type_distinguishes_direction() {
        let mut s1 = Structure::new(sig1(), 2);
        s1.add_tuple(0, vec![0, 1]);
        let mut s2 = Structure::new(sig1(), 2);
        s2.add_tuple(0, vec![1, 0]);
        let p1 = Pointed { s: s1, centers: vec![Some(0)], radius: 1 };
        let p2 = Pointed { s: s2, centers: vec![Some(0)], radius: 1 };
        let (t1, _) = canonical_type(&p1);
        let (t2, _) = canonical_type(&p2);
        assert_ne!(t1.code, t2.code);
    }

    #[test]
    fn canonical_type_symmetric_star() {
        // center with 3 identical out-edges: automorphism pruning path
        let mut s = Structure::new(sig1(), 4);
        for v in 1..4 {
            s.add_tuple(0, vec![0, v]);
        }
        let p = Pointed { s, centers: vec![Some(0)], radius: 1 };
        let (t, pi) = canonical_type(&p);
        assert_eq!(t.canon.s.n, 4);
        assert_eq!(pi.len(), 4);
        // least witness maps leaf ids in ascending order
        assert_eq!(pi, vec![0, 1, 2, 3]);
    }

    #[test]
    fn iso_found_and_refused() {
        let s = path(3);
        let a = Pointed { s: s.clone(), centers: vec![Some(0)], radius: 2 };
        let b = Pointed { s: s.clone(), centers: vec![Some(0)], radius: 2 };
        let m = find_isomorphism(&a, &b, DEFAULT_ISO_CAP).unwrap().unwrap();
        assert_eq!(m, vec![0, 1, 2]);
        let c = Pointed { s, centers: vec![Some(2)], radius: 2 };
        assert!(find_isomorphism(&a, &c, DEFAULT_ISO_CAP).unwrap().is_none());
        assert!(find_isomorphism(&a, &c, 2).is_err());
    }

    #[test]
    fn components_split() {
        let mut s = Structure::new(sig1(), 5);
        s.add_tuple(0, vec![0, 1]);
        s.add_tuple(0, vec![3, 4]);
        let comps = s.components();
        assert_eq!(comps.len(), 3);
        assert_eq!(comps[0].1, vec![0, 1]);
        assert_eq!(comps[1].1, vec![2]);
        assert_eq!(comps[2].1, vec![3, 4]);
    }

    #[test]
    fn text_roundtrip() {
        let text = "signature r1/2 color/1\nnode a\nnode b\ntuple r1 a b\ntuple color a\n";
        let s = parse_structure(text).unwrap();
        assert_eq!(s.n, 2);
        assert_eq!(write_structure(&s), text);
        assert!(parse_structure("node a\ntuple r1 a a\n").is_err());
    }

    #[test]
    fn arity_reduction_identity_and_encoding() {
        let s = path(3);
        let (out, red, _) = reduce_arity(&s);
        assert!(!red.applied);
        assert_eq!(out.size(), s.size());

        let sig = Arc::new(Signature::new(vec![("r3".into(), 3)]));
        let mut s3 = Structure::new(sig, 3);
        s3.add_tuple(0, vec![0, 1, 2]);
        let (out, red, back) = reduce_arity(&s3);
        assert!(red.applied);
        assert_eq!(out.n, 4);
        assert_eq!(out.sig.max_arity(), 2);
        assert_eq!(back[3], None);
        // tuple node adjacent to all three originals
        assert_eq!(out.gaifman()[3].len(), 3);
    }
}
