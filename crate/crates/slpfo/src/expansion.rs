//! Radius-bounded local decompression of a nonterminal's value: the
//! expansion holds every node of `val(A)` within distance ζ of the directly
//! produced internal nodes, discovered by a BFS with four moves that hop
//! between production copies without materializing `val(A)`.
//!
//! From a triple `(p, u, ℓ)` with `p` ending in `B`:
//!   Stay1: follow a tuple of `U_B`.
//!   Stay2: stay in `U_B` but cross an edge produced by a reference, i.e.
//!          between `σ(i)` and `σ(j)` when the child's contacts are adjacent.
//!   Move down: enter a referenced copy at an internal neighbor of a contact.
//!   Move up: leave through a contact of `B` into the parent copy.
//! Completeness of the four moves needs the apex condition (reference images
//! avoid contacts), which also caps proper representations at one
//! normalization step.

use crate::query::dist_leq_bfs;
use crate::slp::{DagPath, NodeRep, Slp};
use crate::structure::{canonical_type, NeighborhoodType, Pointed, Structure};
use crate::{Error, Result};
use std::collections::{BTreeSet, HashMap, VecDeque};

/// Per-production adjacency and incidence indices shared by all BFS runs.
pub struct ProdIndex {
    infos: Vec<ProdInfo>,
}

struct ProdInfo {
    /// Gaifman adjacency over local nodes
    adj: Vec<Vec<usize>>,
    /// per local node: incident (rel, tuple index) pairs
    incident: Vec<Vec<(usize, usize)>>,
    /// per local node u: (ref index j, contact position i) with sigma_j(i) = u
    ref_positions: Vec<Vec<(usize, usize)>>,
    /// contact position pairs (i, j), i != j, adjacent in the local Gaifman graph
    contact_adj: Vec<(usize, usize)>,
    /// per contact position: internal local neighbors of the contact node
    contact_internal_nbrs: Vec<Vec<usize>>,
    /// per local node: contact positions whose node is adjacent to it
    contact_nbrs_of: Vec<Vec<usize>>,
}

impl ProdIndex {
    pub fn build(slp: &Slp) -> ProdIndex {
        let infos = slp
            .nts
            .iter()
            .map(|p| {
                let s = p.local_structure(slp.sig.clone());
                let adj = s.gaifman();
                let mut incident = vec![Vec::new(); p.n_local];
                for (rel, ts) in p.tuples.iter().enumerate() {
                    for (ti, t) in ts.iter().enumerate() {
                        let mut seen = Vec::new();
                        for &e in t {
                            if !seen.contains(&e) {
                                seen.push(e);
                                incident[e].push((rel, ti));
                            }
                        }
                    }
                }
                let mut ref_positions = vec![Vec::new(); p.n_local];
                for (j, r) in p.refs.iter().enumerate() {
                    for (i, &u) in r.sigma.iter().enumerate() {
                        ref_positions[u].push((j, i));
                    }
                }
                let mut contact_adj = Vec::new();
                for (i, &ci) in p.contacts.iter().enumerate() {
                    for (j, &cj) in p.contacts.iter().enumerate() {
                        if i != j && adj[ci].contains(&cj) {
                            contact_adj.push((i, j));
                        }
                    }
                }
                let contact_internal_nbrs = p
                    .contacts
                    .iter()
                    .map(|&c| {
                        adj[c]
                            .iter()
                            .copied()
                            .filter(|&v| !p.is_contact(v))
                            .collect()
                    })
                    .collect();
                let contact_nbrs_of = (0..p.n_local)
                    .map(|u| {
                        p.contacts
                            .iter()
                            .enumerate()
                            .filter(|&(_, &c)| adj[u].contains(&c))
                            .map(|(i, _)| i)
                            .collect()
                    })
                    .collect();
                ProdInfo {
                    adj,
                    incident,
                    ref_positions,
                    contact_adj,
                    contact_internal_nbrs,
                    contact_nbrs_of,
                }
            })
            .collect();
        ProdIndex { infos }
    }
}

/// BFS result over `val(A)`: nodes keyed by proper representation relative
/// to `A`, the induced structure over them, and distance labels.
pub struct LocalFragment {
    pub nt: usize,
    pub reps: Vec<NodeRep>,
    pub dist: Vec<u32>,
    pub index: HashMap<NodeRep, usize>,
    pub s: Structure,
}

fn bfs_moves(
    slp: &Slp,
    pidx: &ProdIndex,
    a: usize,
    seeds: &[NodeRep],
    radius: u32,
) -> LocalFragment {
    let mut reps: Vec<NodeRep> = Vec::new();
    let mut dist: Vec<u32> = Vec::new();
    let mut index: HashMap<NodeRep, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    for seed in seeds {
        if !index.contains_key(seed) {
            index.insert(seed.clone(), reps.len());
            reps.push(seed.clone());
            dist.push(0);
            queue.push_back(index[seed]);
        }
    }
    while let Some(cur) = queue.pop_front() {
        let l = dist[cur];
        if l == radius {
            continue;
        }
        let rep = reps[cur].clone();
        let b = rep.path.end(slp);
        let prod = &slp.nts[b];
        let info = &pidx.infos[b];
        let top = rep.path.edges.is_empty();
        let push = |reps: &mut Vec<NodeRep>,
                        dist: &mut Vec<u32>,
                        index: &mut HashMap<NodeRep, usize>,
                        queue: &mut VecDeque<usize>,
                        nr: NodeRep| {
            if !index.contains_key(&nr) {
                index.insert(nr.clone(), reps.len());
                reps.push(nr);
                dist.push(l + 1);
                queue.push_back(reps.len() - 1);
            }
        };
        // Stay1
        for &v in &info.adj[rep.node] {
            if !top && prod.is_contact(v) {
                continue;
            }
            push(&mut reps, &mut dist, &mut index, &mut queue,
                 NodeRep { path: rep.path.clone(), node: v });
        }
        // Stay2 + Move down, by reference index
        for &(j, i) in &info.ref_positions[rep.node] {
            let r = &prod.refs[j];
            let cinfo = &pidx.infos[r.nt];
            for &(ci, cj) in &cinfo.contact_adj {
                if ci == i {
                    push(&mut reps, &mut dist, &mut index, &mut queue,
                         NodeRep { path: rep.path.clone(), node: r.sigma[cj] });
                }
            }
            for &v in &cinfo.contact_internal_nbrs[i] {
                push(&mut reps, &mut dist, &mut index, &mut queue,
                     NodeRep { path: rep.path.child((j + 1) as u32), node: v });
            }
        }
        // Move up
        if !top {
            let mut parent = rep.path.clone();
            let j = (parent.edges.pop().unwrap() - 1) as usize;
            let c = parent.end(slp);
            let sigma = &slp.nts[c].refs[j].sigma;
            for &i in &info.contact_nbrs_of[rep.node] {
                push(&mut reps, &mut dist, &mut index, &mut queue,
                     NodeRep { path: parent.clone(), node: sigma[i] });
            }
        }
    }

    let s = induced_structure(slp, pidx, &reps, &index);
    LocalFragment { nt: a, reps, dist, index, s }
}

/// Tuples of `val(A)` with every endpoint in the node set. Normalizes each
/// endpoint at most one step (apex) and scans only tuples incident to
/// present nodes, in their own copy and in referenced copies.
fn induced_structure(
    slp: &Slp,
    pidx: &ProdIndex,
    reps: &[NodeRep],
    index: &HashMap<NodeRep, usize>,
) -> Structure {
    let mut found: BTreeSet<(usize, Vec<usize>)> = BTreeSet::new();
    let mut try_tuple = |owner: &DagPath, rel: usize, t: &[usize]| {
        let prod = &slp.nts[owner.end(slp)];
        let mut mapped = Vec::with_capacity(t.len());
        for &e in t {
            let nr = if owner.edges.is_empty() || !prod.is_contact(e) {
                NodeRep { path: owner.clone(), node: e }
            } else {
                let i = prod.contact_index(e).unwrap();
                let mut parent = owner.clone();
                let j = (parent.edges.pop().unwrap() - 1) as usize;
                let c = parent.end(slp);
                NodeRep { path: parent, node: slp.nts[c].refs[j].sigma[i] }
            };
            match index.get(&nr) {
                Some(&id) => mapped.push(id),
                None => return,
            }
        }
        found.insert((rel, mapped));
    };
    for rep in reps {
        let b = rep.path.end(slp);
        let prod = &slp.nts[b];
        for &(rel, ti) in &pidx.infos[b].incident[rep.node] {
            try_tuple(&rep.path, rel, &prod.tuples[rel][ti]);
        }
        // contact-only tuples of referenced copies normalize into this one
        for &(j, i) in &pidx.infos[b].ref_positions[rep.node] {
            let r = &prod.refs[j];
            let child = rep.path.child((j + 1) as u32);
            let cprod = &slp.nts[r.nt];
            let ci = cprod.contacts[i];
            for &(rel, ti) in &pidx.infos[r.nt].incident[ci] {
                try_tuple(&child, rel, &cprod.tuples[rel][ti]);
            }
        }
    }
    let mut s = Structure::new(slp.sig.clone(), reps.len());
    s.labels = reps.iter().map(|r| r.display(slp)).collect();
    for (rel, t) in found {
        s.add_tuple(rel, t);
    }
    s
}

pub struct Expansion {
    pub frag: LocalFragment,
    pub zeta: u32,
    /// boundary = top-copy contacts present in the fragment + distance-ζ rim
    pub boundary: Vec<bool>,
    /// node ids of the directly produced internal nodes (distance 0)
    pub in_a: Vec<usize>,
    /// per contact position of A: its node id, when within the fragment
    pub contact_nodes: Vec<Option<usize>>,
}

/// One entry per valid `B`-node: the center and the deterministic
/// isomorphism from the canonical type to fragment node ids (element 0 of
/// the type maps to the center).
pub struct ValidNodeEntry {
    pub node: usize,
    pub pi: Vec<usize>,
}

pub fn compute_expansion(slp: &Slp, pidx: &ProdIndex, a: usize, zeta: u32) -> Result<Expansion> {
    if !slp.is_apex() {
        return Err(Error::ApexRequired("the four-move search needs reference images to avoid contacts".into()));
    }
    let prod = &slp.nts[a];
    let seeds: Vec<NodeRep> = prod
        .internals()
        .into_iter()
        .map(|u| NodeRep { path: DagPath::empty(a), node: u })
        .collect();
    let frag = bfs_moves(slp, pidx, a, &seeds, zeta);
    let contact_nodes: Vec<Option<usize>> = prod
        .contacts
        .iter()
        .map(|&c| frag.index.get(&NodeRep { path: DagPath::empty(a), node: c }).copied())
        .collect();
    let mut boundary = vec![false; frag.reps.len()];
    for (id, &d) in frag.dist.iter().enumerate() {
        if d == zeta {
            boundary[id] = true;
        }
    }
    for id in contact_nodes.iter().flatten() {
        boundary[*id] = true;
    }
    let in_a: Vec<usize> = frag
        .dist
        .iter()
        .enumerate()
        .filter(|&(_, &d)| d == 0)
        .map(|(id, _)| id)
        .collect();
    Ok(Expansion { frag, zeta, boundary, in_a, contact_nodes })
}

impl Expansion {
    /// Classify every node whose ρ-neighborhood is a valid substructure
    /// (avoids the boundary, meets the directly produced nodes) by canonical
    /// type. Requires ζ = 2ρ+1 so valid neighborhoods are never clipped.
    pub fn classify_nodes(&self, rho: u32) -> Result<HashMap<NeighborhoodType, Vec<ValidNodeEntry>>> {
        if self.zeta != 2 * rho + 1 {
            return Err(Error::Invalid(format!(
                "expansion radius {} does not match 2*{rho}+1",
                self.zeta
            )));
        }
        let adj = self.frag.s.gaifman();
        let in_a: Vec<bool> = {
            let mut v = vec![false; self.frag.reps.len()];
            for &id in &self.in_a {
                v[id] = true;
            }
            v
        };
        let mut out: HashMap<NeighborhoodType, Vec<ValidNodeEntry>> = HashMap::new();
        for c in 0..self.frag.reps.len() {
            let ball = crate::structure::sphere(&adj, &[c], rho);
            if ball.iter().any(|&v| self.boundary[v]) || !ball.iter().any(|&v| in_a[v]) {
                continue;
            }
            let p = crate::structure::neighborhood(&self.frag.s, &[Some(c)], rho);
            let (ty, pi_canon_to_local) = canonical_type(&p);
            // neighborhood nodes are in sphere order: compose to get
            // canonical element -> fragment node id
            debug_assert_eq!(ball.len(), pi_canon_to_local.len());
            let pi: Vec<usize> = pi_canon_to_local.iter().map(|&l| ball[l]).collect();
            debug_assert_eq!(pi[0], c);
            out.entry(ty).or_default().push(ValidNodeEntry { node: c, pi });
        }
        Ok(out)
    }

    pub fn valid_nodes(&self, b: &NeighborhoodType, rho: u32) -> Result<Vec<ValidNodeEntry>> {
        Ok(self.classify_nodes(rho)?.remove(b).unwrap_or_default())
    }
}

/// ρ-neighborhood types realized in `val(D)`, as the union of valid-node
/// types over all expansions, plus the per-nonterminal valid-node lists.
pub struct TypeCatalog {
    pub rho: u32,
    pub zeta: u32,
    pub expansions: Vec<Expansion>,
    /// sorted for deterministic numbering
    pub types: Vec<NeighborhoodType>,
    /// lists[i][a] = valid B_i-nodes in the expansion of nonterminal a
    pub lists: Vec<Vec<Vec<ValidNodeEntry>>>,
}

pub fn realized_types(slp: &Slp, pidx: &ProdIndex, rho: u32) -> Result<TypeCatalog> {
    let zeta = 2 * rho + 1;
    let mut expansions = Vec::with_capacity(slp.nts.len());
    let mut per_nt: Vec<HashMap<NeighborhoodType, Vec<ValidNodeEntry>>> = Vec::new();
    for a in 0..slp.nts.len() {
        let exp = compute_expansion(slp, pidx, a, zeta)?;
        per_nt.push(exp.classify_nodes(rho)?);
        expansions.push(exp);
    }
    let mut types: Vec<NeighborhoodType> = per_nt
        .iter()
        .flat_map(|m| m.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    types.sort();
    let lists = types
        .iter()
        .map(|ty| {
            per_nt
                .iter_mut()
                .map(|m| m.remove(ty).unwrap_or_default())
                .collect()
        })
        .collect();
    Ok(TypeCatalog { rho, zeta, expansions, types, lists })
}

impl TypeCatalog {
    pub fn useful_nonterminals(&self, type_idx: usize) -> Vec<usize> {
        self.lists[type_idx]
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(a, _)| a)
            .collect()
    }
}

/// The radius-`r` neighborhood of `c` in `val(A)`, computed by the same
/// four-move BFS seeded at `c`; returns the fragment and the center's id.
pub fn local_sphere(
    slp: &Slp,
    pidx: &ProdIndex,
    a: usize,
    c: &NodeRep,
    r: u32,
) -> Result<(LocalFragment, usize)> {
    if !slp.is_apex() {
        return Err(Error::ApexRequired("the four-move search needs reference images to avoid contacts".into()));
    }
    if c.path.start != a {
        return Err(Error::Invalid("representation does not start at the nonterminal".into()));
    }
    let end = c.path.end(slp);
    if c.node >= slp.nts[end].n_local
        || (!c.path.edges.is_empty() && slp.nts[end].is_contact(c.node))
    {
        return Err(Error::Invalid("not a proper representation".into()));
    }
    let frag = bfs_moves(slp, pidx, a, std::slice::from_ref(c), r);
    let center = frag.index[c];
    Ok((frag, center))
}

impl LocalFragment {
    pub fn pointed(&self, centers: &[usize], radius: u32) -> Pointed {
        Pointed {
            s: self.s.clone(),
            centers: centers.iter().map(|&c| Some(c)).collect(),
            radius,
        }
    }
}

// the fragment structure is small; reuse the query-module BFS for ad-hoc
// distance checks on it
#[allow(dead_code)]
fn frag_dist_leq(frag: &LocalFragment, x: usize, y: usize, r: u32) -> bool {
    dist_leq_bfs(&frag.s.gaifman(), x, y, r)
}
