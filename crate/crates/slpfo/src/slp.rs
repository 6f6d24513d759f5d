//! Straight-line programs over relational structures.
//!
//! A production is a structure over local nodes (contacts first as listed,
//! then internals) plus an ordered list of references `(B, sigma)` where
//! `sigma` maps the contacts of `B` injectively into the local nodes.
//! `val(A)` glues a copy of `val(B)` onto `sigma`'s image for each reference;
//! every node of `val(A)` has a unique proper representation `(p, v)` with
//! `p` a derivation path from `A` and `v` a local node that is not a contact
//! of `p`'s endpoint (unless `p` is empty).

use crate::structure::{Signature, Structure};
use crate::{Error, Result};
use num_bigint::BigUint;
use num_traits::Zero;
use std::collections::{HashMap, HashSet};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reference {
    pub nt: usize,
    /// sigma[i] = local node bound to contact i+1 of the referenced nonterminal
    pub sigma: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Production {
    pub name: String,
    pub rank: usize,
    pub n_local: usize,
    /// contacts[i] = local node carrying contact i+1 (injective)
    pub contacts: Vec<usize>,
    pub local_labels: Vec<String>,
    /// per relation, tuples over local nodes
    pub tuples: Vec<Vec<Vec<usize>>>,
    pub refs: Vec<Reference>,
}

impl Production {
    pub fn is_contact(&self, v: usize) -> bool {
        self.contacts.contains(&v)
    }

    pub fn contact_index(&self, v: usize) -> Option<usize> {
        self.contacts.iter().position(|&c| c == v)
    }

    pub fn internals(&self) -> Vec<usize> {
        (0..self.n_local).filter(|&v| !self.is_contact(v)).collect()
    }

    /// |U_A| with tuples weighted by arity.
    pub fn local_size(&self, sig: &Signature) -> usize {
        self.n_local
            + self
                .tuples
                .iter()
                .enumerate()
                .map(|(r, ts)| sig.arity(r) * ts.len())
                .sum::<usize>()
    }

    /// Local structure over the production's nodes.
    pub fn local_structure(&self, sig: Arc<Signature>) -> Structure {
        let mut s = Structure::new(sig, self.n_local);
        s.labels = self.local_labels.clone();
        s.tuples = self.tuples.clone();
        s
    }
}

#[derive(Debug, Clone)]
pub struct Slp {
    pub sig: Arc<Signature>,
    pub nts: Vec<Production>,
    pub initial: usize,
}

/// Derivation path: starts at `start`, follows 1-based reference indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DagPath {
    pub start: usize,
    pub edges: Vec<u32>,
}

impl DagPath {
    pub fn empty(start: usize) -> Self {
        DagPath { start, edges: Vec::new() }
    }

    pub fn end(&self, slp: &Slp) -> usize {
        let mut a = self.start;
        for &i in &self.edges {
            a = slp.nts[a].refs[i as usize - 1].nt;
        }
        a
    }

    pub fn child(&self, i: u32) -> Self {
        let mut edges = self.edges.clone();
        edges.push(i);
        DagPath { start: self.start, edges }
    }

    pub fn display(&self, slp: &Slp) -> String {
        let mut out = slp.nts[self.start].name.clone();
        let mut a = self.start;
        for &i in &self.edges {
            a = slp.nts[a].refs[i as usize - 1].nt;
            out.push_str(&i.to_string());
            out.push_str(&slp.nts[a].name);
        }
        out
    }
}

/// A node of `val(start(p))` in path representation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRep {
    pub path: DagPath,
    pub node: usize,
}

impl NodeRep {
    pub fn display(&self, slp: &Slp) -> String {
        let end = self.path.end(slp);
        format!("{}:{}", self.path.display(slp), slp.nts[end].local_labels[self.node])
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub apex: bool,
    pub acyclic: bool,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.errors.is_empty()
    }
}

impl Slp {
    /// Reverse topological order of nonterminals reachable from `initial`
    /// (references point forward; result lists referents before referrers).
    /// Errors on cycles.
    pub fn topo_order(&self) -> Result<Vec<usize>> {
        let mut state = vec![0u8; self.nts.len()]; // 0 new, 1 active, 2 done
        let mut order = Vec::new();
        // iterative DFS, (nt, next ref index)
        let mut stack = vec![(self.initial, 0usize)];
        state[self.initial] = 1;
        while let Some(&mut (a, ref mut i)) = stack.last_mut() {
            if *i < self.nts[a].refs.len() {
                let b = self.nts[a].refs[*i].nt;
                *i += 1;
                match state[b] {
                    0 => {
                        state[b] = 1;
                        stack.push((b, 0));
                    }
                    1 => {
                        return Err(Error::Invalid(format!(
                            "reference cycle through `{}`",
                            self.nts[b].name
                        )))
                    }
                    _ => {}
                }
            } else {
                state[a] = 2;
                order.push(a);
                stack.pop();
            }
        }
        Ok(order)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut rep = ValidationReport { errors: Vec::new(), apex: true, acyclic: true };
        if self.nts.is_empty() {
            rep.errors.push("no nonterminals".into());
            return rep;
        }
        let init = &self.nts[self.initial];
        if init.rank != 0 {
            rep.errors.push(format!("initial `{}` has rank {}, want 0", init.name, init.rank));
        }
        for p in &self.nts {
            let mut seen = HashSet::new();
            for (i, &c) in p.contacts.iter().enumerate() {
                if c >= p.n_local {
                    rep.errors.push(format!("`{}`: contact {} out of range", p.name, i + 1));
                } else if !seen.insert(c) {
                    rep.errors.push(format!("`{}`: contact map not injective", p.name));
                }
            }
            if p.contacts.len() != p.rank {
                rep.errors.push(format!(
                    "`{}`: rank {} but {} contacts",
                    p.name,
                    p.rank,
                    p.contacts.len()
                ));
            }
            for (r, ts) in p.tuples.iter().enumerate() {
                for t in ts {
                    if t.len() != self.sig.arity(r) {
                        rep.errors.push(format!("`{}`: tuple arity mismatch", p.name));
                    }
                    if t.iter().any(|&v| v >= p.n_local) {
                        rep.errors.push(format!("`{}`: tuple node out of range", p.name));
                    }
                }
            }
            for (k, rf) in p.refs.iter().enumerate() {
                if rf.nt >= self.nts.len() {
                    rep.errors.push(format!("`{}`: reference {} out of range", p.name, k + 1));
                    continue;
                }
                let b = &self.nts[rf.nt];
                if rf.sigma.len() != b.rank {
                    rep.errors.push(format!(
                        "`{}`: reference {} binds {} contacts, `{}` has rank {}",
                        p.name,
                        k + 1,
                        rf.sigma.len(),
                        b.name,
                        b.rank
                    ));
                }
                let mut seen = HashSet::new();
                for &v in &rf.sigma {
                    if v >= p.n_local {
                        rep.errors.push(format!("`{}`: reference {} image out of range", p.name, k + 1));
                    } else {
                        if !seen.insert(v) {
                            rep.errors
                                .push(format!("`{}`: reference {} not injective", p.name, k + 1));
                        }
                        if p.is_contact(v) {
                            rep.apex = false;
                        }
                    }
                }
            }
        }
        if let Err(e) = self.topo_order() {
            rep.acyclic = false;
            rep.errors.push(e.to_string());
        }
        rep
    }

    pub fn is_apex(&self) -> bool {
        self.nts.iter().all(|p| {
            p.refs
                .iter()
                .all(|rf| rf.sigma.iter().all(|&v| !p.is_contact(v)))
        })
    }

    /// |D| = sum over nonterminals of |U_A| + sum over references of 1+rank.
    pub fn size(&self) -> usize {
        self.nts
            .iter()
            .map(|p| {
                p.local_size(&self.sig)
                    + p.refs.iter().map(|rf| 1 + self.nts[rf.nt].rank).sum::<usize>()
            })
            .sum()
    }

    /// Exact node count of val(A) per nonterminal (internal nodes never merge).
    pub fn val_node_counts(&self) -> Result<Vec<BigUint>> {
        let order = self.topo_order()?;
        let mut counts = vec![BigUint::zero(); self.nts.len()];
        for a in order {
            let p = &self.nts[a];
            let mut c = BigUint::from(p.n_local - p.rank);
            for rf in &p.refs {
                c += &counts[rf.nt];
            }
            counts[a] = c;
        }
        Ok(counts)
    }

    /// Upper bound on |val(A)| (nodes plus arity-weighted tuple slots;
    /// exact when no glued tuples coincide).
    pub fn val_size_bounds(&self) -> Result<Vec<BigUint>> {
        let order = self.topo_order()?;
        let mut sizes = vec![BigUint::zero(); self.nts.len()];
        for a in order {
            let p = &self.nts[a];
            let mut c = BigUint::from(p.n_local - p.rank);
            for (r, ts) in p.tuples.iter().enumerate() {
                c += BigUint::from(self.sig.arity(r) * ts.len());
            }
            for rf in &p.refs {
                c += &sizes[rf.nt];
            }
            sizes[a] = c;
        }
        Ok(sizes)
    }

    /// Maximum Gaifman degree of val(D), computed bottom-up: the degree of a
    /// local node is its local Gaifman degree plus the degree of each contact
    /// it is bound to by a reference. Exact for apex SLPs.
    pub fn val_degree(&self) -> Result<usize> {
        let order = self.topo_order()?;
        let mut contact_deg: Vec<Vec<usize>> = vec![Vec::new(); self.nts.len()];
        let mut max_deg = 0usize;
        let mut reachable = vec![false; self.nts.len()];
        reachable[self.initial] = true;
        for &a in order.iter().rev() {
            if reachable[a] {
                for rf in &self.nts[a].refs {
                    reachable[rf.nt] = true;
                }
            }
        }
        for a in order {
            let p = &self.nts[a];
            let local = p.local_structure(self.sig.clone());
            let adj = local.gaifman();
            let mut deg: Vec<usize> = adj.iter().map(|n| n.len()).collect();
            for rf in &p.refs {
                for (i, &v) in rf.sigma.iter().enumerate() {
                    deg[v] += contact_deg[rf.nt][i];
                }
            }
            contact_deg[a] = p.contacts.iter().map(|&c| deg[c]).collect();
            if reachable[a] {
                for v in p.internals() {
                    max_deg = max_deg.max(deg[v]);
                }
            }
        }
        Ok(max_deg)
    }

    /// Normalize a node representation: resolve contacts upward until the
    /// local node is internal or the path is empty.
    pub fn normalize(&self, path: &DagPath, node: usize) -> NodeRep {
        let mut nts_along = Vec::with_capacity(path.edges.len() + 1);
        let mut a = path.start;
        nts_along.push(a);
        for &i in &path.edges {
            a = self.nts[a].refs[i as usize - 1].nt;
            nts_along.push(a);
        }
        let mut edges = path.edges.clone();
        let mut v = node;
        while let Some(ci) = self.nts[*nts_along.last().unwrap()].contact_index(v) {
            if edges.is_empty() {
                break;
            }
            let i = edges.pop().unwrap();
            nts_along.pop();
            let parent = *nts_along.last().unwrap();
            v = self.nts[parent].refs[i as usize - 1].sigma[ci];
        }
        NodeRep { path: DagPath { start: path.start, edges }, node: v }
    }

    /// Embedding of a node of val(end(p)) into val(start(p)).
    pub fn embed(&self, p: &DagPath, n: &NodeRep) -> NodeRep {
        debug_assert_eq!(p.end(self), n.path.start);
        let mut edges = p.edges.clone();
        edges.extend(&n.path.edges);
        self.normalize(&DagPath { start: p.start, edges }, n.node)
    }

    /// Decompress val(initial). Errors with a lower bound when the result
    /// exceeds `cap` (counted as nodes plus arity-weighted tuple slots).
    pub fn decompress(&self, cap: usize) -> Result<(Structure, HashMap<NodeRep, usize>)> {
        self.decompress_from(self.initial, cap)
    }

    /// Decompress val(a) for any nonterminal (contacts become part of the
    /// universe when rank > 0).
    pub fn decompress_from(
        &self,
        a: usize,
        cap: usize,
    ) -> Result<(Structure, HashMap<NodeRep, usize>)> {
        let node_counts = self.val_node_counts()?;
        let rank = BigUint::from(self.nts[a].rank);
        if node_counts[a].clone() + &rank > BigUint::from(cap) {
            return Err(Error::CapExceeded(format!(
                "val has {} nodes, cap {} (set SLPFO_DECOMPRESS_CAP to raise)",
                node_counts[a].clone() + rank,
                cap
            )));
        }
        let mut ids: HashMap<NodeRep, usize> = HashMap::new();
        let mut labels: Vec<String> = Vec::new();
        let mut tuples: Vec<HashSet<Vec<usize>>> =
            vec![HashSet::new(); self.sig.rels.len()];
        // contacts of the root become universe elements with empty path
        for &c in &self.nts[a].contacts {
            let rep = NodeRep { path: DagPath::empty(a), node: c };
            let id = labels.len();
            labels.push(rep.display(self));
            ids.insert(rep, id);
        }
        let mut size = ids.len();
        let work_cap = cap.saturating_mul(8).saturating_add(1 << 16);
        let mut copies = 0usize;
        // DFS over derivation copies
        let mut stack = vec![DagPath::empty(a)];
        while let Some(p) = stack.pop() {
            copies += 1;
            if copies > work_cap {
                return Err(Error::CapExceeded(format!(
                    "derivation tree has more than {work_cap} copies"
                )));
            }
            let b = p.end(self);
            let prod = &self.nts[b];
            for v in prod.internals() {
                let rep = NodeRep { path: p.clone(), node: v };
                let id = labels.len();
                labels.push(rep.display(self));
                ids.insert(rep, id);
                size += 1;
                if size > cap {
                    return Err(Error::CapExceeded(format!(
                        "val size exceeds cap {cap} (at least {size})"
                    )));
                }
            }
            for i in (1..=prod.refs.len() as u32).rev() {
                stack.push(p.child(i));
            }
        }
        // second pass: tuples, endpoints normalized to proper representations
        let mut stack = vec![DagPath::empty(a)];
        while let Some(p) = stack.pop() {
            let b = p.end(self);
            let prod = &self.nts[b];
            for (r, ts) in prod.tuples.iter().enumerate() {
                for t in ts {
                    let mapped: Vec<usize> = t
                        .iter()
                        .map(|&v| {
                            let rep = self.normalize(&p, v);
                            ids[&rep]
                        })
                        .collect();
                    if tuples[r].insert(mapped) {
                        size += self.sig.arity(r);
                        if size > cap {
                            return Err(Error::CapExceeded(format!(
                                "val size exceeds cap {cap} (at least {size})"
                            )));
                        }
                    }
                }
            }
            for i in (1..=prod.refs.len() as u32).rev() {
                stack.push(p.child(i));
            }
        }
        let mut s = Structure::new(self.sig.clone(), labels.len());
        s.labels = labels;
        for (r, set) in tuples.into_iter().enumerate() {
            let mut ts: Vec<Vec<usize>> = set.into_iter().collect();
            ts.sort();
            s.tuples[r] = ts;
        }
        Ok((s, ids))
    }

    pub fn nt_by_name(&self, name: &str) -> Option<usize> {
        self.nts.iter().position(|p| p.name == name)
    }
}

/// Binary-signature encoding of an SLP whose productions contain tuples of
/// arity > 2: applied per production (one fresh internal node per tuple,
/// linked by position relations). Identity when max arity <= 2.
pub fn reduce_arity_slp(slp: &Slp) -> (Slp, crate::structure::ArityReduction) {
    use crate::structure::ArityReduction;
    if slp.sig.max_arity() <= 2 {
        let red = ArityReduction {
            universe_rel: String::new(),
            rel_markers: Vec::new(),
            pos_rels: Vec::new(),
            orig_sig: slp.sig.clone(),
            applied: false,
        };
        return (slp.clone(), red);
    }
    let max_arity = slp.sig.max_arity();
    let fresh = |base: &str| -> String {
        let mut name = base.to_string();
        while slp.sig.rel(&name).is_some() {
            name.push('_');
        }
        name
    };
    let universe_rel = fresh("u");
    let pos_rels: Vec<String> = (1..=max_arity).map(|j| fresh(&format!("e{j}"))).collect();
    let rel_markers: Vec<String> =
        slp.sig.rels.iter().map(|(name, _)| fresh(&format!("m_{name}"))).collect();
    let mut rels: Vec<(String, usize)> = vec![(universe_rel.clone(), 1)];
    rels.extend(rel_markers.iter().map(|n| (n.clone(), 1)));
    rels.extend(pos_rels.iter().map(|n| (n.clone(), 2)));
    let sig = Arc::new(Signature::new(rels));
    let marker_base = 1;
    let pos_base = 1 + slp.sig.rels.len();
    let nts = slp
        .nts
        .iter()
        .map(|p| {
            let mut n_local = p.n_local;
            let mut local_labels = p.local_labels.clone();
            let mut tuples: Vec<Vec<Vec<usize>>> = vec![Vec::new(); sig.rels.len()];
            for v in p.internals() {
                tuples[0].push(vec![v]);
            }
            for (r, ts) in p.tuples.iter().enumerate() {
                for t in ts {
                    let b = n_local;
                    n_local += 1;
                    local_labels.push(format!("t{}_{}", slp.sig.rels[r].0, b - p.n_local));
                    tuples[marker_base + r].push(vec![b]);
                    for (j, &a) in t.iter().enumerate() {
                        tuples[pos_base + j].push(vec![b, a]);
                    }
                }
            }
            Production {
                name: p.name.clone(),
                rank: p.rank,
                n_local,
                contacts: p.contacts.clone(),
                local_labels,
                tuples,
                refs: p.refs.clone(),
            }
        })
        .collect();
    let out = Slp { sig, nts, initial: slp.initial };
    let red = ArityReduction {
        universe_rel,
        rel_markers,
        pos_rels,
        orig_sig: slp.sig.clone(),
        applied: true,
    };
    (out, red)
}

// ---- text format -----------------------------------------------------------

/// Parse the SLP text format; reference order is line order, local node ids
/// follow contact/node line order within each nonterminal.
pub fn parse_slp(text: &str) -> Result<Slp> {
    struct RawProd {
        name: String,
        rank: usize,
        contacts: Vec<(usize, String)>,
        nodes: Vec<String>,
        tuples: Vec<(usize, String, Vec<String>)>,
        refs: Vec<(usize, String, Vec<(usize, String)>)>,
    }
    let mut sig: Option<Arc<Signature>> = None;
    let mut initial: Option<(usize, String)> = None;
    let mut prods: Vec<RawProd> = Vec::new();
    let mut by_name: HashMap<String, usize> = HashMap::new();
    for (lno, raw) in text.lines().enumerate() {
        let line = lno + 1;
        let lstr = raw.split('#').next().unwrap_or("").trim();
        if lstr.is_empty() {
            continue;
        }
        let mut parts = lstr.split_whitespace();
        let head = parts.next().unwrap();
        let mut next_tok = |what: &str| -> Result<String> {
            parts
                .next()
                .map(|s| s.to_string())
                .ok_or_else(|| Error::parse(line, format!("missing {what}")))
        };
        match head {
            "signature" => {
                if sig.is_some() {
                    return Err(Error::parse(line, "duplicate signature line"));
                }
                let rest: Vec<String> = lstr.split_whitespace().skip(1).map(String::from).collect();
                let mut rels = Vec::new();
                for spec in rest {
                    let (name, ar) = spec
                        .rsplit_once('/')
                        .ok_or_else(|| Error::parse(line, format!("bad relation spec `{spec}`")))?;
                    let ar: usize = ar
                        .parse()
                        .map_err(|_| Error::parse(line, format!("bad arity in `{spec}`")))?;
                    rels.push((name.to_string(), ar));
                }
                sig = Some(Arc::new(Signature::new(rels)));
            }
            "initial" => {
                let name = next_tok("initial name")?;
                if initial.is_some() {
                    return Err(Error::parse(line, "duplicate initial line"));
                }
                initial = Some((line, name));
            }
            "nonterminal" => {
                let name = next_tok("nonterminal name")?;
                let kw = next_tok("`rank`")?;
                if kw != "rank" {
                    return Err(Error::parse(line, "expected `rank`"));
                }
                let rank: usize = next_tok("rank value")?
                    .parse()
                    .map_err(|_| Error::parse(line, "bad rank"))?;
                if by_name.contains_key(&name) {
                    return Err(Error::parse(line, format!("duplicate nonterminal `{name}`")));
                }
                by_name.insert(name.clone(), prods.len());
                prods.push(RawProd {
                    name,
                    rank,
                    contacts: Vec::new(),
                    nodes: Vec::new(),
                    tuples: Vec::new(),
                    refs: Vec::new(),
                });
            }
            "contact" | "node" | "tuple" | "ref" => {
                let nt = next_tok("nonterminal name")?;
                let idx = *by_name
                    .get(&nt)
                    .ok_or_else(|| Error::parse(line, format!("unknown nonterminal `{nt}`")))?;
                let p = &mut prods[idx];
                match head {
                    "contact" => {
                        let i: usize = next_tok("contact index")?
                            .parse()
                            .map_err(|_| Error::parse(line, "bad contact index"))?;
                        let label = next_tok("contact label")?;
                        p.contacts.push((i, label.clone()));
                        p.nodes.push(label);
                    }
                    "node" => {
                        let label = next_tok("node label")?;
                        p.nodes.push(label);
                    }
                    "tuple" => {
                        let rel = next_tok("relation name")?;
                        let args: Vec<String> = parts.map(String::from).collect();
                        p.tuples.push((line, rel, args));
                    }
                    "ref" => {
                        let target = next_tok("referenced nonterminal")?;
                        let mut binds = Vec::new();
                        for spec in parts {
                            let (i, label) = spec.split_once('=').ok_or_else(|| {
                                Error::parse(line, format!("bad binding `{spec}`, want i=label"))
                            })?;
                            let i: usize = i
                                .parse()
                                .map_err(|_| Error::parse(line, format!("bad contact index in `{spec}`")))?;
                            binds.push((i, label.to_string()));
                        }
                        p.refs.push((line, target, binds));
                    }
                    _ => unreachable!(),
                }
            }
            other => return Err(Error::parse(line, format!("unknown directive `{other}`"))),
        }
    }
    let sig = sig.ok_or_else(|| Error::parse(0, "missing signature line"))?;
    let (init_line, init_name) = initial.ok_or_else(|| Error::parse(0, "missing initial line"))?;
    let initial = *by_name
        .get(&init_name)
        .ok_or_else(|| Error::parse(init_line, format!("unknown initial `{init_name}`")))?;
    let mut nts = Vec::with_capacity(prods.len());
    for raw in &prods {
        let mut local_index: HashMap<&str, usize> = HashMap::new();
        for (i, label) in raw.nodes.iter().enumerate() {
            if local_index.insert(label, i).is_some() {
                return Err(Error::Invalid(format!(
                    "`{}`: duplicate local label `{label}`",
                    raw.name
                )));
            }
        }
        let mut contacts = vec![usize::MAX; raw.rank];
        for (i, label) in &raw.contacts {
            if *i == 0 || *i > raw.rank {
                return Err(Error::Invalid(format!(
                    "`{}`: contact index {i} out of 1..={}",
                    raw.name, raw.rank
                )));
            }
            if contacts[*i - 1] != usize::MAX {
                return Err(Error::Invalid(format!("`{}`: duplicate contact {i}", raw.name)));
            }
            contacts[*i - 1] = local_index[label.as_str()];
        }
        if contacts.iter().any(|&c| c == usize::MAX) {
            return Err(Error::Invalid(format!("`{}`: missing contact", raw.name)));
        }
        let mut tuples: Vec<Vec<Vec<usize>>> = vec![Vec::new(); sig.rels.len()];
        for (line, rel, args) in &raw.tuples {
            let r = sig
                .rel(rel)
                .ok_or_else(|| Error::parse(*line, format!("unknown relation `{rel}`")))?;
            if args.len() != sig.arity(r) {
                return Err(Error::parse(*line, format!("relation `{rel}` arity mismatch")));
            }
            let t = args
                .iter()
                .map(|a| {
                    local_index
                        .get(a.as_str())
                        .copied()
                        .ok_or_else(|| Error::parse(*line, format!("unknown node `{a}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            tuples[r].push(t);
        }
        let mut refs = Vec::new();
        for (line, target, binds) in &raw.refs {
            let nt = *by_name
                .get(target)
                .ok_or_else(|| Error::parse(*line, format!("unknown nonterminal `{target}`")))?;
            let rank = prods[nt].rank;
            let mut sigma = vec![usize::MAX; rank];
            for (i, label) in binds {
                if *i == 0 || *i > rank {
                    return Err(Error::parse(*line, format!("binding index {i} out of 1..={rank}")));
                }
                if sigma[*i - 1] != usize::MAX {
                    return Err(Error::parse(*line, format!("duplicate binding for contact {i}")));
                }
                sigma[*i - 1] = *local_index
                    .get(label.as_str())
                    .ok_or_else(|| Error::parse(*line, format!("unknown node `{label}`")))?;
            }
            if sigma.iter().any(|&v| v == usize::MAX) {
                return Err(Error::parse(*line, format!("reference to `{target}` misses a contact")));
            }
            refs.push(Reference { nt, sigma });
        }
        nts.push(Production {
            name: raw.name.clone(),
            rank: raw.rank,
            n_local: raw.nodes.len(),
            contacts,
            local_labels: raw.nodes.clone(),
            tuples,
            refs,
        });
    }
    Ok(Slp { sig, nts, initial })
}

pub fn write_slp(slp: &Slp) -> String {
    let mut out = String::from("signature");
    for (name, ar) in &slp.sig.rels {
        out.push_str(&format!(" {name}/{ar}"));
    }
    out.push('\n');
    out.push_str(&format!("initial {}\n", slp.nts[slp.initial].name));
    for p in &slp.nts {
        out.push_str(&format!("nonterminal {} rank {}\n", p.name, p.rank));
        for v in 0..p.n_local {
            match p.contact_index(v) {
                Some(i) => {
                    out.push_str(&format!("contact {} {} {}\n", p.name, i + 1, p.local_labels[v]))
                }
                None => out.push_str(&format!("node {} {}\n", p.name, p.local_labels[v])),
            }
        }
        for (r, ts) in p.tuples.iter().enumerate() {
            for t in ts {
                out.push_str(&format!("tuple {} {}", p.name, slp.sig.rels[r].0));
                for &v in t {
                    out.push(' ');
                    out.push_str(&p.local_labels[v]);
                }
                out.push('\n');
            }
        }
        for rf in &p.refs {
            out.push_str(&format!("ref {} {}", p.name, slp.nts[rf.nt].name));
            for (i, &v) in rf.sigma.iter().enumerate() {
                out.push_str(&format!(" {}={}", i + 1, p.local_labels[v]));
            }
            out.push('\n');
        }
    }
    out
}

pub const DEFAULT_DECOMPRESS_CAP: usize = 1_000_000;

/// Decompression cap from the environment, defaulting to 10^6.
pub fn decompress_cap() -> usize {
    std::env::var("SLPFO_DECOMPRESS_CAP")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_DECOMPRESS_CAP)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn example6() -> Slp {
        parse_slp(include_str!("../../../fixtures/example6.slp")).unwrap()
    }

    #[test]
    fn parse_validate_example6() {
        let slp = example6();
        let rep = slp.validate();
        assert!(rep.ok(), "{:?}", rep.errors);
        assert!(rep.apex);
        assert!(slp.is_apex());
        // |D| by the formula: 4+7 for S, 10 for A, 7 for B
        assert_eq!(slp.size(), 28);
    }

    #[test]
    fn roundtrip() {
        let slp = example6();
        let slp2 = parse_slp(&write_slp(&slp)).unwrap();
        assert_eq!(write_slp(&slp), write_slp(&slp2));
    }

    #[test]
    fn decompress_example6() {
        let slp = example6();
        let (s, ids) = slp.decompress(1_000_000).unwrap();
        assert_eq!(s.n, 9);
        assert_eq!(s.tuples[0].len(), 11);
        assert_eq!(s.size(), 31);
        assert_eq!(s.max_degree(), 4);
        assert_eq!(slp.val_degree().unwrap(), 4);
        assert_eq!(ids.len(), 9);
        // val(A) and val(B) from their own roots
        let a = slp.nt_by_name("A").unwrap();
        let (sa, _) = slp.decompress_from(a, 1000).unwrap();
        assert_eq!((sa.n, sa.tuples[0].len()), (4, 4));
        let b = slp.nt_by_name("B").unwrap();
        let (sb, _) = slp.decompress_from(b, 1000).unwrap();
        assert_eq!((sb.n, sb.tuples[0].len()), (3, 2));
    }

    #[test]
    fn decompress_cap_exceeded() {
        let slp = example6();
        match slp.decompress(5) {
            Err(Error::CapExceeded(msg)) => assert!(msg.contains("9"), "{msg}"),
            other => panic!("expected cap error, got {other:?}"),
        }
    }

    #[test]
    fn embed_contact_and_internal() {
        let slp = example6();
        let s = slp.initial;
        let a = slp.nt_by_name("A").unwrap();
        let b = slp.nt_by_name("B").unwrap();
        // p = S2A, n = (A, x=contact 1) -> (S, v)
        let p = DagPath { start: s, edges: vec![2] };
        let x = slp.nts[a].contacts[0];
        let n = NodeRep { path: DagPath::empty(a), node: x };
        let e = slp.embed(&p, &n);
        assert_eq!(e.path, DagPath::empty(s));
        assert_eq!(slp.nts[s].local_labels[e.node], "v");
        // p = S2A1B, n = (B, w) -> (S2A1B, w)
        let p = DagPath { start: s, edges: vec![2, 1] };
        let w = 2; // third local of B
        let n = NodeRep { path: DagPath::empty(b), node: w };
        let e = slp.embed(&p, &n);
        assert_eq!(e.path.edges, vec![2, 1]);
        assert_eq!(e.node, w);
    }

    #[test]
    fn non_apex_detected() {
        let text = "signature r1/2\ninitial S\n\
                    nonterminal S rank 0\nnode S u\nref S A 1=u\n\
                    nonterminal A rank 1\ncontact A 1 x\nnode A y\ntuple A r1 x y\nref A B 1=x\n\
                    nonterminal B rank 1\ncontact B 1 z\nnode B t\ntuple B r1 z t\n";
        let slp = parse_slp(text).unwrap();
        let rep = slp.validate();
        assert!(rep.ok());
        assert!(!rep.apex);
        // still decompressible: S -> u, A glues x=u, B glues z=x=u
        let (s, _) = slp.decompress(100).unwrap();
        assert_eq!(s.n, 3);
        assert_eq!(s.tuples[0].len(), 2);
    }

    #[test]
    fn cyclic_rejected() {
        let text = "signature r1/2\ninitial S\n\
                    nonterminal S rank 0\nnode S u\nref S A 1=u\n\
                    nonterminal A rank 1\ncontact A 1 x\nnode A y\nref A A 1=y\n";
        let slp = parse_slp(text).unwrap();
        let rep = slp.validate();
        assert!(!rep.ok());
        assert!(!rep.acyclic);
    }
}
