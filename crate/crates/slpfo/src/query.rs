//! Query language: Boolean combinations of local formulas and scattered
//! (basic-local) sentences, in s-expression syntax.
//!
//! ```text
//! (local :r 1 :vars (x y) (and (r1 x y) (not (= x y))))
//! (scattered :q 2 :r 1 (r1 z z))
//! (and <query> <query> ...), (or ...), (not <query>)
//! (fo <formula>)                 ; oracle-only escape hatch
//! ```
//!
//! Formulas: `(exists v f)`, `(forall v f)`, `(and f...)`, `(or f...)`,
//! `(not f)`, `(= x y)`, `(<rel> x...)`, `true`, `false`. Distance guards
//! `(dist<= x y r)` are produced by relativization and evaluated by BFS,
//! never expanded into first-order logic.
//!
//! Variable indices in each leaf formula: free variables first (0..k-1 in
//! `:vars` order), bound variables above them.

use crate::structure::{sphere, Signature, Structure};
use crate::{Error, Result};
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Formula {
    True,
    False,
    Eq(usize, usize),
    Rel(usize, Vec<usize>),
    /// distance at most `r` in the Gaifman graph
    DistLeq(usize, usize, u32),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Exists(usize, Box<Formula>),
    Forall(usize, Box<Formula>),
}

impl Formula {
    pub fn quantifier_rank(&self) -> u32 {
        match self {
            Formula::True | Formula::False | Formula::Eq(..) | Formula::Rel(..) | Formula::DistLeq(..) => 0,
            Formula::Not(f) => f.quantifier_rank(),
            Formula::And(fs) | Formula::Or(fs) => {
                fs.iter().map(|f| f.quantifier_rank()).max().unwrap_or(0)
            }
            Formula::Exists(_, f) | Formula::Forall(_, f) => 1 + f.quantifier_rank(),
        }
    }

    pub fn max_var(&self) -> Option<usize> {
        match self {
            Formula::True | Formula::False => None,
            Formula::Eq(a, b) => Some(*a.max(b)),
            Formula::DistLeq(a, b, _) => Some(*a.max(b)),
            Formula::Rel(_, vs) => vs.iter().copied().max(),
            Formula::Not(f) => f.max_var(),
            Formula::And(fs) | Formula::Or(fs) => fs.iter().filter_map(|f| f.max_var()).max(),
            Formula::Exists(v, f) | Formula::Forall(v, f) => {
                Some(f.max_var().map_or(*v, |m| m.max(*v)))
            }
        }
    }

    /// Substitute free variables (indices below `old_k`) via `map`; bound
    /// variables are shifted onto `new_k...`.
    pub fn remap_free(&self, map: &[usize], old_k: usize, new_k: usize) -> Formula {
        let rv = |v: usize| if v < old_k { map[v] } else { v - old_k + new_k };
        match self {
            Formula::True => Formula::True,
            Formula::False => Formula::False,
            Formula::Eq(a, b) => Formula::Eq(rv(*a), rv(*b)),
            Formula::DistLeq(a, b, r) => Formula::DistLeq(rv(*a), rv(*b), *r),
            Formula::Rel(r, vs) => Formula::Rel(*r, vs.iter().map(|&v| rv(v)).collect()),
            Formula::Not(f) => Formula::Not(Box::new(f.remap_free(map, old_k, new_k))),
            Formula::And(fs) => {
                Formula::And(fs.iter().map(|f| f.remap_free(map, old_k, new_k)).collect())
            }
            Formula::Or(fs) => {
                Formula::Or(fs.iter().map(|f| f.remap_free(map, old_k, new_k)).collect())
            }
            Formula::Exists(v, f) => {
                Formula::Exists(rv(*v), Box::new(f.remap_free(map, old_k, new_k)))
            }
            Formula::Forall(v, f) => {
                Formula::Forall(rv(*v), Box::new(f.remap_free(map, old_k, new_k)))
            }
        }
    }
}

/// Locality radius of the type-based evaluation: `2rk - r + k - 1`.
pub fn rho(r: u32, k: usize) -> u32 {
    let k = k as u32;
    2 * r * k - r + k - 1
}

/// Guard every quantifier by distance at most `r` to one of the centers.
pub fn relativize(f: &Formula, centers: &[usize], r: u32) -> Formula {
    let guard = |v: usize| -> Formula {
        let alts: Vec<Formula> = centers.iter().map(|&c| Formula::DistLeq(c, v, r)).collect();
        match alts.len() {
            1 => alts.into_iter().next().unwrap(),
            _ => Formula::Or(alts),
        }
    };
    match f {
        Formula::Not(g) => Formula::Not(Box::new(relativize(g, centers, r))),
        Formula::And(fs) => Formula::And(fs.iter().map(|g| relativize(g, centers, r)).collect()),
        Formula::Or(fs) => Formula::Or(fs.iter().map(|g| relativize(g, centers, r)).collect()),
        Formula::Exists(v, g) => Formula::Exists(
            *v,
            Box::new(Formula::And(vec![guard(*v), relativize(g, centers, r)])),
        ),
        Formula::Forall(v, g) => Formula::Forall(
            *v,
            Box::new(Formula::Or(vec![
                Formula::Not(Box::new(guard(*v))),
                relativize(g, centers, r),
            ])),
        ),
        atom => atom.clone(),
    }
}

#[derive(Debug, Clone)]
pub struct LocalQ {
    pub r: u32,
    pub k: usize,
    pub phi: Formula,
    pub var_names: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ScatteredQ {
    pub q: usize,
    pub r: u32,
    pub theta: Formula,
}

#[derive(Debug, Clone)]
pub enum Query {
    Local(LocalQ),
    Scattered(ScatteredQ),
    Fo { k: usize, phi: Formula, var_names: Vec<String> },
    And(Vec<Query>),
    Or(Vec<Query>),
    Not(Box<Query>),
}

impl Query {
    /// Number of free variables; consistent across local/fo leaves.
    pub fn free_k(&self) -> Result<usize> {
        let mut k: Option<usize> = None;
        self.walk_leaves(&mut |q| {
            let leaf_k = match q {
                Query::Local(l) => Some(l.k),
                Query::Fo { k, .. } => Some(*k),
                _ => None,
            };
            if let Some(lk) = leaf_k {
                match k {
                    None => k = Some(lk),
                    Some(prev) if prev != lk => {
                        return Err(Error::Invalid(format!(
                            "free variable count differs across leaves: {prev} vs {lk}"
                        )))
                    }
                    _ => {}
                }
            }
            Ok(())
        })?;
        Ok(k.unwrap_or(0))
    }

    pub fn max_local_radius(&self) -> Option<u32> {
        let mut r = None;
        let _ = self.walk_leaves(&mut |q| {
            if let Query::Local(l) = q {
                r = Some(r.map_or(l.r, |m: u32| m.max(l.r)));
            }
            Ok(())
        });
        r
    }

    pub fn has_fo_leaf(&self) -> bool {
        let mut found = false;
        let _ = self.walk_leaves(&mut |q| {
            if matches!(q, Query::Fo { .. }) {
                found = true;
            }
            Ok(())
        });
        found
    }

    fn walk_leaves(&self, f: &mut impl FnMut(&Query) -> Result<()>) -> Result<()> {
        match self {
            Query::And(qs) | Query::Or(qs) => {
                for q in qs {
                    q.walk_leaves(f)?;
                }
                Ok(())
            }
            Query::Not(q) => q.walk_leaves(f),
            leaf => f(leaf),
        }
    }

    /// Identify free variables according to `map` (class per position);
    /// `new_k` is the number of classes.
    pub fn remap_free(&self, map: &[usize], new_k: usize) -> Query {
        match self {
            Query::Local(l) => Query::Local(LocalQ {
                r: l.r,
                k: new_k,
                phi: l.phi.remap_free(map, l.k, new_k),
                var_names: (0..new_k)
                    .map(|c| l.var_names[map.iter().position(|&m| m == c).unwrap()].clone())
                    .collect(),
            }),
            Query::Fo { k, phi, var_names } => Query::Fo {
                k: new_k,
                phi: phi.remap_free(map, *k, new_k),
                var_names: (0..new_k)
                    .map(|c| var_names[map.iter().position(|&m| m == c).unwrap()].clone())
                    .collect(),
            },
            Query::Scattered(s) => Query::Scattered(s.clone()),
            Query::And(qs) => Query::And(qs.iter().map(|q| q.remap_free(map, new_k)).collect()),
            Query::Or(qs) => Query::Or(qs.iter().map(|q| q.remap_free(map, new_k)).collect()),
            Query::Not(q) => Query::Not(Box::new(q.remap_free(map, new_k))),
        }
    }
}

// ---- duplicate handling ------------------------------------------------------

/// One evaluation plan per equivalence relation on the free positions:
/// `assign[i]` is the class of position `i` (classes numbered by first
/// occurrence). The remapped query runs over pairwise-distinct tuples of the
/// class representatives; `inflate` maps its answers back. Plans partition
/// the answer set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DedupPlan {
    pub assign: Vec<usize>,
    pub classes: usize,
}

impl DedupPlan {
    pub fn inflate<T: Clone>(&self, t: &[T]) -> Vec<T> {
        self.assign.iter().map(|&c| t[c].clone()).collect()
    }
}

/// All set partitions of `[k]` as restricted growth strings.
pub fn dedup_plans(k: usize) -> Vec<DedupPlan> {
    let mut out = Vec::new();
    let mut assign = vec![0usize; k];
    fn rec(i: usize, maxc: usize, assign: &mut Vec<usize>, out: &mut Vec<DedupPlan>) {
        if i == assign.len() {
            out.push(DedupPlan { assign: assign.clone(), classes: maxc });
            return;
        }
        for c in 0..=maxc {
            assign[i] = c;
            rec(i + 1, maxc.max(c + 1), assign, out);
        }
    }
    if k == 0 {
        return vec![DedupPlan { assign, classes: 0 }];
    }
    rec(0, 0, &mut assign, &mut out);
    out
}

// ---- evaluation ---------------------------------------------------------------

/// Evaluate a formula over a structure; quantifiers range over `domain`
/// (all nodes when None). Distance atoms are answered by bounded BFS.
pub fn eval_formula(
    s: &Structure,
    adj: &[Vec<usize>],
    f: &Formula,
    env: &mut Vec<Option<usize>>,
    domain: Option<&[usize]>,
) -> bool {
    match f {
        Formula::True => true,
        Formula::False => false,
        Formula::Eq(a, b) => env[*a] == env[*b],
        Formula::DistLeq(a, b, r) => {
            let (x, y) = (env[*a].unwrap(), env[*b].unwrap());
            // relativized semantics: distance in the substructure induced by
            // the domain, matching evaluation on a pointed neighborhood
            match domain {
                None => dist_leq_bfs(adj, x, y, *r),
                Some(d) => {
                    let allowed: std::collections::HashSet<usize> = d.iter().copied().collect();
                    dist_leq_bfs_within(adj, &allowed, x, y, *r)
                }
            }
        }
        Formula::Rel(r, vs) => {
            let t: Vec<usize> = vs.iter().map(|&v| env[v].unwrap()).collect();
            s.tuples[*r].contains(&t)
        }
        Formula::Not(g) => !eval_formula(s, adj, g, env, domain),
        Formula::And(fs) => fs.iter().all(|g| eval_formula(s, adj, g, env, domain)),
        Formula::Or(fs) => fs.iter().any(|g| eval_formula(s, adj, g, env, domain)),
        Formula::Exists(v, g) => {
            let n = s.n;
            if env.len() <= *v {
                env.resize(*v + 1, None);
            }
            let candidates: Vec<usize> = match domain {
                Some(d) => d.to_vec(),
                None => (0..n).collect(),
            };
            for a in candidates {
                env[*v] = Some(a);
                if eval_formula(s, adj, g, env, domain) {
                    env[*v] = None;
                    return true;
                }
            }
            env[*v] = None;
            false
        }
        Formula::Forall(v, g) => !eval_formula(
            s,
            adj,
            &Formula::Exists(*v, Box::new(Formula::Not(Box::new((**g).clone())))),
            env,
            domain,
        ),
    }
}

/// `dist_leq_bfs` restricted to a node set: paths may only pass through
/// `allowed` nodes.
pub fn dist_leq_bfs_within(
    adj: &[Vec<usize>],
    allowed: &std::collections::HashSet<usize>,
    x: usize,
    y: usize,
    r: u32,
) -> bool {
    if x == y {
        return true;
    }
    if !allowed.contains(&x) || !allowed.contains(&y) {
        return false;
    }
    let mut dist = vec![u32::MAX; adj.len()];
    dist[x] = 0;
    let mut queue = std::collections::VecDeque::from([x]);
    while let Some(v) = queue.pop_front() {
        if dist[v] == r {
            continue;
        }
        for &w in &adj[v] {
            if dist[w] == u32::MAX && allowed.contains(&w) {
                if w == y {
                    return true;
                }
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    false
}

pub fn dist_leq_bfs(adj: &[Vec<usize>], x: usize, y: usize, r: u32) -> bool {
    if x == y {
        return true;
    }
    let mut dist = vec![u32::MAX; adj.len()];
    dist[x] = 0;
    let mut queue = std::collections::VecDeque::from([x]);
    while let Some(v) = queue.pop_front() {
        if dist[v] == r {
            continue;
        }
        for &w in &adj[v] {
            if dist[w] == u32::MAX {
                if w == y {
                    return true;
                }
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    false
}

/// Truth of a local formula on a pointed structure: quantifiers range over
/// the radius-`r` sphere of the centers (the relativized semantics), with
/// distances taken inside the pointed structure.
pub fn eval_local_on_pointed(p: &crate::structure::Pointed, phi: &Formula, r: u32) -> bool {
    let adj = p.s.gaifman();
    let centers: Vec<usize> = p.centers.iter().map(|c| c.expect("full center tuple")).collect();
    let domain = sphere(&adj, &centers, r);
    let mut env: Vec<Option<usize>> = centers.iter().map(|&c| Some(c)).collect();
    eval_formula(&p.s, &adj, phi, &mut env, Some(&domain))
}

/// Expand a scattered sentence into plain first-order shape over fresh
/// variables: q witnesses, pairwise farther than 2r apart, each satisfying
/// the r-relativized body. For oracle evaluation only.
pub fn expand_scattered(sq: &ScatteredQ) -> Formula {
    let base = sq.theta.max_var().map_or(1, |m| m + 1);
    let mut parts = Vec::new();
    for i in 0..sq.q {
        let zi = base + i;
        for j in 0..i {
            let zj = base + j;
            parts.push(Formula::Not(Box::new(Formula::DistLeq(zi, zj, 2 * sq.r))));
        }
        // theta with its free variable replaced by z_i, relativized around z_i
        let sub = sq.theta.remap_free(&[zi], 1, base + sq.q);
        parts.push(relativize(&sub, &[zi], sq.r));
    }
    let mut f = Formula::And(parts);
    for i in (0..sq.q).rev() {
        f = Formula::Exists(base + i, Box::new(f));
    }
    f
}

// ---- arity-reduction formula rewrite -------------------------------------------

/// Rewrite a formula over the original signature to the binary encoding:
/// atoms become witness-node patterns, quantifiers are relativized to the
/// universe marker. Quantifier rank grows by one.
pub fn rewrite_reduced(
    f: &Formula,
    red: &crate::structure::ArityReduction,
    new_sig: &Signature,
) -> Result<Formula> {
    if !red.applied {
        return Ok(f.clone());
    }
    let universe = new_sig
        .rel(&red.universe_rel)
        .ok_or_else(|| Error::Invalid("missing universe marker".into()))?;
    let markers: Vec<usize> = red
        .rel_markers
        .iter()
        .map(|n| new_sig.rel(n).ok_or_else(|| Error::Invalid("missing relation marker".into())))
        .collect::<Result<_>>()?;
    let pos: Vec<usize> = red
        .pos_rels
        .iter()
        .map(|n| new_sig.rel(n).ok_or_else(|| Error::Invalid("missing position relation".into())))
        .collect::<Result<_>>()?;
    let fresh = f.max_var().map_or(0, |m| m + 1);
    fn go(
        f: &Formula,
        universe: usize,
        markers: &[usize],
        pos: &[usize],
        fresh: usize,
    ) -> Formula {
        match f {
            Formula::Rel(r, vs) => {
                let b = fresh;
                let mut parts = vec![Formula::Rel(markers[*r], vec![b])];
                for (j, &v) in vs.iter().enumerate() {
                    parts.push(Formula::Rel(pos[j], vec![b, v]));
                }
                Formula::Exists(b, Box::new(Formula::And(parts)))
            }
            Formula::Exists(v, g) => Formula::Exists(
                *v,
                Box::new(Formula::And(vec![
                    Formula::Rel(universe, vec![*v]),
                    go(g, universe, markers, pos, fresh),
                ])),
            ),
            Formula::Forall(v, g) => Formula::Forall(
                *v,
                Box::new(Formula::Or(vec![
                    Formula::Not(Box::new(Formula::Rel(universe, vec![*v]))),
                    go(g, universe, markers, pos, fresh),
                ])),
            ),
            Formula::Not(g) => Formula::Not(Box::new(go(g, universe, markers, pos, fresh))),
            Formula::And(fs) => {
                Formula::And(fs.iter().map(|g| go(g, universe, markers, pos, fresh)).collect())
            }
            Formula::Or(fs) => {
                Formula::Or(fs.iter().map(|g| go(g, universe, markers, pos, fresh)).collect())
            }
            atom => atom.clone(),
        }
    }
    Ok(go(f, universe, &markers, &pos, fresh))
}

// ---- parser --------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn tokenize(text: &str) -> Result<Vec<String>> {
    let mut toks = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        match ch {
            '(' | ')' => {
                if !cur.is_empty() {
                    toks.push(std::mem::take(&mut cur));
                }
                toks.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    toks.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        toks.push(cur);
    }
    Ok(toks)
}

fn parse_sexp(toks: &[String], at: &mut usize) -> Result<Sexp> {
    if *at >= toks.len() {
        return Err(Error::parse(0, "unexpected end of query"));
    }
    let t = &toks[*at];
    *at += 1;
    match t.as_str() {
        "(" => {
            let mut items = Vec::new();
            loop {
                if *at >= toks.len() {
                    return Err(Error::parse(0, "unbalanced parentheses"));
                }
                if toks[*at] == ")" {
                    *at += 1;
                    return Ok(Sexp::List(items));
                }
                items.push(parse_sexp(toks, at)?);
            }
        }
        ")" => Err(Error::parse(0, "unexpected `)`")),
        _ => Ok(Sexp::Atom(t.clone())),
    }
}

struct FormulaParser<'a> {
    sig: &'a Signature,
    /// free variables in declaration order; true = new free vars allowed
    free: Vec<String>,
    allow_new_free: bool,
    next_bound: usize,
}

impl<'a> FormulaParser<'a> {
    fn var(&mut self, name: &str, bound: &HashMap<String, usize>) -> Result<usize> {
        if let Some(&v) = bound.get(name) {
            return Ok(v);
        }
        if let Some(i) = self.free.iter().position(|f| f == name) {
            return Ok(i);
        }
        if self.allow_new_free {
            self.free.push(name.to_string());
            return Ok(self.free.len() - 1);
        }
        Err(Error::Invalid(format!("unbound variable `{name}`")))
    }

    fn parse(&mut self, e: &Sexp, bound: &HashMap<String, usize>) -> Result<Formula> {
        match e {
            Sexp::Atom(a) => match a.as_str() {
                "true" => Ok(Formula::True),
                "false" => Ok(Formula::False),
                other => Err(Error::Invalid(format!("bare atom `{other}` is not a formula"))),
            },
            Sexp::List(items) => {
                let head = match items.first() {
                    Some(Sexp::Atom(h)) => h.as_str(),
                    _ => return Err(Error::Invalid("empty formula".into())),
                };
                match head {
                    "and" | "or" => {
                        let fs = items[1..]
                            .iter()
                            .map(|e| self.parse(e, bound))
                            .collect::<Result<Vec<_>>>()?;
                        Ok(if head == "and" { Formula::And(fs) } else { Formula::Or(fs) })
                    }
                    "not" => {
                        if items.len() != 2 {
                            return Err(Error::Invalid("`not` takes one argument".into()));
                        }
                        Ok(Formula::Not(Box::new(self.parse(&items[1], bound)?)))
                    }
                    "exists" | "forall" => {
                        if items.len() != 3 {
                            return Err(Error::Invalid(format!("`{head}` takes a variable and a body")));
                        }
                        let name = match &items[1] {
                            Sexp::Atom(n) => n.clone(),
                            _ => return Err(Error::Invalid(format!("`{head}` needs a variable name"))),
                        };
                        let v = self.next_bound;
                        self.next_bound += 1;
                        let mut inner = bound.clone();
                        inner.insert(name, v);
                        let body = self.parse(&items[2], &inner)?;
                        Ok(if head == "exists" {
                            Formula::Exists(v, Box::new(body))
                        } else {
                            Formula::Forall(v, Box::new(body))
                        })
                    }
                    "=" => {
                        if items.len() != 3 {
                            return Err(Error::Invalid("`=` takes two variables".into()));
                        }
                        let a = self.atom_var(&items[1], bound)?;
                        let b = self.atom_var(&items[2], bound)?;
                        Ok(Formula::Eq(a, b))
                    }
                    "dist<=" => {
                        if items.len() != 4 {
                            return Err(Error::Invalid("`dist<=` takes two variables and a radius".into()));
                        }
                        let a = self.atom_var(&items[1], bound)?;
                        let b = self.atom_var(&items[2], bound)?;
                        let r = match &items[3] {
                            Sexp::Atom(n) => n
                                .parse()
                                .map_err(|_| Error::Invalid("bad radius in `dist<=`".into()))?,
                            _ => return Err(Error::Invalid("bad radius in `dist<=`".into())),
                        };
                        Ok(Formula::DistLeq(a, b, r))
                    }
                    rel => {
                        let r = self
                            .sig
                            .rel(rel)
                            .ok_or_else(|| Error::Invalid(format!("unknown relation `{rel}`")))?;
                        let vs = items[1..]
                            .iter()
                            .map(|e| self.atom_var(e, bound))
                            .collect::<Result<Vec<_>>>()?;
                        if vs.len() != self.sig.arity(r) {
                            return Err(Error::Invalid(format!(
                                "relation `{rel}` has arity {}, got {} arguments",
                                self.sig.arity(r),
                                vs.len()
                            )));
                        }
                        Ok(Formula::Rel(r, vs))
                    }
                }
            }
        }
    }

    fn atom_var(&mut self, e: &Sexp, bound: &HashMap<String, usize>) -> Result<usize> {
        match e {
            Sexp::Atom(n) => self.var(n, bound),
            _ => Err(Error::Invalid("expected a variable".into())),
        }
    }
}

fn keyword_args(items: &[Sexp]) -> Result<(HashMap<String, Sexp>, Vec<Sexp>)> {
    let mut kw = HashMap::new();
    let mut rest = Vec::new();
    let mut i = 0;
    while i < items.len() {
        if let Sexp::Atom(a) = &items[i] {
            if let Some(name) = a.strip_prefix(':') {
                if i + 1 >= items.len() {
                    return Err(Error::Invalid(format!("keyword :{name} misses a value")));
                }
                kw.insert(name.to_string(), items[i + 1].clone());
                i += 2;
                continue;
            }
        }
        rest.push(items[i].clone());
        i += 1;
    }
    Ok((kw, rest))
}

fn kw_usize(kw: &HashMap<String, Sexp>, name: &str) -> Result<usize> {
    match kw.get(name) {
        Some(Sexp::Atom(a)) => a
            .parse()
            .map_err(|_| Error::Invalid(format!("bad value for :{name}"))),
        _ => Err(Error::Invalid(format!("missing :{name}"))),
    }
}

pub fn parse_query(sig: &Signature, text: &str) -> Result<Query> {
    let toks = tokenize(text)?;
    let mut at = 0;
    let e = parse_sexp(&toks, &mut at)?;
    if at != toks.len() {
        return Err(Error::Invalid("trailing tokens after query".into()));
    }
    let q = parse_query_sexp(sig, &e)?;
    q.free_k()?; // consistency check
    Ok(q)
}

fn parse_query_sexp(sig: &Signature, e: &Sexp) -> Result<Query> {
    let items = match e {
        Sexp::List(items) if !items.is_empty() => items,
        _ => return Err(Error::Invalid("query must be a non-empty list".into())),
    };
    let head = match &items[0] {
        Sexp::Atom(h) => h.as_str(),
        _ => return Err(Error::Invalid("query head must be a symbol".into())),
    };
    match head {
        "local" => {
            let (kw, rest) = keyword_args(&items[1..])?;
            let r = kw_usize(&kw, "r")? as u32;
            let vars = match kw.get("vars") {
                Some(Sexp::List(vs)) => vs
                    .iter()
                    .map(|v| match v {
                        Sexp::Atom(n) => Ok(n.clone()),
                        _ => Err(Error::Invalid("bad :vars entry".into())),
                    })
                    .collect::<Result<Vec<_>>>()?,
                _ => return Err(Error::Invalid("missing :vars".into())),
            };
            if vars.is_empty() {
                return Err(Error::Invalid("`local` needs at least one variable".into()));
            }
            if rest.len() != 1 {
                return Err(Error::Invalid("`local` takes exactly one formula".into()));
            }
            let k = vars.len();
            let mut fp = FormulaParser { sig, free: vars, allow_new_free: false, next_bound: k };
            let phi = fp.parse(&rest[0], &HashMap::new())?;
            Ok(Query::Local(LocalQ { r, k, phi, var_names: fp.free }))
        }
        "scattered" => {
            let (kw, rest) = keyword_args(&items[1..])?;
            let q = kw_usize(&kw, "q")?;
            let r = kw_usize(&kw, "r")? as u32;
            if rest.len() != 1 {
                return Err(Error::Invalid("`scattered` takes exactly one formula".into()));
            }
            let mut fp =
                FormulaParser { sig, free: Vec::new(), allow_new_free: true, next_bound: 1 };
            let theta = fp.parse(&rest[0], &HashMap::new())?;
            if fp.free.len() != 1 {
                return Err(Error::Invalid(format!(
                    "`scattered` body must have exactly one free variable, found {}",
                    fp.free.len()
                )));
            }
            if q == 0 {
                return Err(Error::Invalid("`scattered` needs :q >= 1".into()));
            }
            Ok(Query::Scattered(ScatteredQ { q, r, theta }))
        }
        "fo" => {
            if items.len() != 2 {
                return Err(Error::Invalid("`fo` takes exactly one formula".into()));
            }
            let mut fp =
                FormulaParser { sig, free: Vec::new(), allow_new_free: true, next_bound: 0 };
            // bound variables are allocated above all free variables: parse
            // once to discover the free count, then reparse with the offset
            let probe = fp.parse(&items[1], &HashMap::new())?;
            let k = fp.free.len();
            let _ = probe;
            let mut fp2 = FormulaParser {
                sig,
                free: fp.free.clone(),
                allow_new_free: false,
                next_bound: k,
            };
            let phi = fp2.parse(&items[1], &HashMap::new())?;
            Ok(Query::Fo { k, phi, var_names: fp2.free })
        }
        "and" | "or" => {
            let qs = items[1..]
                .iter()
                .map(|e| parse_query_sexp(sig, e))
                .collect::<Result<Vec<_>>>()?;
            if qs.is_empty() {
                return Err(Error::Invalid(format!("`{head}` needs at least one query")));
            }
            Ok(if head == "and" { Query::And(qs) } else { Query::Or(qs) })
        }
        "not" => {
            if items.len() != 2 {
                return Err(Error::Invalid("`not` takes one query".into()));
            }
            Ok(Query::Not(Box::new(parse_query_sexp(sig, &items[1])?)))
        }
        _ => Err(Error::Invalid(format!(
            "unknown query form `{head}` (expected local/scattered/fo/and/or/not)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn sig() -> Signature {
        Signature::new(vec![("r1".into(), 2), ("c".into(), 1)])
    }

    #[test]
    fn rho_values() {
        assert_eq!(rho(1, 1), 1);
        assert_eq!(rho(1, 2), 4);
        assert_eq!(rho(2, 3), 12);
    }

    #[test]
    fn bell_numbers() {
        assert_eq!(dedup_plans(1).len(), 1);
        assert_eq!(dedup_plans(2).len(), 2);
        assert_eq!(dedup_plans(3).len(), 5);
        assert_eq!(dedup_plans(4).len(), 15);
    }

    #[test]
    fn parse_and_rank() {
        let s = sig();
        let q = parse_query(&s, "(local :r 1 :vars (x y) (and (r1 x y) (exists z (r1 y z))))")
            .unwrap();
        match &q {
            Query::Local(l) => {
                assert_eq!(l.k, 2);
                assert_eq!(l.r, 1);
                assert_eq!(l.phi.quantifier_rank(), 1);
            }
            _ => panic!(),
        }
        assert_eq!(q.free_k().unwrap(), 2);
        let q = parse_query(&s, "(scattered :q 2 :r 1 (r1 z z))").unwrap();
        match &q {
            Query::Scattered(sq) => {
                assert_eq!((sq.q, sq.r), (2, 1));
                let f = expand_scattered(sq);
                assert_eq!(f.quantifier_rank(), 2);
            }
            _ => panic!(),
        }
        assert!(parse_query(&s, "(local :r 1 :vars (x) (r1 x y))").is_err());
        assert!(parse_query(&s, "(and (local :r 1 :vars (x) (c x)) (local :r 1 :vars (x y) (r1 x y)))").is_err());
    }

    #[test]
    fn relativize_guards() {
        let f = Formula::Exists(1, Box::new(Formula::Rel(0, vec![0, 1])));
        let g = relativize(&f, &[0], 2);
        match g {
            Formula::Exists(_, body) => match *body {
                Formula::And(parts) => {
                    assert_eq!(parts[0], Formula::DistLeq(0, 1, 2));
                }
                _ => panic!(),
            },
            _ => panic!(),
        }
    }

    #[test]
    fn eval_on_path() {
        // path 0-1-2-3, c marks node 3
        let sg = Arc::new(sig());
        let mut s = Structure::new(sg.clone(), 4);
        for v in 0..3 {
            s.add_tuple(0, vec![v, v + 1]);
        }
        s.add_tuple(1, vec![3]);
        let adj = s.gaifman();
        // exists y within distance 1 of x with c(y): true for x=2,3 only
        let phi = Formula::Exists(1, Box::new(Formula::Rel(1, vec![1])));
        let guarded = relativize(&phi, &[0], 1);
        let sat: Vec<usize> = (0..4)
            .filter(|&x| {
                let mut env = vec![Some(x)];
                eval_formula(&s, &adj, &guarded, &mut env, None)
            })
            .collect();
        assert_eq!(sat, vec![2, 3]);
        // same via sphere-domain semantics
        let sat2: Vec<usize> = (0..4)
            .filter(|&x| {
                let p = crate::structure::neighborhood(&s, &[Some(x)], 1);
                eval_local_on_pointed(&p, &phi, 1)
            })
            .collect();
        assert_eq!(sat2, vec![2, 3]);
    }

    #[test]
    fn remap_free_identifies_variables() {
        let s = sig();
        let q = parse_query(&s, "(local :r 1 :vars (x y) (r1 x y))").unwrap();
        let q2 = q.remap_free(&[0, 0], 1);
        match q2 {
            Query::Local(l) => {
                assert_eq!(l.k, 1);
                assert_eq!(l.phi, Formula::Rel(0, vec![0, 0]));
            }
            _ => panic!(),
        }
    }
}
