//! Constant-delay enumeration over the compressed structure.
//!
//! Pipeline per query: dedup plan (equality pattern on the free variables)
//! → candidate (k,r)-type assembled from realized ρ-types → consistent
//! factorization → DFLR traversal over admissible stacks of per-component
//! node streams. Nodes are emitted as `LexRep` pairs (global path rank,
//! local node) without materializing `val(D)`.
//!
//! Admissibility (pairwise tuple distance > 2r+1) is decided on compressed
//! representations: two items can only be close if one initial path extends
//! the other by at most `3ρ−r` edges (prefix gate via shorten/restore on the
//! min-max-contracted cursors, comparing lex ranks), and in that case the
//! verdict reduces to membership of one node image in a radius-(2r+1) BFS
//! sphere inside `val(A_i)`.

use crate::dagpaths::{extend_and_weight, prune_contract, ContractedDag, MinMaxPath, OrderedDag, Steps, WeightedDag};
use crate::expansion::{realized_types, ProdIndex, TypeCatalog};
use crate::query::{dedup_plans, eval_local_on_pointed, rho, DedupPlan, Query, ScatteredQ};
use crate::slp::{DagPath, NodeRep, Slp};
use crate::structure::{canonical_type, sphere, Pointed, Structure};
use crate::{Error, Result};
use num_bigint::BigUint;
use num_traits::Zero;
use std::collections::HashMap;
use std::sync::Arc;

/// A node of `val(D)` as (lexicographic rank of its initial path, end
/// nonterminal of that path, local node).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LexRep {
    pub lex: BigUint,
    pub nt: usize,
    pub node: usize,
}

impl LexRep {
    pub fn resolve(&self, wdag: &WeightedDag) -> Option<NodeRep> {
        let path = wdag.resolve_lex(&self.lex)?;
        Some(NodeRep { path, node: self.node })
    }

    pub fn display(&self, slp: &Slp) -> String {
        format!("{}:{}", self.lex, slp.nts[self.nt].local_labels[self.node])
    }
}

pub struct EnumStats {
    pub outputs: u64,
    pub max_delay_steps: u64,
    pub enum_steps: u64,
    pub preprocessing_steps: u64,
    /// inter-output step deltas, capped at 2^20 samples
    pub delays: Vec<u64>,
    pub short_levels: u64,
    pub long_levels: u64,
}

pub struct Engine {
    pub slp: Arc<Slp>,
    pub pidx: Arc<ProdIndex>,
    pub wdag: Arc<WeightedDag>,
    /// max degree of the Gaifman graph of val(D)
    pub d: usize,
    catalogs: HashMap<u32, Arc<TypeCatalog>>,
    cdags: HashMap<(u32, usize), Arc<ContractedDag>>,
    pub preprocessing_steps: u64,
}

impl Engine {
    pub fn new(slp: Slp) -> Result<Engine> {
        let report = slp.validate();
        if !report.ok() {
            return Err(Error::Invalid(format!("invalid SLP: {}", report.errors.join("; "))));
        }
        if !report.apex {
            return Err(Error::ApexRequired(
                "enumeration requires reference images to avoid contacts".into(),
            ));
        }
        let d = slp.val_degree()?;
        let pidx = ProdIndex::build(&slp);
        let wdag = extend_and_weight(OrderedDag::from_slp(&slp))?;
        let preprocessing_steps = wdag.build_steps;
        Ok(Engine {
            slp: Arc::new(slp),
            pidx: Arc::new(pidx),
            wdag: Arc::new(wdag),
            d,
            catalogs: HashMap::new(),
            cdags: HashMap::new(),
            preprocessing_steps,
        })
    }

    pub fn catalog(&mut self, rho: u32) -> Result<Arc<TypeCatalog>> {
        if let Some(c) = self.catalogs.get(&rho) {
            return Ok(c.clone());
        }
        let cat = Arc::new(realized_types(&self.slp, &self.pidx, rho)?);
        for exp in &cat.expansions {
            self.preprocessing_steps += (exp.frag.reps.len() + exp.frag.s.size()) as u64;
        }
        self.preprocessing_steps += (cat.types.len() * cat.expansions.len()) as u64;
        self.catalogs.insert(rho, cat.clone());
        Ok(cat)
    }

    fn cdag(&mut self, rho: u32, type_idx: usize) -> Result<Arc<ContractedDag>> {
        if let Some(c) = self.cdags.get(&(rho, type_idx)) {
            return Ok(c.clone());
        }
        let cat = self.catalog(rho)?;
        let useful: Vec<bool> = cat.lists[type_idx].iter().map(|l| !l.is_empty()).collect();
        let cdag = Arc::new(prune_contract(&self.wdag, &useful));
        self.preprocessing_steps += cdag.build_steps;
        self.cdags.insert((rho, type_idx), cdag.clone());
        Ok(cdag)
    }

    /// β_i: exact number of B_i-nodes of val(D).
    pub fn count_type_nodes(&mut self, rho: u32, type_idx: usize) -> Result<BigUint> {
        let cat = self.catalog(rho)?;
        let mut beta = BigUint::zero();
        for (a, l) in cat.lists[type_idx].iter().enumerate() {
            if !l.is_empty() {
                beta += &self.wdag.p_count[a] * BigUint::from(l.len());
            }
        }
        Ok(beta)
    }

    pub fn node_stream(&mut self, rho: u32, type_idx: usize) -> Result<TypeNodeStream> {
        let cdag = self.cdag(rho, type_idx)?;
        Ok(TypeNodeStream::start(cdag, type_idx))
    }

    /// Decide a scattered sentence: ∃ q nodes, pairwise farther than 2r
    /// apart, each satisfying θ locally. Exact node counts decide the
    /// abundant case; otherwise the complete (constant-size) node list is
    /// packed exactly.
    pub fn eval_sentence(&mut self, sq: &ScatteredQ, steps: &mut Steps) -> Result<bool> {
        let r = sq.r;
        let cat = self.catalog(r)?;
        let sat: Vec<usize> = (0..cat.types.len())
            .filter(|&i| eval_local_on_pointed(&cat.types[i].canon, &sq.theta, r))
            .collect();
        if sq.q == 0 {
            return Ok(true);
        }
        let mut total = BigUint::zero();
        for &i in &sat {
            total += self.count_type_nodes(r, i)?;
        }
        let threshold =
            BigUint::from(sq.q) * BigUint::from(self.d.max(2)).pow(2 * r + 1);
        if total >= threshold {
            return Ok(true);
        }
        // complete, constant-bounded node list
        let mut items: Vec<OwnedStackItem> = Vec::new();
        for &i in &sat {
            let mut stream = self.node_stream(r, i)?;
            while let Some(item) = stream.current(&cat) {
                items.push(item);
                if !stream.advance(&cat, steps) {
                    break;
                }
            }
        }
        if (items.len() as u64) < sq.q as u64 {
            return Ok(false);
        }
        let singleton = vec![(0usize, 0usize)];
        let n = items.len();
        let mut conflict = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..i {
                let (a, b) = pair_mut(&mut items, j, i);
                let w = within_bound(
                    &self.slp, &self.pidx, &cat, a, &singleton, b, &singleton,
                    2 * r, 4 * r, steps,
                )?;
                conflict[i][j] = w;
                conflict[j][i] = w;
            }
        }
        // greedy packing is a sufficient witness; otherwise exact search
        let mut chosen: Vec<usize> = Vec::new();
        for i in 0..n {
            if chosen.iter().all(|&c| !conflict[i][c]) {
                chosen.push(i);
            }
        }
        if chosen.len() >= sq.q {
            return Ok(true);
        }
        Ok(exists_independent(&conflict, sq.q, 0, &mut Vec::new()))
    }

    /// Enumerate query answers, calling `sink` per tuple; `sink` returning
    /// false stops the run early.
    pub fn enumerate_query(
        &mut self,
        q: &Query,
        mut sink: impl FnMut(Vec<LexRep>) -> bool,
    ) -> Result<EnumStats> {
        if q.has_fo_leaf() {
            return Err(Error::Invalid(
                "`fo` leaves are oracle-only; engine queries use local/scattered leaves".into(),
            ));
        }
        let k = q.free_k()?;
        let mut steps = Steps::default();
        let mut stats = EnumStats {
            outputs: 0,
            max_delay_steps: 0,
            enum_steps: 0,
            preprocessing_steps: 0,
            delays: Vec::new(),
            short_levels: 0,
            long_levels: 0,
        };
        // sentence leaves are global: evaluate once, in leaf walk order
        let sentence_vals = self.eval_all_sentences(q, &mut steps)?;
        if k == 0 {
            if eval_on_candidate(q, None, &sentence_vals, &mut 0) {
                stats.outputs = 1;
                sink(Vec::new());
            }
            stats.enum_steps = steps.0;
            stats.preprocessing_steps = self.preprocessing_steps;
            return Ok(stats);
        }
        let r = q
            .max_local_radius()
            .ok_or_else(|| Error::Invalid("free variables require a local leaf".into()))?;
        let mut last_mark = steps.0;
        let mut stopped = false;
        for plan in dedup_plans(k) {
            if stopped {
                break;
            }
            let k2 = plan.classes;
            let q2 = q.remap_free(&plan.assign, k2);
            let p = rho(r, k2);
            let cat = self.catalog(p)?;
            let cands = candidate_types(&cat, k2, r);
            for cand in &cands {
                if stopped {
                    break;
                }
                if !eval_on_candidate(&q2, Some(&cand.pointed), &sentence_vals, &mut 0) {
                    continue;
                }
                for fact in &cand.facts {
                    if stopped {
                        break;
                    }
                    let cont = self.run_factorization(
                        &cat, p, r, k2, fact, &plan, &mut steps, &mut sink,
                        &mut last_mark, &mut stats,
                    )?;
                    if !cont {
                        stopped = true;
                    }
                }
            }
        }
        stats.enum_steps = steps.0;
        stats.preprocessing_steps = self.preprocessing_steps;
        Ok(stats)
    }

    /// dist(x, y) <= bound for two streamed node items (centers only),
    /// decided on compressed representations; cursors are restored
    /// bit-identically.
    pub fn distance_within(
        &mut self,
        rho: u32,
        x: &mut OwnedStackItem,
        y: &mut OwnedStackItem,
        bound: u32,
        budget: u32,
        steps: &mut Steps,
    ) -> Result<bool> {
        let cat = self.catalog(rho)?;
        let singleton = [(0usize, 0usize)];
        within_bound(
            &self.slp, &self.pidx, &cat, x.as_mut(), &singleton, y.as_mut(), &singleton,
            bound, budget, steps,
        )
    }

    fn eval_all_sentences(&mut self, q: &Query, steps: &mut Steps) -> Result<Vec<bool>> {
        let mut out = Vec::new();
        fn walk(
            eng: &mut Engine,
            q: &Query,
            steps: &mut Steps,
            out: &mut Vec<bool>,
        ) -> Result<()> {
            match q {
                Query::Scattered(sq) => {
                    let v = eng.eval_sentence(sq, steps)?;
                    out.push(v);
                    Ok(())
                }
                Query::And(qs) | Query::Or(qs) => {
                    for s in qs {
                        walk(eng, s, steps, out)?;
                    }
                    Ok(())
                }
                Query::Not(s) => walk(eng, s, steps, out),
                _ => Ok(()),
            }
        }
        walk(self, q, steps, &mut out)?;
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn run_factorization(
        &mut self,
        cat: &Arc<TypeCatalog>,
        p: u32,
        r: u32,
        k2: usize,
        fact: &Factorization,
        plan: &DedupPlan,
        steps: &mut Steps,
        sink: &mut impl FnMut(Vec<LexRep>) -> bool,
        last_mark: &mut u64,
        stats: &mut EnumStats,
    ) -> Result<bool> {
        let m = fact.comps.len();
        let threshold =
            BigUint::from(k2) * BigUint::from(self.d.max(2)).pow(2 * p + 2 * r + 2);
        let mut levels: Vec<Level> = Vec::with_capacity(m);
        for comp in &fact.comps {
            let beta = self.count_type_nodes(p, comp.type_idx)?;
            if beta.is_zero() {
                return Ok(true);
            }
            let cdag = self.cdag(p, comp.type_idx)?;
            let src = if beta <= threshold {
                // materialization is preprocessing, not enumeration delay
                let mut pre_steps = Steps::default();
                let mut items = Vec::new();
                let mut stream = TypeNodeStream::start(cdag, comp.type_idx);
                while let Some(item) = stream.current(cat) {
                    items.push(item);
                    if !stream.advance(cat, &mut pre_steps) {
                        break;
                    }
                }
                self.preprocessing_steps += pre_steps.0;
                self.preprocessing_steps += items.len() as u64;
                stats.short_levels += 1;
                LevelSrc::Short { items, pos: 0 }
            } else {
                stats.long_levels += 1;
                LevelSrc::Long { stream: TypeNodeStream::start(self.cdag(p, comp.type_idx)?, comp.type_idx) }
            };
            levels.push(Level {
                sigma: comp.positions.iter().copied().zip(comp.sigma_elems.iter().copied()).collect(),
                src,
            });
        }
        // short levels first; admissibility is symmetric so reordering is free
        levels.sort_by_key(|l| matches!(l.src, LevelSrc::Long { .. }));
        let bound = 2 * r + 1;
        let budget = 3 * p - r;

        // DFLR over admissible stacks
        let mut l: usize = 0;
        let mut entered = vec![false; m];
        loop {
            steps.bump();
            let has = if !entered[l] {
                entered[l] = true;
                levels[l].rewind(steps)
            } else {
                levels[l].advance(cat, steps)
            };
            if !has {
                entered[l] = false;
                if l == 0 {
                    return Ok(true);
                }
                l -= 1;
                continue;
            }
            // admissibility vs lower stack levels
            let mut ok = true;
            for low in 0..l {
                let (a, b) = levels.split_at_mut(l);
                let (li, lj) = (&mut a[low], &mut b[0]);
                let si = li.sigma.clone();
                let sj = lj.sigma.clone();
                let (ii, ij) = (li.item().unwrap(), lj.item().unwrap());
                if within_bound(&self.slp, &self.pidx, cat, ii, &si, ij, &sj, bound, budget, steps)? {
                    ok = false;
                    break;
                }
            }
            if !ok {
                continue;
            }
            if l + 1 == m {
                let tuple = self.assemble(cat, k2, &mut levels, steps)?;
                let inflated = plan.inflate(&tuple);
                let delta = steps.0.saturating_sub(*last_mark);
                if delta > stats.max_delay_steps {
                    stats.max_delay_steps = delta;
                }
                if stats.delays.len() < (1 << 20) {
                    stats.delays.push(delta);
                }
                *last_mark = steps.0;
                stats.outputs += 1;
                if !sink(inflated) {
                    return Ok(false);
                }
            } else {
                l += 1;
            }
        }
    }

    fn assemble(
        &self,
        cat: &TypeCatalog,
        k2: usize,
        levels: &mut [Level],
        steps: &mut Steps,
    ) -> Result<Vec<LexRep>> {
        let mut out: Vec<Option<LexRep>> = vec![None; k2];
        for level in levels.iter_mut() {
            steps.bump();
            let sigma = level.sigma.clone();
            let item = level.item().unwrap();
            let entry = &cat.lists[item.type_idx][item.a][item.entry];
            for (j, elem) in sigma {
                let rep = &cat.expansions[item.a].frag.reps[entry.pi[elem]];
                let lex = item.cursor.total.clone() + self.wdag.lex_of_path(&rep.path);
                let prev = out[j].replace(LexRep {
                    lex,
                    nt: rep.path.end(&self.slp),
                    node: rep.node,
                });
                if prev.is_some() {
                    return Err(Error::Invalid("factorization positions overlap".into()));
                }
            }
        }
        out.into_iter()
            .map(|o| o.ok_or_else(|| Error::Invalid("factorization misses a position".into())))
            .collect()
    }
}

// ---- node streams ---------------------------------------------------------------

/// Streams the B_i-nodes of val(D): initial paths ending in useful
/// nonterminals in lexicographic order, crossed with the per-nonterminal
/// valid-node lists.
pub struct TypeNodeStream {
    pub type_idx: usize,
    ctx: Arc<ContractedDag>,
    cursor: Option<MinMaxPath>,
    entry: usize,
}

/// A stack element: the live path cursor plus the valid-node entry index.
pub struct StackItem<'a> {
    pub type_idx: usize,
    pub a: usize,
    pub entry: usize,
    pub cursor: &'a mut MinMaxPath,
}

impl TypeNodeStream {
    pub fn start(cdag: Arc<ContractedDag>, type_idx: usize) -> TypeNodeStream {
        let cursor = MinMaxPath::first(cdag.clone());
        TypeNodeStream { type_idx, ctx: cdag, cursor, entry: 0 }
    }

    fn current_inner(&mut self) -> Option<(usize, usize, &mut MinMaxPath)> {
        let cursor = self.cursor.as_mut()?;
        Some((cursor.end_nonterminal(), self.entry, cursor))
    }

    pub fn current(&mut self, cat: &TypeCatalog) -> Option<OwnedStackItem> {
        let ti = self.type_idx;
        let (a, entry, cursor) = self.current_inner()?;
        debug_assert!(entry < cat.lists[ti][a].len());
        Some(OwnedStackItem { type_idx: ti, a, entry, cursor: cursor.clone() })
    }

    pub fn item(&mut self) -> Option<StackItem<'_>> {
        let ti = self.type_idx;
        let (a, entry, cursor) = self.current_inner()?;
        Some(StackItem { type_idx: ti, a, entry, cursor })
    }

    /// Move to the next (path, valid node) pair. Every enumerated path ends
    /// in a useful nonterminal (the contraction pruned the rest), so the
    /// entry list is never empty.
    pub fn advance(&mut self, cat: &TypeCatalog, steps: &mut Steps) -> bool {
        let ti = self.type_idx;
        let Some(cursor) = self.cursor.as_mut() else { return false };
        let a = cursor.end_nonterminal();
        if self.entry + 1 < cat.lists[ti][a].len() {
            self.entry += 1;
            return true;
        }
        if cursor.next_path(steps) {
            self.entry = 0;
            debug_assert!(!cat.lists[ti][cursor.end_nonterminal()].is_empty());
            true
        } else {
            self.cursor = None;
            false
        }
    }
}

/// Owned snapshot of a stream position (short levels, sentence packing).
pub struct OwnedStackItem {
    pub type_idx: usize,
    pub a: usize,
    pub entry: usize,
    pub cursor: MinMaxPath,
}

impl OwnedStackItem {
    pub fn as_mut(&mut self) -> StackItem<'_> {
        StackItem {
            type_idx: self.type_idx,
            a: self.a,
            entry: self.entry,
            cursor: &mut self.cursor,
        }
    }
}

struct Level {
    /// (k-position, canonical element of the component type)
    sigma: Vec<(usize, usize)>,
    src: LevelSrc,
}

enum LevelSrc {
    Short { items: Vec<OwnedStackItem>, pos: usize },
    Long { stream: TypeNodeStream },
}

impl Level {
    fn rewind(&mut self, steps: &mut Steps) -> bool {
        let _ = steps;
        match &mut self.src {
            LevelSrc::Short { items, pos } => {
                *pos = 0;
                !items.is_empty()
            }
            LevelSrc::Long { stream } => {
                *stream = TypeNodeStream::start(stream.ctx.clone(), stream.type_idx);
                stream.cursor.is_some()
            }
        }
    }

    fn advance(&mut self, cat: &TypeCatalog, steps: &mut Steps) -> bool {
        match &mut self.src {
            LevelSrc::Short { items, pos } => {
                steps.bump();
                if *pos + 1 < items.len() {
                    *pos += 1;
                    true
                } else {
                    false
                }
            }
            LevelSrc::Long { stream } => stream.advance(cat, steps),
        }
    }

    fn item(&mut self) -> Option<StackItem<'_>> {
        match &mut self.src {
            LevelSrc::Short { items, pos } => items.get_mut(*pos).map(|i| i.as_mut()),
            LevelSrc::Long { stream } => stream.item(),
        }
    }
}

// ---- compressed distance checks ---------------------------------------------------

/// True iff dist(t_{x,σ_x}, t_{y,σ_y}) ≤ bound. Prefix gate: unless one
/// initial path extends the other by at most `budget` edges the distance
/// exceeds the bound (contact-avoidance of valid substructures). Otherwise
/// the check localizes to a BFS sphere in val(A) of the shorter path.
#[allow(clippy::too_many_arguments)]
fn within_bound(
    slp: &Slp,
    pidx: &ProdIndex,
    cat: &TypeCatalog,
    x: StackItem<'_>,
    sigma_x: &[(usize, usize)],
    y: StackItem<'_>,
    sigma_y: &[(usize, usize)],
    bound: u32,
    budget: u32,
    steps: &mut Steps,
) -> Result<bool> {
    // is x's path an extension of y's?
    let base_y = y.cursor.total.clone();
    if let Some(q) = try_extension(&base_y, &mut *x.cursor, budget, steps) {
        return Ok(local_within(slp, pidx, cat, &y, sigma_y, &x, sigma_x, &q, bound));
    }
    let base_x = x.cursor.total.clone();
    if let Some(q) = try_extension(&base_x, &mut *y.cursor, budget, steps) {
        return Ok(local_within(slp, pidx, cat, &x, sigma_x, &y, sigma_y, &q, bound));
    }
    Ok(false)
}

/// If the path of `ext` equals `base`'s path extended by ≤ `budget` edges,
/// return those edges (top-down). Restores `ext` bit-identically.
fn try_extension(
    base_lex: &BigUint,
    ext: &mut MinMaxPath,
    budget: u32,
    steps: &mut Steps,
) -> Option<Vec<u32>> {
    let mut recs = Vec::new();
    let mut q_rev: Vec<u32> = Vec::new();
    let mut found = false;
    // drop the terminal leaf edge first (weight 0, not a dag edge)
    match ext.shorten(steps) {
        Ok(rec) => {
            debug_assert_eq!(rec.removed.orig, 0);
            recs.push(rec);
        }
        Err(_) => return None,
    }
    for e in 0..=budget {
        if ext.total == *base_lex {
            found = true;
            break;
        }
        if e == budget {
            break;
        }
        match ext.shorten(steps) {
            Ok(rec) => {
                q_rev.push(rec.removed.orig);
                recs.push(rec);
            }
            Err(_) => break,
        }
    }
    while let Some(rec) = recs.pop() {
        ext.restore(rec, steps);
    }
    if found {
        q_rev.reverse();
        Some(q_rev)
    } else {
        None
    }
}

/// Both tuple ranges lifted into val(A_base); membership of each lifted
/// `ext` node in the bounded BFS sphere around each `base` node.
#[allow(clippy::too_many_arguments)]
fn local_within(
    slp: &Slp,
    pidx: &ProdIndex,
    cat: &TypeCatalog,
    base: &StackItem<'_>,
    sigma_b: &[(usize, usize)],
    ext: &StackItem<'_>,
    sigma_e: &[(usize, usize)],
    q: &[u32],
    bound: u32,
) -> bool {
    let eb = &cat.lists[base.type_idx][base.a][base.entry];
    let ee = &cat.lists[ext.type_idx][ext.a][ext.entry];
    for &(_, elem_b) in sigma_b {
        let rep_c = &cat.expansions[base.a].frag.reps[eb.pi[elem_b]];
        let Ok((frag, _)) = crate::expansion::local_sphere(slp, pidx, base.a, rep_c, bound)
        else {
            return true; // conservative; cannot happen for valid reps
        };
        for &(_, elem_e) in sigma_e {
            let rep2 = &cat.expansions[ext.a].frag.reps[ee.pi[elem_e]];
            let mut edges = q.to_vec();
            edges.extend_from_slice(&rep2.path.edges);
            let lifted = NodeRep { path: DagPath { start: base.a, edges }, node: rep2.node };
            if frag.index.contains_key(&lifted) {
                return true;
            }
        }
    }
    false
}

fn pair_mut<'a>(v: &'a mut [OwnedStackItem], i: usize, j: usize) -> (StackItem<'a>, StackItem<'a>) {
    debug_assert!(i < j);
    let (a, b) = v.split_at_mut(j);
    (a[i].as_mut(), b[0].as_mut())
}

fn exists_independent(conflict: &[Vec<bool>], need: usize, from: usize, chosen: &mut Vec<usize>) -> bool {
    if chosen.len() >= need {
        return true;
    }
    let n = conflict.len();
    if n - from < need - chosen.len() {
        return false;
    }
    for i in from..n {
        if chosen.iter().all(|&c| !conflict[i][c]) {
            chosen.push(i);
            if exists_independent(conflict, need, i + 1, chosen) {
                return true;
            }
            chosen.pop();
        }
    }
    false
}

// ---- candidate (k,r)-types and consistent factorizations -----------------------------

/// One component of a factorization: a realized ρ-type plus the injective
/// assignment of its center positions to canonical elements;
/// `positions[0]` is the anchor and maps to element 0 (the type's center).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub type_idx: usize,
    pub positions: Vec<usize>,
    pub sigma_elems: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Factorization {
    pub comps: Vec<Component>,
}

pub struct Candidate {
    /// assembled (k,r)-type as a pointed structure with k centers
    pub pointed: Pointed,
    pub code: Vec<u64>,
    pub facts: Vec<Factorization>,
}

/// All (k,r)-types assemblable as disjoint unions of r-neighborhoods of
/// center tuples inside realized ρ-types, with their consistent
/// factorizations. Covers every realized (k,r)-type; non-realized
/// candidates enumerate nothing.
pub fn candidate_types(cat: &TypeCatalog, k: usize, r: u32) -> Vec<Candidate> {
    let adjs: Vec<Vec<Vec<usize>>> = cat.types.iter().map(|t| t.canon.s.gaifman()).collect();
    let mut by_code: HashMap<Vec<u64>, Candidate> = HashMap::new();
    for plan in dedup_plans(k) {
        // groups ordered by first occurrence = by min position
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); plan.classes];
        for (pos, &c) in plan.assign.iter().enumerate() {
            groups[c].push(pos);
        }
        // per-group options: (type_idx, elems, component fragment)
        let mut options: Vec<Vec<(usize, Vec<usize>, Structure, Vec<usize>)>> = Vec::new();
        for group in &groups {
            let mut opts = Vec::new();
            for (ti, ty) in cat.types.iter().enumerate() {
                let n = ty.canon.s.n;
                let mut elems = vec![0usize; group.len()];
                enum_injective(n, 1, &mut elems, 0, &mut |elems| {
                    let ball = sphere(&adjs[ti], elems, r);
                    if !connected_within(&adjs[ti], &ball, elems[0]) {
                        return;
                    }
                    let (sub, back) = ty.canon.s.induced(&ball);
                    // centers of the fragment: position of each elem in ball
                    let centers: Vec<usize> = elems
                        .iter()
                        .map(|&e| back.iter().position(|&b| b == e).unwrap())
                        .collect();
                    opts.push((ti, elems.to_vec(), sub, centers));
                });
            }
            options.push(opts);
        }
        if options.iter().any(|o| o.is_empty()) {
            continue;
        }
        // cartesian product across groups
        let mut idx = vec![0usize; groups.len()];
        'outer: loop {
            // assemble
            let mut total_n = 0usize;
            let mut centers: Vec<Option<usize>> = vec![None; k];
            let mut comps = Vec::with_capacity(groups.len());
            let mut assembled: Option<Structure> = None;
            for (g, group) in groups.iter().enumerate() {
                let (ti, elems, sub, sub_centers) = &options[g][idx[g]];
                match &mut assembled {
                    None => assembled = Some(sub.clone()),
                    Some(s) => s.append_disjoint(sub),
                }
                for (gi, &pos) in group.iter().enumerate() {
                    centers[pos] = Some(total_n + sub_centers[gi]);
                }
                total_n += sub.n;
                comps.push(Component {
                    type_idx: *ti,
                    positions: group.clone(),
                    sigma_elems: elems.clone(),
                });
            }
            let pointed = Pointed { s: assembled.unwrap(), centers, radius: r };
            let (ty, _) = canonical_type(&pointed);
            let fact = Factorization { comps };
            by_code
                .entry(ty.code.clone())
                .or_insert_with(|| Candidate { pointed, code: ty.code.clone(), facts: Vec::new() })
                .facts
                .push(fact);
            // odometer
            let mut g = groups.len();
            loop {
                if g == 0 {
                    break 'outer;
                }
                g -= 1;
                idx[g] += 1;
                if idx[g] < options[g].len() {
                    break;
                }
                idx[g] = 0;
            }
        }
    }
    let mut out: Vec<Candidate> = by_code.into_values().collect();
    out.sort_by(|a, b| a.code.cmp(&b.code));
    for c in &mut out {
        c.facts.sort_by(|a, b| format!("{a:?}").cmp(&format!("{b:?}")));
        c.facts.dedup();
    }
    out
}

/// elems[0] = 0 (anchor to the center); fill elems[at+1..] with pairwise
/// distinct elements of 1..n.
fn enum_injective(
    n: usize,
    start_from: usize,
    elems: &mut Vec<usize>,
    at: usize,
    f: &mut impl FnMut(&Vec<usize>),
) {
    if at == 0 {
        elems[0] = 0;
        return enum_injective(n, start_from, elems, 1, f);
    }
    if at == elems.len() {
        f(elems);
        return;
    }
    for e in start_from..n {
        if elems[..at].contains(&e) {
            continue;
        }
        elems[at] = e;
        enum_injective(n, start_from, elems, at + 1, f);
    }
}

fn connected_within(adj: &[Vec<usize>], ball: &[usize], seed: usize) -> bool {
    let inside: std::collections::HashSet<usize> = ball.iter().copied().collect();
    let mut seen = std::collections::HashSet::new();
    seen.insert(seed);
    let mut queue = std::collections::VecDeque::from([seed]);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if inside.contains(&w) && seen.insert(w) {
                queue.push_back(w);
            }
        }
    }
    seen.len() == ball.len()
}

/// Evaluate the Boolean combination on a candidate type; scattered leaves
/// use the precomputed global values (walk order must match
/// `eval_all_sentences`). `cand = None` only for sentence-only queries.
fn eval_on_candidate(
    q: &Query,
    cand: Option<&Pointed>,
    sentences: &[bool],
    next_sentence: &mut usize,
) -> bool {
    match q {
        Query::Local(l) => {
            let p = cand.expect("local leaf needs a candidate type");
            eval_local_on_pointed(p, &l.phi, l.r)
        }
        Query::Scattered(_) => {
            let v = sentences[*next_sentence];
            *next_sentence += 1;
            v
        }
        Query::Fo { .. } => unreachable!("fo leaves rejected earlier"),
        Query::And(qs) => {
            let mut acc = true;
            for s in qs {
                // no short-circuit: keep the sentence counter aligned
                let v = eval_on_candidate(s, cand, sentences, next_sentence);
                acc = acc && v;
            }
            acc
        }
        Query::Or(qs) => {
            let mut acc = false;
            for s in qs {
                let v = eval_on_candidate(s, cand, sentences, next_sentence);
                acc = acc || v;
            }
            acc
        }
        Query::Not(s) => !eval_on_candidate(s, cand, sentences, next_sentence),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::naive_eval_query;
    use crate::query::parse_query;
    use crate::slp::parse_slp;
    use std::collections::{BTreeSet, HashSet};

    fn example6() -> Slp {
        parse_slp(&std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../fixtures/example6.slp"
        ))
        .unwrap())
        .unwrap()
    }

    fn stream_lexreps(eng: &mut Engine, rho: u32, ti: usize) -> Vec<LexRep> {
        let cat = eng.catalog(rho).unwrap();
        let mut stream = eng.node_stream(rho, ti).unwrap();
        let mut steps = Steps::default();
        let mut out = Vec::new();
        while let Some(item) = stream.current(&cat) {
            let e = &cat.lists[ti][item.a][item.entry];
            let rep = &cat.expansions[item.a].frag.reps[e.pi[0]];
            out.push(LexRep {
                lex: item.cursor.total.clone() + eng.wdag.lex_of_path(&rep.path),
                nt: rep.path.end(&eng.slp),
                node: rep.node,
            });
            if !stream.advance(&cat, &mut steps) {
                break;
            }
        }
        out
    }

    #[test]
    fn counts_and_streams_cover_all_nodes() {
        let mut eng = Engine::new(example6()).unwrap();
        let cat = eng.catalog(1).unwrap();
        let (_, map) = eng.slp.decompress(1 << 20).unwrap();
        let mut total = BigUint::zero();
        let mut seen: HashSet<NodeRep> = HashSet::new();
        for ti in 0..cat.types.len() {
            let beta = eng.count_type_nodes(1, ti).unwrap();
            let reps = stream_lexreps(&mut eng, 1, ti);
            assert_eq!(BigUint::from(reps.len()), beta);
            for lr in reps {
                let nr = lr.resolve(&eng.wdag).unwrap();
                assert!(map.contains_key(&nr), "unknown node {}", nr.display(&eng.slp));
                assert!(seen.insert(nr), "node streamed twice");
            }
            total += beta;
        }
        assert_eq!(total, BigUint::from(9u32));
        assert_eq!(seen.len(), 9);
    }

    #[test]
    fn bridge_node_stream_counts_per_path() {
        // the node between two fan-out targets is valid one level up: it is
        // streamed per A-path (ranks 1 and 3) with local offset 1
        let mut eng = Engine::new(example6()).unwrap();
        let cat = eng.catalog(1).unwrap();
        let a = eng.slp.nt_by_name("A").unwrap();
        let b = eng.slp.nt_by_name("B").unwrap();
        let mut found = false;
        for ti in 0..cat.types.len() {
            let entry = cat.lists[ti][a].first();
            let Some(e) = entry else { continue };
            let rep = &cat.expansions[a].frag.reps[e.pi[0]];
            if rep.path.display(&eng.slp) != "A1B" {
                continue;
            }
            found = true;
            // the fan-out children one level up share the same type, so the
            // stream covers ranks 1..4: ranks 2 and 4 carry the bridge node
            assert_eq!(eng.count_type_nodes(1, ti).unwrap(), BigUint::from(4u32));
            let reps = stream_lexreps(&mut eng, 1, ti);
            let mut lexes: Vec<BigUint> = reps.iter().map(|r| r.lex.clone()).collect();
            lexes.sort();
            let want: Vec<BigUint> = (1u32..=4).map(BigUint::from).collect();
            assert_eq!(lexes, want);
            assert!(reps
                .iter()
                .any(|r| r.nt == b && r.lex == BigUint::from(4u32)));
            assert_eq!(reps.iter().filter(|r| r.nt == b).count(), 2);
        }
        assert!(found);
    }

    fn both_ways(eng: &mut Engine, text: &str) -> (BTreeSet<Vec<usize>>, BTreeSet<Vec<usize>>) {
        let q = parse_query(&eng.slp.sig, text).unwrap();
        let (dec, map) = eng.slp.decompress(1 << 20).unwrap();
        let expected = naive_eval_query(&dec, &q, 1 << 24).unwrap();
        let mut got = BTreeSet::new();
        let wdag = eng.wdag.clone();
        eng.enumerate_query(&q, |t| {
            let ids: Vec<usize> =
                t.iter().map(|lr| map[&lr.resolve(&wdag).unwrap()]).collect();
            assert!(got.insert(ids), "duplicate answer");
            true
        })
        .unwrap();
        (got, expected)
    }

    #[test]
    fn enumerate_matches_oracle_k1() {
        let mut eng = Engine::new(example6()).unwrap();
        let (got, expected) =
            both_ways(&mut eng, "(local :r 1 :vars (x) (exists y (r1 x y)))");
        assert_eq!(got, expected);
        assert_eq!(got.len(), 7);
    }

    #[test]
    fn enumerate_matches_oracle_k2_edges() {
        let mut eng = Engine::new(example6()).unwrap();
        let (got, expected) = both_ways(&mut eng, "(local :r 1 :vars (x y) (r1 x y))");
        assert_eq!(got, expected);
        assert_eq!(got.len(), 11);
    }

    #[test]
    fn enumerate_matches_oracle_k2_far_pairs() {
        let mut eng = Engine::new(example6()).unwrap();
        // distinct marks far apart: exercises the multi-component stacks
        let (got, expected) = both_ways(
            &mut eng,
            "(and (local :r 1 :vars (x y) (and (exists z (r1 x z)) (exists z (r1 z y)))) \
                  (not (local :r 1 :vars (x y) (dist<= x y 2))))",
        );
        assert_eq!(got, expected);
    }

    #[test]
    fn enumerate_diagonal_via_dedup() {
        let mut eng = Engine::new(example6()).unwrap();
        let (got, expected) = both_ways(&mut eng, "(local :r 0 :vars (x y) (= x y))");
        assert_eq!(got, expected);
        assert_eq!(got.len(), 9);
    }

    #[test]
    fn sentences_match_oracle() {
        let mut eng = Engine::new(example6()).unwrap();
        let mut steps = Steps::default();
        let (dec, _) = eng.slp.decompress(1 << 20).unwrap();
        for (q, r, want) in [
            (2usize, 1u32, true),
            (3, 1, true),
            (4, 1, false),
            (2, 2, true),
            (3, 2, false),
            (1, 2, true),
        ] {
            let text = format!("(scattered :q {q} :r {r} (exists y (r1 z y)))");
            let query = parse_query(&eng.slp.sig, &text).unwrap();
            let expected = !naive_eval_query(&dec, &query, 1 << 24).unwrap().is_empty();
            assert_eq!(expected, want, "oracle disagrees for q={q} r={r}");
            let Query::Scattered(sq) = &query else { unreachable!() };
            assert_eq!(eng.eval_sentence(sq, &mut steps).unwrap(), want, "q={q} r={r}");
        }
    }

    #[test]
    fn boolean_combination_with_sentence() {
        let mut eng = Engine::new(example6()).unwrap();
        let (got, expected) = both_ways(
            &mut eng,
            "(and (local :r 1 :vars (x) (exists y (r1 y x))) \
                  (scattered :q 2 :r 1 (exists y (r1 z y))))",
        );
        assert_eq!(got, expected);
        let (got, expected) = both_ways(
            &mut eng,
            "(and (local :r 1 :vars (x) (exists y (r1 y x))) \
                  (scattered :q 5 :r 1 (exists y (r1 z y))))",
        );
        assert_eq!(got, expected);
        assert!(got.is_empty());
    }

    #[test]
    fn fo_leaves_are_rejected() {
        let mut eng = Engine::new(example6()).unwrap();
        let q = parse_query(&eng.slp.sig, "(fo (exists y (r1 x y)))").unwrap();
        assert!(eng.enumerate_query(&q, |_| true).is_err());
    }
}
