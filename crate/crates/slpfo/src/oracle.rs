//! Naive reference implementations used to cross-check the streaming
//! enumerator: brute-force query evaluation on a materialized structure and
//! direct path enumeration on the derivation dag. Deliberately simple and
//! kept independent of the incremental machinery.

use crate::dagpaths::OrderedDag;
use crate::slp::DagPath;
use crate::query::{eval_formula, expand_scattered, Formula, Query};
use crate::structure::{canonical_type, neighborhood, sphere, NeighborhoodType, Structure};
use crate::{Error, Result};
use std::collections::BTreeSet;
use std::collections::HashMap;

/// All initial paths of the derivation dag in lexicographic order: preorder
/// depth-first traversal with reference edges taken in order.
pub fn naive_initial_paths(dag: &OrderedDag) -> Vec<DagPath> {
    let mut out = Vec::new();
    fn rec(dag: &OrderedDag, node: usize, path: &mut DagPath, out: &mut Vec<DagPath>) {
        out.push(path.clone());
        for i in 0..dag.gamma[node].len() {
            path.edges.push((i + 1) as u32);
            rec(dag, dag.gamma[node][i], path, out);
            path.edges.pop();
        }
    }
    let mut p = DagPath { start: dag.initial, edges: Vec::new() };
    rec(dag, dag.initial, &mut p, &mut out);
    out
}

/// Brute-force query answers over all k-tuples (repeats included). Errors
/// out when the tuple space exceeds `budget`.
pub fn naive_eval_query(
    s: &Structure,
    q: &Query,
    budget: u64,
) -> Result<BTreeSet<Vec<usize>>> {
    let k = q.free_k()?;
    let n = s.n as u64;
    let space = n.checked_pow(k as u32).unwrap_or(u64::MAX);
    if space > budget {
        return Err(Error::Invalid(format!(
            "oracle budget exceeded: {n}^{k} tuples > {budget}"
        )));
    }
    let adj = s.gaifman();
    let mut sentence_cache: HashMap<usize, bool> = HashMap::new();
    let mut answers = BTreeSet::new();
    let mut tuple = vec![0usize; k];
    loop {
        if eval_combination(s, &adj, q, &tuple, &mut sentence_cache) {
            answers.insert(tuple.clone());
        }
        // odometer over U^k
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(answers);
            }
            i -= 1;
            tuple[i] += 1;
            if tuple[i] < s.n {
                break;
            }
            tuple[i] = 0;
        }
        if s.n == 0 {
            return Ok(answers);
        }
    }
}

fn eval_combination(
    s: &Structure,
    adj: &[Vec<usize>],
    q: &Query,
    tuple: &[usize],
    cache: &mut HashMap<usize, bool>,
) -> bool {
    match q {
        Query::And(qs) => qs.iter().all(|q| eval_combination(s, adj, q, tuple, cache)),
        Query::Or(qs) => qs.iter().any(|q| eval_combination(s, adj, q, tuple, cache)),
        Query::Not(q) => !eval_combination(s, adj, q, tuple, cache),
        Query::Local(l) => {
            let domain = sphere(adj, tuple, l.r);
            let mut env: Vec<Option<usize>> = tuple.iter().map(|&v| Some(v)).collect();
            eval_formula(s, adj, &l.phi, &mut env, Some(&domain))
        }
        Query::Fo { phi, .. } => {
            let mut env: Vec<Option<usize>> = tuple.iter().map(|&v| Some(v)).collect();
            eval_formula(s, adj, phi, &mut env, None)
        }
        Query::Scattered(sq) => {
            let key = q as *const Query as usize;
            if let Some(&v) = cache.get(&key) {
                return v;
            }
            let f: Formula = expand_scattered(sq);
            let mut env = Vec::new();
            let v = eval_formula(s, adj, &f, &mut env, None);
            cache.insert(key, v);
            v
        }
    }
}

/// Group the pairwise-distinct k-tuples by canonical r-neighborhood type.
pub fn naive_type_tuples(
    s: &Structure,
    k: usize,
    r: u32,
    budget: u64,
) -> Result<HashMap<NeighborhoodType, Vec<Vec<usize>>>> {
    let n = s.n as u64;
    let space = n.checked_pow(k as u32).unwrap_or(u64::MAX);
    if space > budget {
        return Err(Error::Invalid(format!(
            "oracle budget exceeded: {n}^{k} tuples > {budget}"
        )));
    }
    let mut groups: HashMap<NeighborhoodType, Vec<Vec<usize>>> = HashMap::new();
    let mut tuple = vec![0usize; k];
    if k == 0 || s.n == 0 {
        return Ok(groups);
    }
    'outer: loop {
        let distinct = (0..k).all(|i| (0..i).all(|j| tuple[i] != tuple[j]));
        if distinct {
            let centers: Vec<Option<usize>> = tuple.iter().map(|&v| Some(v)).collect();
            let p = neighborhood(s, &centers, r);
            let (ty, _) = canonical_type(&p);
            groups.entry(ty).or_default().push(tuple.clone());
        }
        let mut i = k;
        loop {
            if i == 0 {
                break 'outer;
            }
            i -= 1;
            tuple[i] += 1;
            if tuple[i] < s.n {
                break;
            }
            tuple[i] = 0;
        }
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dagpaths::extend_and_weight;
    use crate::query::parse_query;
    use crate::slp::parse_slp;
    use crate::structure::Signature;
    use std::sync::Arc;

    fn example6() -> crate::slp::Slp {
        parse_slp(&std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../fixtures/example6.slp"
        ))
        .unwrap())
        .unwrap()
    }

    #[test]
    fn initial_paths_match_lex_order() {
        let slp = example6();
        let dag = OrderedDag::from_slp(&slp);
        let paths = naive_initial_paths(&dag);
        let w = extend_and_weight(OrderedDag::from_slp(&slp)).unwrap();
        assert_eq!(paths.len(), 6);
        let shown: Vec<String> = paths.iter().map(|p| p.display(&slp)).collect();
        assert_eq!(shown, vec!["S", "S1A", "S1A1B", "S2A", "S2A1B", "S3B"]);
        for (i, p) in paths.iter().enumerate() {
            assert_eq!(w.lex_of_path(p), num_bigint::BigUint::from(i));
            assert_eq!(w.resolve_lex(&num_bigint::BigUint::from(i)).unwrap(), *p);
        }
    }

    fn marked_path(n: usize, marks: &[usize]) -> Structure {
        let sig = Arc::new(Signature::new(vec![("r1".into(), 2), ("c".into(), 1)]));
        let mut s = Structure::new(sig, n);
        for v in 0..n - 1 {
            s.add_tuple(0, vec![v, v + 1]);
        }
        for &m in marks {
            s.add_tuple(1, vec![m]);
        }
        s
    }

    #[test]
    fn local_query_answers() {
        let s = marked_path(6, &[0, 5]);
        let q = parse_query(&s.sig, "(local :r 1 :vars (x) (exists y (c y)))").unwrap();
        let ans = naive_eval_query(&s, &q, 1 << 20).unwrap();
        // nodes whose radius-1 sphere contains a mark: 0,1,4,5
        let got: Vec<usize> = ans.iter().map(|t| t[0]).collect();
        assert_eq!(got, vec![0, 1, 4, 5]);

        let q = parse_query(&s.sig, "(local :r 1 :vars (x y) (r1 x y))").unwrap();
        let ans = naive_eval_query(&s, &q, 1 << 20).unwrap();
        assert_eq!(ans.len(), 5);
        assert!(ans.contains(&vec![0, 1]) && !ans.contains(&vec![1, 0]));
    }

    #[test]
    fn scattered_query_answers() {
        // marks at 0 and 5: distance 5
        let s = marked_path(6, &[0, 5]);
        let q1 = parse_query(&s.sig, "(scattered :q 2 :r 1 (c z))").unwrap();
        assert_eq!(naive_eval_query(&s, &q1, 1 << 20).unwrap().len(), 1);
        let q2 = parse_query(&s.sig, "(scattered :q 2 :r 2 (c z))").unwrap();
        assert_eq!(naive_eval_query(&s, &q2, 1 << 20).unwrap().len(), 1);
        // marks at 0 and 3: distance 3 > 2 but not > 4
        let s = marked_path(6, &[0, 3]);
        assert_eq!(naive_eval_query(&s, &q1, 1 << 20).unwrap().len(), 1);
        assert_eq!(naive_eval_query(&s, &q2, 1 << 20).unwrap().len(), 0);
        // boolean combination with a local leaf
        let q = parse_query(
            &s.sig,
            "(and (local :r 0 :vars (x) (c x)) (not (scattered :q 2 :r 2 (c z))))",
        )
        .unwrap();
        let ans = naive_eval_query(&s, &q, 1 << 20).unwrap();
        let got: Vec<usize> = ans.iter().map(|t| t[0]).collect();
        assert_eq!(got, vec![0, 3]);
    }

    #[test]
    fn type_groups_on_path() {
        let s = marked_path(5, &[]);
        let groups = naive_type_tuples(&s, 1, 1, 1 << 20).unwrap();
        // edges are directed: source endpoint, target endpoint, interior
        assert_eq!(groups.len(), 3);
        let mut sizes: Vec<usize> = groups.values().map(|v| v.len()).collect();
        sizes.sort();
        assert_eq!(sizes, vec![1, 1, 3]);
    }

    #[test]
    fn budget_guard() {
        let s = marked_path(100, &[]);
        let q = parse_query(&s.sig, "(local :r 1 :vars (x y) (r1 x y))").unwrap();
        assert!(naive_eval_query(&s, &q, 100).is_err());
    }
}
