//! Property tests over randomly generated apex programs: parser round-trips,
//! size accounting, path-cursor invariants, and engine/oracle agreement on a
//! fixed pair of smoke queries.

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use proptest::prelude::*;
use slpfo::dagpaths::{extend_and_weight, prune_contract, MinMaxPath, OrderedDag, Steps};
use slpfo::engine::Engine;
use slpfo::gen::{chain, chain_len, grid_strip, ptree, random_apex, RandomParams};
use slpfo::oracle::naive_eval_query;
use slpfo::query::parse_query;
use slpfo::slp::{parse_slp, write_slp, Slp};
use std::collections::BTreeSet;
use std::sync::Arc;

fn small_random(seed: u64) -> Slp {
    let params = RandomParams { max_nts: 6, max_val: 60, max_degree: 4, max_refs: 3 };
    random_apex(seed, &params)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn slp_text_roundtrip(seed in 0u64..10_000) {
        let slp = small_random(seed);
        let back = parse_slp(&write_slp(&slp)).unwrap();
        prop_assert_eq!(slp.nts.len(), back.nts.len());
        prop_assert_eq!(slp.size(), back.size());
        let (a, _) = slp.decompress(1 << 20).unwrap();
        let (b, _) = back.decompress(1 << 20).unwrap();
        prop_assert_eq!(a.n, b.n);
        prop_assert_eq!(a.tuples, b.tuples);
    }

    #[test]
    fn size_never_exceeds_value(seed in 0u64..10_000) {
        // compression never inflates: |val(D)| can dwarf |D| but
        // |D| counts every node and tuple of some production at least once
        let slp = small_random(seed);
        let (dec, map) = slp.decompress(1 << 20).unwrap();
        prop_assert_eq!(dec.n, map.len());
        prop_assert!(slp.size() >= slp.nts[slp.initial].n_local);
        prop_assert!(dec.max_degree() <= 4);
    }

    #[test]
    fn cursor_totals_are_dense_ranks(seed in 0u64..10_000) {
        let slp = small_random(seed);
        let w = extend_and_weight(OrderedDag::from_slp(&slp)).unwrap();
        if w.number_paths[slp.initial] > BigUint::from(2_000u32) {
            return Ok(());
        }
        let useful = vec![true; slp.nts.len()];
        let ctx = Arc::new(prune_contract(&w, &useful));
        let mut steps = Steps::default();
        let mut p = MinMaxPath::first(ctx).unwrap();
        let mut k = 0u64;
        loop {
            prop_assert_eq!(p.total.to_u64(), Some(k));
            let dp = p.to_dag_path(&w);
            let resolved = w.resolve_lex(&p.total);
            prop_assert_eq!(resolved.as_ref(), Some(&dp));
            prop_assert_eq!(w.lex_of_path(&dp).to_u64(), Some(k));
            k += 1;
            if !p.next_path(&mut steps) {
                break;
            }
        }
        prop_assert_eq!(BigUint::from(k), w.number_paths[slp.initial].clone());
    }

    #[test]
    fn engine_agrees_with_oracle_on_smoke_queries(seed in 0u64..10_000) {
        let slp = small_random(seed);
        let (dec, map) = slp.decompress(1 << 20).unwrap();
        let mut eng = Engine::new(slp.clone()).unwrap();
        for text in [
            "(local :r 1 :vars (x) (exists y (r1 x y)))",
            "(local :r 1 :vars (x y) (and (r1 x y) (not (= x y))))",
        ] {
            let q = parse_query(&slp.sig, text).unwrap();
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
            prop_assert_eq!(got, expected, "query {}", text);
        }
    }

    #[test]
    fn family_generators_validate(h in 0u32..12, n in 1u32..12) {
        for slp in [ptree(h), chain(n), grid_strip(n as usize + 1)] {
            let report = slp.validate();
            prop_assert!(report.ok() && report.apex && report.acyclic);
        }
        let (dec, _) = chain(n).decompress(1 << 22).unwrap();
        prop_assert_eq!(dec.tuples[0].len() as u64, chain_len(n));
    }
}
