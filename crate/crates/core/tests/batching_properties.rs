use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;

use textmatch::dataset::{
    listwise_batches, pairwise_batches, pointwise_batches, Batch, DataPack, ListOrder, Pair,
    Relation, Split,
};

fn pack() -> impl Strategy<Value = DataPack<()>> {
    prop::collection::vec((0usize..4, 0usize..8, 0u32..3), 1..20).prop_map(|raw| {
        let mut seen = HashSet::new();
        let rels: Vec<Relation> = raw
            .into_iter()
            .filter(|(l, r, _)| seen.insert((*l, *r)))
            .map(|(l, r, y)| Relation::new(format!("l{l}"), format!("r{r}"), y))
            .collect();
        let left: BTreeMap<String, ()> = rels.iter().map(|r| (r.left.clone(), ())).collect();
        let right: BTreeMap<String, ()> = rels.iter().map(|r| (r.right.clone(), ())).collect();
        DataPack::new(left, right, rels, Split::Train).unwrap()
    })
}

fn exhaustive(pack: &DataPack<()>) -> HashSet<Pair> {
    let mut out = HashSet::new();
    for a in pack.relations() {
        for b in pack.relations() {
            if a.left == b.left && a.label > b.label {
                out.insert(Pair {
                    left: a.left.clone(),
                    pos: a.right.clone(),
                    neg: b.right.clone(),
                    pos_label: a.label,
                    neg_label: b.label,
                });
            }
        }
    }
    out
}

fn pairs(batches: &[Batch]) -> Vec<Pair> {
    batches
        .iter()
        .flat_map(|b| match b {
            Batch::Pairwise(p) => p.clone(),
            _ => panic!("expected pairwise batches"),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pairwise_with_many_negatives_is_exhaustive(p in pack(), seed in any::<u64>(), bs in 1usize..8) {
        let expect = exhaustive(&p);
        match pairwise_batches(&p, 1000, bs, seed) {
            Ok(batches) => {
                prop_assert!(batches.iter().all(|b| b.len() <= bs && !b.is_empty()));
                let got = pairs(&batches);
                let set: HashSet<Pair> = got.iter().cloned().collect();
                prop_assert_eq!(set.len(), got.len());
                prop_assert_eq!(set, expect);
            }
            Err(_) => prop_assert!(expect.is_empty()),
        }
    }

    #[test]
    fn sampled_pairs_are_ordered_and_bounded(p in pack(), seed in any::<u64>(), k in 1usize..3) {
        if let Ok(batches) = pairwise_batches(&p, k, 4, seed) {
            let all = exhaustive(&p);
            let got = pairs(&batches);
            prop_assert!(got.iter().all(|x| x.pos_label > x.neg_label && all.contains(x)));
            let mut per_pos: BTreeMap<(&str, &str), usize> = BTreeMap::new();
            for x in &got {
                *per_pos.entry((&x.left, &x.pos)).or_default() += 1;
            }
            prop_assert!(per_pos.values().all(|&n| n <= k));
        }
    }

    #[test]
    fn every_mode_is_seed_deterministic(p in pack(), seed in any::<u64>()) {
        prop_assert_eq!(pointwise_batches(&p, 3, seed).unwrap(), pointwise_batches(&p, 3, seed).unwrap());
        prop_assert_eq!(
            pairwise_batches(&p, 2, 3, seed).ok(),
            pairwise_batches(&p, 2, 3, seed).ok()
        );
        prop_assert_eq!(
            listwise_batches(&p, ListOrder::Shuffled(seed)),
            listwise_batches(&p, ListOrder::Shuffled(seed))
        );
    }

    #[test]
    fn pointwise_covers_each_relation_once(p in pack(), seed in any::<u64>(), bs in 1usize..6) {
        let batches = pointwise_batches(&p, bs, seed).unwrap();
        let mut got: Vec<Relation> = batches
            .into_iter()
            .flat_map(|b| match b {
                Batch::Pointwise(v) => v,
                _ => unreachable!(),
            })
            .collect();
        let mut want = p.relations().to_vec();
        let key = |r: &Relation| (r.left.clone(), r.right.clone());
        got.sort_by_key(key);
        want.sort_by_key(key);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn listwise_groups_partition_relations(p in pack()) {
        let batches = listwise_batches(&p, ListOrder::Stable);
        let total: usize = batches.iter().map(Batch::len).sum();
        prop_assert_eq!(total, p.relations().len());
        let lefts: Vec<String> = batches
            .iter()
            .map(|b| match b {
                Batch::Listwise(g) => g.left.clone(),
                _ => unreachable!(),
            })
            .collect();
        let mut sorted = lefts.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(lefts, sorted);
    }
}
