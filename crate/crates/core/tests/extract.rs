// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, HashMap};

use proptest::prelude::*;

use biasamp::extract::{
    extract_topk, extract_topk_balanced, rank, read_candidates, select_topk, write_candidates,
};

fn losses_strategy() -> impl Strategy<Value = Vec<(String, f64)>> {
    prop::collection::vec(0u8..12, 1..300).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, l)| (format!("id{:04}", (i * 37) % 1000), l as f64 / 4.0))
            .collect()
    })
}

proptest! {
    #[test]
    fn ranking_is_a_sorted_permutation(losses in losses_strategy()) {
        let r = rank(&losses).unwrap();
        prop_assert_eq!(r.len(), losses.len());
        for w in r.entries().windows(2) {
            prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
        let mut a: Vec<_> = r.entries().iter().map(|e| e.0.clone()).collect();
        let mut b: Vec<_> = losses.iter().map(|e| e.0.clone()).collect();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn topk_is_a_prefix_and_partial_selection_agrees(losses in losses_strategy(), k in 1usize..400) {
        let r = rank(&losses).unwrap();
        let set = extract_topk(&r, k, "m").unwrap();
        prop_assert_eq!(set.len(), k.min(losses.len()));
        for (i, id) in set.sample_ids.iter().enumerate() {
            prop_assert_eq!(id, &r.entries()[i].0);
        }
        let fast = select_topk(&losses, k).unwrap();
        prop_assert_eq!(fast, r.entries()[..set.len()].to_vec());
    }

    #[test]
    fn balanced_selection_meets_quotas(losses in losses_strategy(), k in 1usize..120, classes in 2usize..5) {
        let labels: HashMap<String, usize> = losses.iter().enumerate().map(|(i, (id, _))| (id.clone(), i % classes)).collect();
        let r = rank(&losses).unwrap();
        let set = extract_topk_balanced(&r, k, &labels, classes, "m").unwrap();
        prop_assert_eq!(set.len(), k.min(losses.len()));
        let mut per: BTreeMap<usize, usize> = BTreeMap::new();
        let mut available: BTreeMap<usize, usize> = BTreeMap::new();
        for id in &set.sample_ids {
            *per.entry(labels[id]).or_default() += 1;
        }
        for (id, _) in &losses {
            *available.entry(labels[id]).or_default() += 1;
        }
        for c in 0..classes {
            let quota = k / classes + usize::from(c < k % classes);
            let want = quota.min(available.get(&c).copied().unwrap_or(0));
            prop_assert!(per.get(&c).copied().unwrap_or(0) >= want, "class {} below quota", c);
        }
        // Output keeps ranking order.
        let pos: HashMap<&str, usize> = r.entries().iter().enumerate().map(|(i, e)| (e.0.as_str(), i)).collect();
        for w in set.sample_ids.windows(2) {
            prop_assert!(pos[w[0].as_str()] < pos[w[1].as_str()]);
        }
    }
}

#[test]
fn candidate_file_round_trip() {
    let losses = vec![("b".to_string(), 2.5), ("a".to_string(), 2.5), ("c".to_string(), 0.1)];
    let set = extract_topk(&rank(&losses).unwrap(), 2, "abc123").unwrap();
    assert_eq!(set.sample_ids, ["a", "b"]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    write_candidates(&set, &path).unwrap();
    assert_eq!(read_candidates(&path).unwrap(), set);
}
