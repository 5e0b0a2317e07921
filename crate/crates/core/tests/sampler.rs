mod oracles;

use std::collections::BTreeSet;

use oracles::rng;
use rand::Rng;
use seccode::extract::sample_commit_subsets;
use seccode::ingest::{CommitRecord, CommitSet};

fn commits(n: usize) -> CommitSet {
    CommitSet::new(
        (0..n)
            .map(|i| CommitRecord {
                cve_id: format!("CVE-2020-{i:04}"),
                cwe_id: Some("CWE-787".into()),
                project: format!("p{}", i % 7),
                commit_hash: format!("{:040x}", i * 7919 + 1),
                files: Vec::new(),
            })
            .collect(),
    )
}

fn hashes(s: &CommitSet) -> BTreeSet<String> {
    s.iter().map(|r| r.commit_hash.clone()).collect()
}

#[test]
fn nested_subsets_for_random_triples() {
    let mut r = rng(2024);
    for _ in 0..100 {
        let total = r.random_range(1..=80);
        let set = commits(total);
        let mut sizes: Vec<usize> = (0..r.random_range(1..=5)).map(|_| r.random_range(1..=total)).collect();
        sizes.sort_unstable();
        sizes.dedup();
        let seed: u64 = r.random();

        let subsets = sample_commit_subsets(&set, &sizes, seed).unwrap();
        assert_eq!(subsets.len(), sizes.len());
        let all = hashes(&set);
        for (s, &size) in subsets.iter().zip(&sizes) {
            assert_eq!(s.len(), size);
            assert!(hashes(s).is_subset(&all));
        }
        for w in subsets.windows(2) {
            assert!(hashes(&w[0]).is_subset(&hashes(&w[1])));
        }
        assert_eq!(sample_commit_subsets(&set, &sizes, seed).unwrap(), subsets);
    }
}

#[test]
fn input_order_does_not_matter() {
    let set = commits(30);
    let mut reversed: Vec<CommitRecord> = set.records().to_vec();
    reversed.reverse();
    let a = sample_commit_subsets(&set, &[5, 10], 1).unwrap();
    let b = sample_commit_subsets(&CommitSet::new(reversed), &[5, 10], 1).unwrap();
    assert_eq!(a, b);
}

#[test]
fn seeds_differ() {
    let set = commits(60);
    let picks: BTreeSet<BTreeSet<String>> = (0..8)
        .map(|seed| hashes(&sample_commit_subsets(&set, &[10], seed).unwrap()[0]))
        .collect();
    assert!(picks.len() > 1);
}
