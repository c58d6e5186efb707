mod common;

use common::{brute_force, random_case, to_history};
use ltev_sim::mac_sps::sense;
use ltev_sim::rng_stream;

fn check(seed: u64, cases: usize, max_pool: u32) {
    let mut rng = rng_stream(seed, "sps-oracle");
    for case in 0..cases {
        let (raw, q) = random_case(&mut rng, max_pool);
        let (expected, threshold) = brute_force(&raw, &q);
        let got = sense(&to_history(&raw), q.window(raw.now), &q.params(&raw)).unwrap();
        let keys: Vec<(u64, u32)> = got
            .candidates
            .iter()
            .map(|c| (c.subframe, c.subchannels.start))
            .collect();
        assert_eq!(keys, expected, "case {case}: {raw:?} {q:?}");
        assert_eq!(got.threshold_dbm, threshold, "case {case}");
    }
}

#[test]
fn matches_brute_force_on_small_pools() {
    check(1, 1000, 20);
}

#[test]
fn matches_brute_force_on_larger_pools() {
    check(2, 300, 80);
}
