mod common;

use std::time::Instant;

#[test]
fn confirming_dormant_spammer_lifts_neighbors_and_cell() {
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let o = common::run_service_loop(dir.path());
    eprintln!(
        "target {} neighbours {} rose {}/{} mates {} mean rank {:.1} -> {:.1}",
        o.target, o.neighbors, o.rose, o.expected_rise, o.mates, o.mean_rank_before, o.mean_rank_after
    );
    assert!(o.neighbors > 0);
    assert_eq!(o.oracle_mismatches, 0);
    assert_eq!(o.decreased, 0);
    assert!(o.expected_rise >= 1);
    assert_eq!(o.rose, o.expected_rise);
    assert!(o.mean_rank_after < o.mean_rank_before);
    assert!(o.version_after > o.version_before);
    assert!(started.elapsed().as_secs() < 60);
}
