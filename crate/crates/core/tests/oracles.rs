mod common;

#[test]
fn sparse_cumulation_is_exact_on_random_cohorts() {
    assert_eq!(common::cumulation_mismatches(1000, 21), 0);
}

#[test]
fn cached_likelihood_matches_quadrature() {
    let worst = common::likelihood_vs_quadrature(50, 22);
    assert!(worst <= 1e-8, "{worst:e}");
}

#[test]
fn incremental_updates_match_reconstruction() {
    let worst = common::rescale_vs_reconstruction(300, 23);
    assert!(worst <= 1e-10, "{worst:e}");
}
