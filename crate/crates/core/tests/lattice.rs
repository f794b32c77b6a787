mod common;

#[test]
fn zeroed_extension_weights_reduce_to_the_base_objective() {
    let gaps = common::lattice_gaps(20);
    assert_eq!(gaps.len(), common::lattice_edges().len());
    for (kind, base, gap) in gaps {
        assert!(gap < 1e-6, "{kind} -> {base}: {gap:e}");
    }
}
