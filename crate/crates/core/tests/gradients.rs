mod common;

#[test]
fn every_weighted_term_matches_finite_differences() {
    let checks = common::gradient_suite();
    for c in &checks {
        assert!(c.compared > 0, "{} compared nothing", c.label);
        assert!(c.worst < 1e-4, "{}: relative error {:e}", c.label, c.worst);
    }
    let kinks: usize = checks.iter().map(|c| c.near_kink).sum();
    let compared: usize = checks.iter().map(|c| c.compared).sum();
    assert!(kinks * 20 < compared, "{kinks} of {compared} entries sit on kinks");
}
