use sibp_demo::session::{stick_report, Session, K_O};

#[test]
fn training_improves_objective_and_recovers_factors() {
    let mut s = Session::new(3, 120).unwrap();
    let p = s.step(40);
    assert_eq!(p.sweeps, 40);
    assert!(p.trace.windows(2).all(|w| w[1] >= w[0] - 1e-8 * w[0].abs()));
    let good = p.cosines.iter().filter(|&&c| c >= 0.9).count();
    assert!(good >= p.cosines.len() - 1, "{:?}", p.cosines);
}

#[test]
fn planted_pairs_are_disambiguated() {
    let mut s = Session::new(3, 120).unwrap();
    s.step(40);
    let report = s.annotate_planted(&[(0, K_O), (2, K_O + 2)], 9).unwrap();
    assert_eq!(report.nu.len(), 8);
    assert_eq!(report.named.len(), 2);
    for r in &report.named {
        assert!(r.correct, "{r:?}");
        assert_eq!(r.patch, r.planted_patch);
    }
    assert!(s.annotate_planted(&[(K_O, 0)], 1).is_err());
    assert!(s.annotate_planted(&[], 1).is_err());
}

#[test]
fn stick_explorer_matches_single_stick_exactness() {
    let r = stick_report(&[(2.0, 3.0)], 1).unwrap();
    assert_eq!(r.q, vec![1.0]);
    // psi(3) - psi(5) = (1 + 1/2) - (1 + 1/2 + 1/3 + 1/4)
    assert!((r.value + 7.0 / 12.0).abs() < 1e-12);
    assert!(stick_report(&[(1.0, 1.0)], 2).is_err());
}
