use fleetlab::analysis::distributions::{chi_square_sf, student_t_cdf, student_t_quantile};
use fleetlab::analysis::{srm_check, welch_test, AnalysisError, SRM_THRESHOLD};

#[path = "fixtures/stats_fixture.rs"]
mod stats_fixture;

fn close(got: f64, want: f64) -> bool {
    (got - want).abs() <= 1e-10 * want.abs().max(1.0)
}

#[test]
fn welch_matches_reference() {
    for (i, &(a, b, delta, lo, hi, p, t, df)) in stats_fixture::WELCH.iter().enumerate() {
        let r = welch_test(a, b).unwrap();
        for (name, got, want) in [
            ("delta", r.delta, delta),
            ("ci_low", r.ci_low, lo),
            ("ci_high", r.ci_high, hi),
            ("p", r.p_value, p),
            ("t", r.t, t),
            ("df", r.df, df),
        ] {
            assert!(close(got, want), "case {i} {name}: {got} vs {want}");
        }
    }
}

#[test]
fn srm_matches_reference() {
    for (i, &(observed, fractions, chi, p)) in stats_fixture::SRM.iter().enumerate() {
        let r = srm_check(observed, fractions).unwrap();
        assert!(
            close(r.chi_square, chi),
            "case {i} chi2: {} vs {chi}",
            r.chi_square
        );
        assert!(close(r.p_value, p), "case {i} p: {} vs {p}", r.p_value);
        assert_eq!(r.flagged, p < SRM_THRESHOLD);
    }
}

#[test]
fn welch_needs_two_per_group() {
    assert!(matches!(
        welch_test(&[1.0], &[1.0, 2.0]),
        Err(AnalysisError::InsufficientSample { a: 1, b: 2 })
    ));
}

#[test]
fn welch_constant_samples() {
    let r = welch_test(&[2.0, 2.0, 2.0], &[3.0, 3.0]).unwrap();
    assert_eq!(r.delta, 1.0);
    assert_eq!(r.p_value, 0.0);
    let r = welch_test(&[2.0, 2.0], &[2.0, 2.0]).unwrap();
    assert_eq!(r.p_value, 1.0);
}

#[test]
fn srm_shape_mismatch() {
    assert!(srm_check(&[1, 2, 3], &[0.5, 0.5]).is_err());
}

#[test]
fn t_quantile_inverts_cdf() {
    for df in [1.0, 2.5, 7.0, 30.0, 400.0] {
        for p in [0.001, 0.025, 0.3, 0.5, 0.9, 0.975, 0.9999] {
            let q = student_t_quantile(p, df);
            assert!((student_t_cdf(q, df) - p).abs() < 1e-12, "df {df} p {p}");
        }
    }
}

#[test]
fn chi_square_tail_known_values() {
    // Critical values from standard tables.
    assert!((chi_square_sf(3.841_458_820_694_124, 1.0) - 0.05).abs() < 1e-12);
    assert!((chi_square_sf(5.991_464_547_107_979, 2.0) - 0.05).abs() < 1e-12);
    assert_eq!(chi_square_sf(0.0, 3.0), 1.0);
}
