use adalign::verify::{run_suite, sample_std, Check, Suite};

#[test]
fn suite_names_parse() {
    for suite in Suite::ALL {
        assert_eq!(suite.name().parse::<Suite>().unwrap(), suite);
    }
    assert!("everything".parse::<Suite>().is_err());
}

#[test]
fn check_bounds() {
    assert!(Check::below("a", 1e-5, 1e-4).passed());
    assert!(!Check::below("a", f64::NAN, 1e-4).passed());
    assert!(Check::within("b", 0.5, 0.35, 0.65).passed());
    assert!(!Check::within("b", 0.7, 0.35, 0.65).passed());
    assert!(Check::below("a", 2.0, 1.0).to_string().contains("FAIL"));
}

#[test]
fn sample_std_by_hand() {
    assert!((sample_std(&[1.0, 2.0, 3.0, 4.0]) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
}

#[test]
fn every_suite_passes() {
    for suite in Suite::ALL {
        let report = run_suite(suite).unwrap();
        assert!(!report.checks.is_empty());
        for check in &report.checks {
            assert!(check.passed(), "{suite}: {check}");
        }
    }
}
