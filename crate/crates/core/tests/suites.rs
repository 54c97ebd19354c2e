use smart::suites::{run_suite, Suite};

#[test]
fn rates_equivalence_and_replay_suites_pass() {
    for suite in [Suite::Rates, Suite::Equivalence, Suite::Replay] {
        let r = run_suite(suite, 1).unwrap();
        let failed: Vec<_> = r.failures().collect();
        assert!(r.passed, "{suite}: {failed:?}");
    }
}

#[test]
fn coherence_suite_flags_only_the_stated_sdca_constant() {
    let r = run_suite(Suite::Coherence, 1).unwrap();
    let failed: Vec<&str> = r.failures().map(|c| c.name.as_str()).collect();
    assert_eq!(failed, ["ridge/sdca", "ridge-strong/sdca"]);
    assert!(r.checks.len() >= 20, "{}", r.checks.len());
}

#[test]
fn suite_names_parse() {
    for s in Suite::ALL {
        assert_eq!(s.name().parse::<Suite>().unwrap(), s);
    }
    assert!("bogus".parse::<Suite>().is_err());
}
