use std::path::Path;

use sparse_kernel::studies::{script, StudyConfig, SCRIPTS, STUDY_NAMES};

fn workspace_root() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR")).parent().unwrap().parent().unwrap()
}

#[test]
fn bench_configs_equal_the_defaults() {
    for s in &SCRIPTS {
        let path = workspace_root().join(s.config);
        let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let parsed = StudyConfig::from_json(&text).unwrap();
        assert_eq!(parsed.name(), s.name);
        assert_eq!(parsed, StudyConfig::default_for(s.name).unwrap(), "{} drifted from the defaults", s.config);
    }
}

#[test]
fn every_criterion_has_exactly_one_study() {
    for c in 1..=10 {
        let owners: Vec<&str> = SCRIPTS.iter().filter(|s| s.criteria.contains(&c)).map(|s| s.name).collect();
        assert_eq!(owners.len(), 1, "criterion {c} is run by {owners:?}");
    }
    let names: Vec<&str> = SCRIPTS.iter().map(|s| s.name).collect();
    assert_eq!(names, STUDY_NAMES);
}

#[test]
fn unknown_study_is_an_error() {
    assert!(script("fig9-analog").is_err());
    assert!(sparse_kernel::studies::run_study("fig9-analog").is_err());
    assert_eq!(script("table1-analog").unwrap().criteria, &[8]);
}
