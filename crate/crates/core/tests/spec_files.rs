use std::path::Path;

use teamfield::spec::{load_spec, GameSpec};
use teamfield::{fixtures, Error};

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

#[test]
fn fixture_files_match_builtin_fixtures() {
    let pairs = [
        (
            "mf_mismatch.json",
            GameSpec::Static(fixtures::mf_mismatch()),
        ),
        (
            "coordination.json",
            GameSpec::Static(fixtures::coordination()),
        ),
        ("spread.json", GameSpec::Static(fixtures::spread())),
        (
            "crowd_avoidance.json",
            GameSpec::Dynamic(fixtures::crowd_avoidance()),
        ),
        ("decoupled.json", GameSpec::Dynamic(fixtures::decoupled())),
        (
            "copy_action.json",
            GameSpec::Dynamic(fixtures::copy_action_dynamic(2)),
        ),
    ];
    for (name, expected) in pairs {
        let (spec, report) = load_spec(&fixture(name), false).unwrap();
        assert!(report.is_valid(), "{name}: {report}");
        assert_eq!(spec, expected, "{name}");
    }
}

#[test]
fn specs_round_trip_through_json() {
    for name in [
        "mf_mismatch.json",
        "spread.json",
        "crowd_avoidance.json",
        "decoupled.json",
    ] {
        let (spec, _) = load_spec(&fixture(name), false).unwrap();
        let text = spec.to_json_string().unwrap();
        let back = GameSpec::from_json_str(&text, Path::new(name)).unwrap();
        assert_eq!(spec, back, "{name}");
    }
}

#[test]
fn invalid_spec_needs_force() {
    let path = fixture("broken.json");
    let err = load_spec(&path, false).unwrap_err();
    assert!(matches!(err, Error::Validation(_)), "{err}");
    let (_, report) = load_spec(&path, true).unwrap();
    assert!(!report.is_valid());
    assert!(report.mentions("prior"));
}

#[test]
fn missing_file_names_the_path() {
    let err = load_spec(Path::new("/no/such/spec.json"), false).unwrap_err();
    assert!(err.to_string().contains("/no/such/spec.json"), "{err}");
}
