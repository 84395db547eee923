//! The files under `assets/fixtures` are generated from `osmag_nav::fixtures`.
//! Run with `UPDATE_FIXTURES=1` to rewrite them after changing the builders.

use std::path::PathBuf;

use osmag_nav::fixtures::asset_files;

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets/fixtures")
}

#[test]
fn shipped_fixtures_match_builders() {
    let update = std::env::var_os("UPDATE_FIXTURES").is_some();
    for (name, content) in asset_files() {
        let path = dir().join(name);
        if update {
            std::fs::write(&path, &content).unwrap();
            continue;
        }
        let on_disk = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(on_disk == content, "{name} is stale; rerun with UPDATE_FIXTURES=1");
    }
}

#[test]
fn shipped_experiment_loads() {
    let exp = osmag_nav::Experiment::load(&dir().join("five_room_experiment.json")).unwrap();
    assert_eq!(exp.starts.len(), 5);
    assert!(!exp.queries.is_empty());
}
