//! The JSON files under `configs/` are the canonical serializations of the
//! scenario builders. Regenerate them with
//! `BLESS_CONFIGS=1 cargo test -p sdeavg --test config_sync`.

use sdeavg::config::{load_config, save_config, ExperimentConfig};
use sdeavg::scenarios;
use std::path::PathBuf;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join("configs")
}

fn check_or_bless(name: &str, expected: &ExperimentConfig) {
    let path = configs_dir().join(name);
    if std::env::var("BLESS_CONFIGS").is_ok() {
        std::fs::create_dir_all(configs_dir()).unwrap();
        save_config(expected, &path).unwrap();
        return;
    }
    let on_disk = load_config(&path)
        .unwrap_or_else(|e| panic!("{name} missing or invalid ({e}); re-bless the configs"));
    assert_eq!(
        &on_disk, expected,
        "{name} is out of sync with its scenario builder"
    );
}

#[test]
fn shipped_configs_match_scenarios() {
    check_or_bless("reference.json", &scenarios::reference_scenario());
    check_or_bless("gaussian.json", &scenarios::gaussian_scenario());
    check_or_bless("ou.json", &scenarios::ou_scenario());
    check_or_bless("time_independent.json", &scenarios::time_independent_scenario());
    check_or_bless("moment_bound_01.json", &scenarios::moment_bound_scenario(0.1));
    check_or_bless("moment_bound_03.json", &scenarios::moment_bound_scenario(0.3));
    check_or_bless("moment_bound_06.json", &scenarios::moment_bound_scenario(0.6));
}
