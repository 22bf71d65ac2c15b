use std::path::PathBuf;

use ice_core::experiments::{commute_world, desk_world, Fig2Config, Table1Config};
use ice_core::io::{load_world, read_json, write_json};
use serde::{de::DeserializeOwned, Serialize};
use std::fmt::Debug;

fn path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

// Set ICE_WRITE_CONFIGS=1 to refresh the shipped files from the code defaults.
fn check<T: Serialize + DeserializeOwned + PartialEq + Debug>(name: &str, expected: &T) {
    let p = path(name);
    if std::env::var_os("ICE_WRITE_CONFIGS").is_some() {
        write_json(&p, expected).unwrap();
    }
    let got: T = read_json(&p).unwrap();
    assert_eq!(&got, expected, "{name} is out of date");
}

#[test]
fn shipped_configs_match_defaults() {
    check("desk.json", &desk_world());
    check("commute.json", &commute_world());
    check("fig2.json", &Fig2Config::default());
    check("table1.json", &Table1Config::default());
}

#[test]
fn world_configs_load() {
    for name in ["desk.json", "commute.json", "mg1.json"] {
        let world = load_world(&path(name)).unwrap();
        world.build().unwrap();
    }
}
