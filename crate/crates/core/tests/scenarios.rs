use std::path::PathBuf;

use uwlink_core::sim::Scenario;
use uwlink_core::validation::{
    absent_address_scenario, multi_point_scenario, single_point_scenario,
};

fn load(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name);
    Scenario::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn shipped_scenarios_match_builders() {
    assert_eq!(load("single_point_9600.json"), single_point_scenario(9600));
    assert_eq!(
        load("single_point_115200.json"),
        single_point_scenario(115_200)
    );
    assert_eq!(load("multi_point.json"), multi_point_scenario());
    assert_eq!(load("absent_address.json"), absent_address_scenario());
}

#[test]
fn collision_scenario_loads() {
    let sc = load("collision.json");
    assert!(!sc.collision_injections.is_empty());
}

#[test]
#[ignore]
fn regenerate_scenario_files() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    for (name, sc) in [
        ("single_point_9600.json", single_point_scenario(9600)),
        ("single_point_115200.json", single_point_scenario(115_200)),
        ("multi_point.json", multi_point_scenario()),
        ("absent_address.json", absent_address_scenario()),
    ] {
        std::fs::write(dir.join(name), sc.to_json() + "\n").unwrap();
    }
}
