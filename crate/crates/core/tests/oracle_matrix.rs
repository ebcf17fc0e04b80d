// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use reflect_fuzz::oracles::{run_all, VulnClass};
use reflect_fuzz::txmodel::{decode_sequence, SeedPool};
use reflect_fuzz::vm::{execute_sequence, load_model};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn fire(name: &str) -> Vec<VulnClass> {
    let model = load_model(&std::fs::read_to_string(fixtures().join(format!("{name}.json"))).unwrap()).unwrap();
    let seq = decode_sequence(&std::fs::read_to_string(fixtures().join(format!("attacks/{name}.json"))).unwrap()).unwrap();
    let pool = SeedPool::default();
    let trace = execute_sequence(&model, &pool, &seq);
    run_all(&model, &trace, &pool, &[]).found()
}

#[test]
fn each_positive_fires_only_its_class() {
    for class in VulnClass::ALL {
        let name = format!("{}_positive", class.code().to_lowercase());
        assert_eq!(fire(&name), vec![class], "{name}");
    }
}

#[test]
fn negatives_fire_nothing() {
    for class in VulnClass::ALL {
        let name = format!("{}_negative", class.code().to_lowercase());
        assert_eq!(fire(&name), vec![], "{name}");
    }
}

#[test]
fn crowdsale_attack_is_ether_leak() {
    assert_eq!(fire("crowdsale"), vec![VulnClass::EL]);
}
