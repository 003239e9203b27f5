mod common;

use safe_cbf_lab::harness::{HarnessError, LoadedConfig};

const MINIMAL: &str = r#"
name = "t"
plant = "acc"
x0 = [20.0, 100.0]

[kernel]
noise = 0.01
components = [
  { variance = 1.0, length_scales = [5.0, 50.0] },
  { variance = 1e-6, length_scales = [5.0, 50.0] },
]
"#;

fn parse(text: &str) -> Result<LoadedConfig, HarnessError> {
    LoadedConfig::parse(text, None)
}

#[test]
fn minimal_config_parses() {
    let c = parse(MINIMAL).unwrap();
    assert_eq!(c.config.name, "t");
    assert_eq!(c.hash.len(), 64);
    c.base_scenario().unwrap();
}

#[test]
fn unknown_top_level_key_is_rejected_with_position() {
    let text = format!("bogus = 1\n{MINIMAL}");
    let err = parse(&text).unwrap_err().to_string();
    assert!(err.contains("bogus"), "{err}");
    assert!(err.contains("line"), "{err}");
}

#[test]
fn unknown_nested_key_is_rejected() {
    let text = format!("{MINIMAL}\n[filter]\ngama_c = 2.0\n");
    let err = parse(&text).unwrap_err().to_string();
    assert!(err.contains("gama_c"), "{err}");
    assert!(err.contains("line"), "{err}");
}

#[test]
fn unknown_plant_parameter_is_rejected() {
    let text = format!("{MINIMAL}\n[truth]\nweight = 3.0\n");
    let err = parse(&text).unwrap_err().to_string();
    assert!(err.contains("weight"), "{err}");
}

#[test]
fn empty_variant_list_is_a_usage_error() {
    let text = format!("variants = []\n{MINIMAL}");
    assert!(matches!(parse(&text), Err(HarnessError::Usage(_))));
}

#[test]
fn hash_tracks_the_text() {
    let a = parse(MINIMAL).unwrap();
    let b = parse(&format!("{MINIMAL}\n# comment\n")).unwrap();
    assert_ne!(a.hash, b.hash);
    assert_eq!(a.hash, parse(MINIMAL).unwrap().hash);
}

#[test]
fn shipped_configs_load() {
    for name in ["acc.toml", "vehicle.toml"] {
        let c = common::load(name);
        let sc = c.scenario().unwrap();
        assert_eq!(sc.x0.len(), sc.nominal.state_dim());
        assert!(c.config.grid.is_some());
    }
}
