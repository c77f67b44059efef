use microteleop_core::scenarios::{bead_push, bubble_manipulation, cell_penetration};
use microteleop_core::teleop::Tether;
use microteleop_io::config::{emit_config, parse_config, ConfigError, SCHEMA_VERSION};
use nalgebra::Vector3;

fn leaves(v: &toml::Value) -> usize {
    match v {
        toml::Value::Table(t) => t.values().map(leaves).sum(),
        _ => 1,
    }
}

#[test]
fn minimal_document_gets_every_default() {
    let parsed = parse_config("scenario = \"bead_push\"\n").unwrap();
    assert_eq!(parsed.config, bead_push());
    // everything but the scenario name is a default
    let full: toml::Table = emit_config(&bead_push()).parse().unwrap();
    assert_eq!(parsed.defaults.len(), leaves(&toml::Value::Table(full)) - 1);
    let keys: Vec<&str> = parsed.defaults.iter().map(|d| d.key.as_str()).collect();
    for k in ["schema", "duration", "teleop.dt", "teleop.scaling.force", "teleop.force_gains.f_max"] {
        assert!(keys.contains(&k), "{k} not reported");
    }
    let dt = parsed.defaults.iter().find(|d| d.key == "teleop.dt").unwrap();
    assert_eq!(dt.value.parse::<f64>().unwrap(), 1e-3);
}

#[test]
fn overridden_keys_are_not_reported_as_defaults() {
    let parsed = parse_config("schema = 1\nscenario = \"bead_push\"\n[teleop]\ndt = 5e-4\n").unwrap();
    assert_eq!(parsed.config.teleop.dt, 5e-4);
    assert!(parsed.defaults.iter().all(|d| d.key != "teleop.dt" && d.key != "schema"));
}

#[test]
fn zero_time_step_names_the_key() {
    let err = parse_config("scenario = \"bead_push\"\n[teleop]\ndt = 0.0\n").unwrap_err();
    assert!(matches!(err, ConfigError::Range(_)), "{err:?}");
    assert!(err.to_string().contains("dt"), "{err}");
}

#[test]
fn force_scale_override() {
    for s1 in [1e6, 1e3] {
        let text = format!("scenario = \"cell_penetration\"\n[teleop.scaling]\nforce = [{s1:e}, {s1:e}, {s1:e}]\n");
        let cfg = parse_config(&text).unwrap().config;
        assert_eq!(cfg.teleop.scaling.force, Vector3::repeat(s1));
    }
}

#[test]
fn unknown_keys_are_rejected_with_their_path() {
    for (text, key) in [
        ("scenario = \"bead_push\"\ncolour = 3\n", "colour"),
        ("scenario = \"bead_push\"\n[teleop]\nfoo = 1\n", "teleop.foo"),
        ("scenario = \"bead_push\"\n[teleop.force_gains]\nk_dmp = 1.0\n", "teleop.force_gains.k_dmp"),
        ("scenario = \"bead_push\"\n[teleop.fluid]\nviscosity = 1e-3\ndensity = 1e3\ntemperature = 300.0\n", "teleop.fluid.temperature"),
    ] {
        match parse_config(text) {
            Err(ConfigError::UnknownKey(k)) => assert_eq!(k, key),
            other => panic!("{text}: {other:?}"),
        }
    }
}

#[test]
fn syntax_errors_carry_line_and_column() {
    match parse_config("scenario = \"bead_push\"\n\n[teleop]\ndt = = 1\n") {
        Err(ConfigError::Syntax { line, column, .. }) => assert_eq!((line, column), (4, 6)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_keys() {
    assert_eq!(parse_config("duration = 3.0\n"), Err(ConfigError::MissingKey("scenario".into())));
    let text = "scenario = \"bead_push\"\n[teleop.tether]\nstiffness = 1e-3\n";
    match parse_config(text) {
        Err(ConfigError::MissingKey(k)) => assert_eq!(k, "teleop.tether.anchor"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn bad_scenario_and_schema() {
    assert!(matches!(parse_config("scenario = \"juggling\"\n"), Err(ConfigError::Type { .. })));
    assert_eq!(parse_config("schema = 2\nscenario = \"bead_push\"\n"), Err(ConfigError::Schema(2)));
    assert!(matches!(parse_config("scenario = \"bead_push\"\nduration = \"long\"\n"), Err(ConfigError::Type { .. })));
    assert_eq!(SCHEMA_VERSION, 1);
}

#[test]
fn emitted_configs_parse_back_unchanged() {
    let mut tethered = bubble_manipulation();
    tethered.teleop.tether = Some(Tether { stiffness: 2.5e-3, anchor: Vector3::new(1e-5, -3e-6, 0.0) });
    tethered.teleop.channel.position_noise = 1.0 / 3.0 * 1e-8;
    tethered.teleop.channel.seed = 12345;
    tethered.teleop.dt = 7e-4;
    for cfg in [bead_push(), cell_penetration(), bubble_manipulation(), tethered] {
        let text = emit_config(&cfg);
        let back = parse_config(&text).unwrap();
        assert_eq!(back.config, cfg, "{text}");
        assert!(back.defaults.is_empty());
    }
}
