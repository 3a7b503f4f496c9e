use attractor_cli::config::{DataConfig, Starts};
use attractor_cli::{Overrides, RunConfig};
use attractor_core::models::ModelKind;

const FULL: &str = r#"
seed = 3
out = "runs/a"

[data]
source = "synthetic"
seed = 99
days = 20
level = 7.0
amplitude = 0.5
trend = { kind = "piecewise-inflection", knots = [{ index = 100, offset = 0.0 }, { index = 900, offset = 1.5 }], wander_sigma = 0.01 }
amplitude_kind = { kind = "slow-varying", swing = 0.2, cycle_days = 10.0 }
obs_noise_std = 0.05

[model]
model_kind = "nonlinear-amplitude"
obs_noise = 0.02

[reversion]
components = ["trend", "amplitude"]
variance = [0.01, 0.1]
weighted = true
lambda = 0.05
burn_in = 48

[training]
window = 960
handheld = true

[split]
index = 1200
horizon = 480

[protocol]
horizon = 480
starts = { kind = "seeded", count = 3, min_train = 200 }

[[variants]]
name = "NL"
spec = { model_kind = "nonlinear-amplitude" }

[[variants]]
name = "NL_MR"
spec = { model_kind = "nonlinear-amplitude" }
reversion = { components = ["trend"], variance = [0.01] }
"#;

#[test]
fn serialization_round_trip_is_idempotent() {
    for text in [FULL, "", "[data]\nsource = \"csv\"\npath = \"x.csv\"\n"] {
        let parsed = RunConfig::parse(text).unwrap();
        let once = parsed.to_toml();
        let reparsed = RunConfig::parse(&once).unwrap();
        assert_eq!(reparsed, parsed);
        assert_eq!(reparsed.to_toml(), once);
    }
}

#[test]
fn top_level_seed_drives_synthetic_data() {
    let cfg = RunConfig::parse(FULL).unwrap();
    match &cfg.data {
        DataConfig::Synthetic(s) => assert_eq!(s.seed, 3),
        _ => unreachable!(),
    }
    cfg.validate().unwrap();
    assert_eq!(cfg.protocol.starts, Some(Starts::Seeded { count: 3, min_train: Some(200) }));
}

#[test]
fn flags_win_over_file() {
    let mut cfg = RunConfig::parse(FULL).unwrap();
    cfg.apply(&Overrides {
        out: Some("elsewhere".into()),
        seed: Some(11),
        no_reversion: true,
        weighted_lambda: Some(0.3),
        horizon: Some(100),
        model: Some(ModelKind::LinearSeasonal),
    });
    assert_eq!(cfg.out, std::path::PathBuf::from("elsewhere"));
    assert_eq!(cfg.seed, 11);
    assert!(matches!(&cfg.data, DataConfig::Synthetic(s) if s.seed == 11));
    assert!(!cfg.reversion.enabled);
    assert_eq!(cfg.reversion.lambda, 0.3);
    assert_eq!((cfg.split.horizon, cfg.protocol.horizon), (100, 100));
    assert_eq!(cfg.model.model_kind, ModelKind::LinearSeasonal);
    assert_eq!(cfg.model.obs_noise, 0.02);
    assert!(cfg.compare_variants(None).iter().all(|v| v.reversion.is_none()));
}

#[test]
fn all_problems_reported_with_field_paths() {
    let text = FULL
        .replace("lambda = 0.05", "lambda = 0.0")
        .replace("variance = [0.01, 0.1]", "variance = [0.01, 0.1, 0.2]")
        .replace("days = 20", "days = 0")
        .replace("horizon = 480\nstarts", "horizon = 0\nstarts")
        .replace("name = \"NL_MR\"", "name = \"NL\"");
    let err = RunConfig::parse(&text).unwrap().validate().unwrap_err().to_string();
    for path in ["reversion.lambda", "reversion.variance: 3 entries", "data.days", "protocol.horizon", "variants[1].name"] {
        assert!(err.contains(path), "missing {path} in:\n{err}");
    }
}

#[test]
fn unknown_component_is_rejected() {
    let text = FULL.replace("components = [\"trend\", \"amplitude\"]", "components = [\"seasonal\"]");
    let err = RunConfig::parse(&text).unwrap().validate().unwrap_err().to_string();
    assert!(err.contains("reversion.components"), "{err}");
}

#[test]
fn inflection_starts_need_inflection_data() {
    let text = FULL.replace(
        "starts = { kind = \"seeded\", count = 3, min_train = 200 }",
        "starts = { kind = \"inflections\" }",
    );
    let err = RunConfig::parse(&text).unwrap().validate().unwrap_err().to_string();
    assert!(err.contains("protocol.starts"), "{err}");
}

#[test]
fn default_config_is_valid() {
    let cfg = RunConfig::default();
    cfg.validate().unwrap();
    assert_eq!(cfg.compare_variants(None).len(), 8);
    assert_eq!(cfg.compare_variants(Some(ModelKind::DlmFreeform)).len(), 3);
}
