use graphclub::config::{parse_real, Config};
use graphclub::knitting::HeuristicParams;
use graphclub::svm::{ClassifierSpec, Kernel};

fn kv(k: &str, v: &str) -> (String, String) {
    (k.to_string(), v.to_string())
}

#[test]
fn defaults_reproduce_the_reference_parameter_set() {
    let cfg = Config::default();
    assert_eq!(cfg.heuristic_params().unwrap(), HeuristicParams::default());
    assert_eq!(cfg.classifier_spec().unwrap(), ClassifierSpec::default());
    let p = cfg.pipeline_params().unwrap();
    assert_eq!(p.n_clusters, 300);
    assert_eq!(p.heuristic.max_coarsen_iters, 10);
}

#[test]
fn flags_beat_env_beat_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("c.conf");
    std::fs::write(&file, "n_clusters = 10 # file\nnn = 5\nkernel = rbf\n").unwrap();
    let env = vec![kv("GRAPHCLUB_N_CLUSTERS", "20"), kv("GRAPHCLUB_NN", "6"), kv("HOME", "/x")];
    let cfg = Config::layered(Some(&file), env, &[kv("n_clusters", "30")]).unwrap();
    assert_eq!(cfg.get::<usize>("n_clusters").unwrap(), 30);
    assert_eq!(cfg.get::<usize>("nn").unwrap(), 6);
    assert!(matches!(cfg.classifier_spec().unwrap().kernel, Kernel::Rbf { .. }));
}

#[test]
fn unknown_keys_are_rejected_in_every_layer() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("c.conf");
    std::fs::write(&file, "colour = blue\n").unwrap();
    assert!(Config::layered(Some(&file), vec![], &[]).is_err());
    assert!(Config::layered(None, vec![kv("GRAPHCLUB_COLOUR", "1")], &[]).is_err());
    assert!(Config::layered(None, vec![], &[kv("colour", "1")]).is_err());
    // Non-config variables sharing the prefix are tolerated.
    assert!(Config::layered(None, vec![kv("GRAPHCLUB_LOG", "debug"), kv("GRAPHCLUB_CONFIG", "x")], &[]).is_ok());
}

#[test]
fn exponential_notation() {
    assert_eq!(parse_real("e"), Some(std::f64::consts::E));
    assert_eq!(parse_real("e^4"), Some(4f64.exp()));
    assert_eq!(parse_real(" e^1.5 "), Some(1.5f64.exp()));
    assert_eq!(parse_real("3.01"), Some(3.01));
    assert_eq!(parse_real("e^x"), None);
}

#[test]
fn echoed_config_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Config::layered(None, vec![], &[kv("seed", "42"), kv("ce_init", "e^5")]).unwrap();
    let artifact = dir.path().join("model.txt");
    cfg.write_sidecar(&artifact).unwrap();
    let back = Config::layered(Some(&Config::sidecar_path(&artifact)), vec![], &[]).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(cfg.to_json()["seed"], "42");
}

#[test]
fn invalid_values_surface_at_use() {
    let cfg = Config::layered(None, vec![], &[kv("kernel", "sigmoid")]).unwrap();
    assert!(cfg.classifier_spec().is_err());
    let cfg = Config::layered(None, vec![], &[kv("nn", "0")]).unwrap();
    assert!(cfg.heuristic_params().is_err());
}
