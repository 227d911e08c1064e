//! Layered configuration: explicit overrides (command-line flags) beat
//! `GRAPHCLUB_*` environment variables, which beat a `key = value` file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::Value;

use crate::ann::SearchMode;
use crate::error::{Error, Result};
use crate::knitting::HeuristicParams;
use crate::pipeline::PipelineParams;
use crate::svm::{ClassifierSpec, Kernel};

pub const ENV_PREFIX: &str = "GRAPHCLUB_";

/// Recognized keys and their defaults.
pub const KEYS: &[(&str, &str)] = &[
    ("n_clusters", "300"),
    ("cluster_iters", "5"),
    ("seed", "0"),
    ("mode", "exact"),
    ("nn", "4"),
    ("reach_scale", "1.0"),
    ("max_same_class_neigh", "3"),
    ("neigh_limit", "4"),
    ("ci_init", "e"),
    ("ce_init", "e^4"),
    ("ci_reassess", "e^1.5"),
    ("ce_reassess", "1.0"),
    ("gs_edge_cut", "3.01"),
    ("gc_edge_cut", "3.20"),
    ("max_coarsen_iters", "10"),
    ("ens_iters", "0"),
    ("kink_termination", "false"),
    ("kink_theta", "0.2"),
    ("kernel", "linear"),
    ("c", "1.0"),
    ("tol", "0.001"),
    ("max_passes", "100"),
    ("gamma", "auto"),
    ("degree", "3"),
    ("coef0", "0.0"),
    ("cache_mb", "200"),
    ("endpoint", "127.0.0.1:7070"),
    ("workers", "1"),
    ("protocol", "1"),
    ("timeout_ms", "60000"),
    ("train_fraction", "0.25"),
    ("label_column", "last"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

fn check_key(key: &str) -> Result<()> {
    if KEYS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(Error::invalid(format!("unknown config key `{key}`")))
    }
}

/// Parses a real number, also accepting `e^x` and `e`.
pub fn parse_real(s: &str) -> Option<f64> {
    let s = s.trim();
    if s == "e" {
        return Some(std::f64::consts::E);
    }
    if let Some(exp) = s.strip_prefix("e^") {
        return exp.trim().parse::<f64>().ok().map(f64::exp);
    }
    s.parse().ok()
}

impl Config {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_file_str(text: &str) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for (row, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(row + 1, "expected `key = value`"))?;
            let key = k.trim().to_string();
            check_key(&key).map_err(|_| Error::parse(row + 1, format!("unknown config key `{key}`")))?;
            out.push((key, v.trim().to_string()));
        }
        Ok(out)
    }

    /// Builds the effective config from the three layers.
    pub fn layered(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let mut cfg = Config::default();
        if let Some(path) = file {
            for (k, v) in Self::parse_file_str(&fs::read_to_string(path)?)? {
                cfg.values.insert(k, v);
            }
        }
        for (name, v) in env {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
            let key = rest.to_ascii_lowercase();
            if key == "config" || key == "log" {
                continue;
            }
            check_key(&key).map_err(|_| Error::invalid(format!("unknown environment variable {name}")))?;
            cfg.values.insert(key, v);
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Layers the process environment and an optional file under `overrides`.
    pub fn from_env(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        Self::layered(file, std::env::vars(), overrides)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        check_key(key)?;
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key);
        raw.trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad value `{raw}` for `{key}`")))
    }

    pub fn real(&self, key: &str) -> Result<f64> {
        let raw = self.raw(key);
        parse_real(raw).ok_or_else(|| Error::invalid(format!("bad value `{raw}` for `{key}`")))
    }

    pub fn heuristic_params(&self) -> Result<HeuristicParams> {
        let p = HeuristicParams {
            nn: self.get("nn")?,
            reach_scale: self.real("reach_scale")?,
            max_same_class_neigh: self.get("max_same_class_neigh")?,
            neigh_limit: self.get("neigh_limit")?,
            ci_init: self.real("ci_init")?,
            ce_init: self.real("ce_init")?,
            ci_reassess: self.real("ci_reassess")?,
            ce_reassess: self.real("ce_reassess")?,
            gs_edge_cut: self.real("gs_edge_cut")?,
            gc_edge_cut: self.real("gc_edge_cut")?,
            max_coarsen_iters: self.get("max_coarsen_iters")?,
            ens_iters: self.get("ens_iters")?,
            kink_termination: self.get("kink_termination")?,
            kink_theta: self.real("kink_theta")?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn search_mode(&self) -> Result<SearchMode> {
        self.get("mode")
    }

    pub fn pipeline_params(&self) -> Result<PipelineParams> {
        Ok(PipelineParams {
            n_clusters: self.get("n_clusters")?,
            cluster_iters: self.get("cluster_iters")?,
            seed: self.get("seed")?,
            mode: self.search_mode()?,
            heuristic: self.heuristic_params()?,
        })
    }

    pub fn classifier_spec(&self) -> Result<ClassifierSpec> {
        let gamma = match self.raw("gamma").trim() {
            "auto" => 0.0,
            _ => self.real("gamma")?,
        };
        let kernel = match self.raw("kernel").trim() {
            "linear" => Kernel::Linear,
            "rbf" => Kernel::Rbf { gamma },
            "poly" | "polynomial" => Kernel::Polynomial {
                degree: self.get("degree")?,
                gamma,
                coef0: self.real("coef0")?,
            },
            other => return Err(Error::invalid(format!("unknown kernel `{other}`"))),
        };
        let spec = ClassifierSpec {
            kernel,
            c: self.real("c")?,
            tol: self.real("tol")?,
            max_passes: self.get("max_passes")?,
            cache_mb: self.get("cache_mb")?,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Label column index for a row of `arity` fields.
    pub fn label_column(&self, arity: usize) -> Result<usize> {
        match self.raw("label_column").trim() {
            "last" => Ok(arity.saturating_sub(1)),
            _ => self.get("label_column"),
        }
    }

    pub fn to_json(&self) -> Value {
        Value::Object(self.values.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect())
    }

    /// Renders as a config file that [`Config::layered`] reads back.
    pub fn to_file_string(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Path of the sidecar that records the config for formats without a
    /// header slot (CSV, LIBSVM).
    pub fn sidecar_path(artifact: &Path) -> PathBuf {
        let mut s = artifact.as_os_str().to_owned();
        s.push(".config");
        PathBuf::from(s)
    }

    pub fn write_sidecar(&self, artifact: &Path) -> Result<()> {
        fs::write(Self::sidecar_path(artifact), self.to_file_string())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(k: &str, v: &str) -> (String, String) {
        (k.to_string(), v.to_string())
    }

    #[test]
    fn defaults_mirror_heuristic_defaults() {
        let cfg = Config::default();
        assert_eq!(cfg.heuristic_params().unwrap(), HeuristicParams::default());
        assert_eq!(cfg.classifier_spec().unwrap(), ClassifierSpec::default());
    }

    #[test]
    fn precedence() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.conf");
        fs::write(&file, "# fixture\nnn = 5\nseed = 1 # trailing\nc = 2\n").unwrap();
        let env = vec![kv("GRAPHCLUB_SEED", "2"), kv("GRAPHCLUB_C", "3"), kv("PATH", "/bin")];
        let cfg = Config::layered(Some(&file), env, &[kv("c", "4")]).unwrap();
        assert_eq!(cfg.get::<usize>("nn").unwrap(), 5);
        assert_eq!(cfg.get::<u64>("seed").unwrap(), 2);
        assert_eq!(cfg.real("c").unwrap(), 4.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Config::parse_file_str("bogus = 1").is_err());
        assert!(Config::layered(None, vec![kv("GRAPHCLUB_BOGUS", "1")], &[]).is_err());
        assert!(Config::default().set("bogus", "1").is_err());
    }

    #[test]
    fn file_roundtrip() {
        let mut cfg = Config::default();
        cfg.set("gs_edge_cut", "-inf").unwrap();
        let parsed = Config::parse_file_str(&cfg.to_file_string()).unwrap();
        let back = Config::layered(None, Vec::new(), &parsed).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.real("gs_edge_cut").unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn exponent_notation() {
        assert_eq!(parse_real("e^4"), Some(4f64.exp()));
        assert_eq!(parse_real("e"), Some(std::f64::consts::E));
        assert_eq!(parse_real("3.2"), Some(3.2));
        assert_eq!(parse_real("x"), None);
    }
}
