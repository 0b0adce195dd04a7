//! Router configuration: one TOML (or JSON) document holding the model pool,
//! prices and router parameters.
//!
//! ```toml
//! version = 1
//! seed = 7
//!
//! [[pool]]
//! model_id = "deepseek-v3"
//! endpoint = "https://api.deepseek.com/v1"
//! price_per_million_tokens = 1.10
//! capabilities = ["math", "code"]
//! api_key_env = "DEEPSEEK_API_KEY"
//!
//! [router]
//! k = 2
//! layers = 2
//! boot_budget = 200
//! lambda = 0.0
//! selector_model = "deepseek-v3"
//! aggregator_model = "deepseek-v3"
//! max_final_tokens = 4096
//! request_timeout_secs = 60
//! ```
//!
//! Selector and aggregator models may live in the pool or in an optional
//! `[[auxiliary]]` array that is never probed.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::types::{ModelSpec, Query};

pub const CONFIG_VERSION: u32 = 1;

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn default_timeout() -> f64 {
    60.0
}

fn default_selector_max_tokens() -> u32 {
    512
}

fn default_max_final_tokens() -> u32 {
    4096
}

/// Routing parameters (the `[router]` table).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouterParams {
    /// Top-k selection width.
    pub k: usize,
    /// Number of generate → rank → aggregate rounds.
    pub layers: usize,
    /// Completion tokens streamed per boot probe before cancelling.
    pub boot_budget: u32,
    /// Consistency-vs-cost weight, in score points per currency unit.
    #[serde(default)]
    pub lambda: f64,
    pub selector_model: String,
    pub aggregator_model: String,
    #[serde(default = "default_max_final_tokens")]
    pub max_final_tokens: u32,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: f64,
    #[serde(default = "default_selector_max_tokens")]
    pub selector_max_tokens: u32,
    /// Sampling temperature sent with every request; provider default when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f32>,
}

/// A validated configuration. Construct with [`load_config`] or
/// [`RouterConfig::validated`]; never mutated afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouterConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    /// Seed for label randomization (and anything else stochastic in a route).
    #[serde(default)]
    pub seed: u64,
    /// Mock script file for `mock://` endpoints, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_scripts: Option<PathBuf>,
    pub pool: Vec<ModelSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub auxiliary: Vec<ModelSpec>,
    pub router: RouterParams,
}

/// Per-call parameter substitution used by sweeps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overrides {
    pub k: Option<usize>,
    pub layers: Option<usize>,
    pub boot_budget: Option<u32>,
}

/// Input format of a configuration document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

impl ConfigFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => ConfigFormat::Json,
            _ => ConfigFormat::Toml,
        }
    }
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

/// Parses and validates a configuration document.
pub fn load_config(source: &str, format: ConfigFormat) -> Result<RouterConfig, ConfigError> {
    let config: RouterConfig = match format {
        ConfigFormat::Toml => toml::from_str(source).map_err(|e| ConfigError::Parse(e.to_string()))?,
        ConfigFormat::Json => {
            serde_json::from_str(source).map_err(|e| ConfigError::Parse(e.to_string()))?
        }
    };
    config.validated()
}

/// Reads a config file; a relative `mock_scripts` path is resolved against
/// the file's directory.
pub fn load_config_file(path: &Path) -> Result<RouterConfig, ConfigError> {
    let source = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut config = load_config(&source, ConfigFormat::from_path(path))?;
    if let Some(mocks) = &config.mock_scripts {
        if mocks.is_relative() {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            config.mock_scripts = Some(base.join(mocks));
        }
    }
    Ok(config)
}

impl RouterConfig {
    /// Builds a config from parts and validates it.
    pub fn new(pool: Vec<ModelSpec>, router: RouterParams) -> Result<Self, ConfigError> {
        RouterConfig {
            version: CONFIG_VERSION,
            seed: 0,
            mock_scripts: None,
            pool,
            auxiliary: Vec::new(),
            router,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self, ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(invalid(
                "version",
                format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version),
            ));
        }
        if self.pool.is_empty() {
            return Err(invalid("pool", "pool must contain at least one model"));
        }
        let mut seen = HashSet::new();
        for (section, models) in [("pool", &self.pool), ("auxiliary", &self.auxiliary)] {
            for (i, m) in models.iter().enumerate() {
                let field = |name: &str| format!("{section}[{i}].{name}");
                if m.model_id.trim().is_empty() {
                    return Err(invalid(field("model_id"), "model_id must be non-empty"));
                }
                if !seen.insert(m.model_id.as_str()) {
                    return Err(invalid(
                        field("model_id"),
                        format!("duplicate model_id '{}'", m.model_id),
                    ));
                }
                if m.price_per_million_tokens < rust_decimal::Decimal::ZERO {
                    return Err(invalid(
                        field("price_per_million_tokens"),
                        "price_per_million_tokens must be ≥ 0",
                    ));
                }
                let scheme_ok = ["http://", "https://", "mock://"]
                    .iter()
                    .any(|s| m.endpoint.starts_with(s) && m.endpoint.len() > s.len());
                if !scheme_ok {
                    return Err(invalid(
                        field("endpoint"),
                        format!(
                            "endpoint '{}' must be an http(s) URL or mock://<script>",
                            m.endpoint
                        ),
                    ));
                }
            }
        }

        let r = &self.router;
        let n = self.pool.len();
        if r.k == 0 {
            return Err(invalid("router.k", "k must be ≥ 1"));
        }
        if r.k > n {
            return Err(invalid(
                "router.k",
                format!("k exceeds pool size (k = {}, pool has {n} models)", r.k),
            ));
        }
        if r.layers == 0 {
            return Err(invalid("router.layers", "layers must be ≥ 1"));
        }
        if r.boot_budget == 0 {
            return Err(invalid("router.boot_budget", "boot_budget must be ≥ 1"));
        }
        if r.max_final_tokens == 0 {
            return Err(invalid("router.max_final_tokens", "max_final_tokens must be ≥ 1"));
        }
        if r.selector_max_tokens == 0 {
            return Err(invalid("router.selector_max_tokens", "selector_max_tokens must be ≥ 1"));
        }
        if !(r.lambda.is_finite() && r.lambda >= 0.0) {
            return Err(invalid("router.lambda", "lambda must be a finite number ≥ 0"));
        }
        if !(r.request_timeout_secs.is_finite() && r.request_timeout_secs > 0.0) {
            return Err(invalid(
                "router.request_timeout_secs",
                "request_timeout_secs must be > 0",
            ));
        }
        if self.model(&r.selector_model).is_none() {
            return Err(invalid(
                "router.selector_model",
                format!("selector_model '{}' is not defined in pool or auxiliary", r.selector_model),
            ));
        }
        if self.model(&r.aggregator_model).is_none() {
            return Err(invalid(
                "router.aggregator_model",
                format!(
                    "aggregator_model '{}' is not defined in pool or auxiliary",
                    r.aggregator_model
                ),
            ));
        }
        Ok(self)
    }

    /// Looks a model up in the pool, then in the auxiliary list.
    pub fn model(&self, model_id: &str) -> Option<&ModelSpec> {
        self.pool
            .iter()
            .chain(self.auxiliary.iter())
            .find(|m| m.model_id == model_id)
    }

    pub fn selector(&self) -> &ModelSpec {
        self.model(&self.router.selector_model)
            .expect("validated config resolves selector_model")
    }

    pub fn aggregator(&self) -> &ModelSpec {
        self.model(&self.router.aggregator_model)
            .expect("validated config resolves aggregator_model")
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.router.request_timeout_secs)
    }

    /// Copy with per-call parameters substituted, re-validated.
    pub fn with_overrides(&self, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut next = self.clone();
        if let Some(k) = overrides.k {
            next.router.k = k;
        }
        if let Some(layers) = overrides.layers {
            next.router.layers = layers;
        }
        if let Some(budget) = overrides.boot_budget {
            next.router.boot_budget = budget;
        }
        next.validated()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }
}

/// Models eligible for a query, plus whether the capability filter fell back
/// to the whole pool. Pool order is preserved.
pub fn eligible_models(query: &Query, pool: &[ModelSpec]) -> (Vec<ModelSpec>, bool) {
    if query.required_capabilities.is_empty() {
        return (pool.to_vec(), false);
    }
    let matching: Vec<ModelSpec> = pool
        .iter()
        .filter(|m| !m.capabilities.is_disjoint(&query.required_capabilities))
        .cloned()
        .collect();
    if matching.is_empty() {
        tracing::warn!(
            query_id = %query.query_id,
            required = ?query.required_capabilities,
            "no pool model carries a required capability; using the full pool"
        );
        (pool.to_vec(), true)
    } else {
        (matching, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rust_decimal_macros::dec;

    fn doc(k: usize, pool_size: usize) -> String {
        let mut s = String::from("seed = 3\n");
        for i in 0..pool_size {
            s.push_str(&format!(
                "[[pool]]\nmodel_id = \"m{i}\"\nendpoint = \"mock://m{i}\"\nprice_per_million_tokens = 1.10\n\n"
            ));
        }
        s.push_str(&format!(
            "[router]\nk = {k}\nlayers = 2\nboot_budget = 200\nselector_model = \"m0\"\naggregator_model = \"m0\"\n"
        ));
        s
    }

    #[test]
    fn primary_setting_is_valid() {
        let cfg = load_config(&doc(2, 5), ConfigFormat::Toml).unwrap();
        assert_eq!(cfg.pool.len(), 5);
        assert_eq!(cfg.router.k, 2);
        assert_eq!(cfg.router.layers, 2);
        assert_eq!(cfg.router.boot_budget, 200);
        assert_eq!(cfg.router.max_final_tokens, 4096);
        assert_eq!(cfg.request_timeout(), Duration::from_secs(60));
        assert_eq!(cfg.pool[0].price_per_million_tokens, dec!(1.10));
    }

    #[test]
    fn k_zero_rejected() {
        let err = load_config(&doc(0, 5), ConfigFormat::Toml).unwrap_err();
        assert!(err.to_string().contains("k must be ≥ 1"), "{err}");
        assert!(err.to_string().contains("router.k"));
    }

    #[test]
    fn k_above_pool_rejected() {
        let err = load_config(&doc(3, 2), ConfigFormat::Toml).unwrap_err();
        assert!(err.to_string().contains("k exceeds pool size"), "{err}");
    }

    #[test]
    fn negative_price_rejected() {
        let src = doc(1, 1).replace("1.10", "-0.5");
        let err = load_config(&src, ConfigFormat::Toml).unwrap_err();
        assert!(err.to_string().contains("price_per_million_tokens"), "{err}");
    }

    #[test]
    fn duplicate_model_id_rejected() {
        let src = doc(1, 2).replace("\"m1\"", "\"m0\"");
        let err = load_config(&src, ConfigFormat::Toml).unwrap_err();
        assert!(err.to_string().contains("duplicate model_id"), "{err}");
    }

    #[test]
    fn unknown_selector_rejected() {
        let src = doc(1, 2).replace("selector_model = \"m0\"", "selector_model = \"nope\"");
        let err = load_config(&src, ConfigFormat::Toml).unwrap_err();
        assert!(err.to_string().contains("router.selector_model"), "{err}");
    }

    #[test]
    fn auxiliary_models_resolve() {
        let src = doc(1, 2).replace("selector_model = \"m0\"", "selector_model = \"judge\"")
            + "\n[[auxiliary]]\nmodel_id = \"judge\"\nendpoint = \"mock://judge\"\nprice_per_million_tokens = 0\n";
        let cfg = load_config(&src, ConfigFormat::Toml).unwrap();
        assert_eq!(cfg.selector().model_id, "judge");
        assert!(cfg.pool.iter().all(|m| m.model_id != "judge"));
    }

    #[test]
    fn schema_violation_names_field() {
        let src = doc(1, 2).replace("boot_budget = 200", "boot_budget = \"lots\"");
        let err = load_config(&src, ConfigFormat::Toml).unwrap_err();
        assert!(err.to_string().contains("boot_budget"), "{err}");
    }

    #[test]
    fn toml_round_trip() {
        let cfg = load_config(&doc(2, 5), ConfigFormat::Toml).unwrap();
        let again = load_config(&cfg.to_toml(), ConfigFormat::Toml).unwrap();
        assert_eq!(cfg, again);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(cfg, load_config(&json, ConfigFormat::Json).unwrap());
    }

    #[test]
    fn overrides_revalidate() {
        let cfg = load_config(&doc(2, 5), ConfigFormat::Toml).unwrap();
        let wide = cfg
            .with_overrides(&Overrides { k: Some(3), ..Default::default() })
            .unwrap();
        assert_eq!(wide.router.k, 3);
        assert!(cfg
            .with_overrides(&Overrides { k: Some(6), ..Default::default() })
            .is_err());
    }

    fn pool() -> Vec<ModelSpec> {
        vec![
            ModelSpec::new("a", "mock://a", dec!(1)).with_capabilities(["math"]),
            ModelSpec::new("b", "mock://b", dec!(1)).with_capabilities(["code"]),
            ModelSpec::new("c", "mock://c", dec!(1)).with_capabilities(["math", "code"]),
            ModelSpec::new("d", "mock://d", dec!(1)),
            ModelSpec::new("e", "mock://e", dec!(1)).with_capabilities(["chat"]),
        ]
    }

    #[test]
    fn eligible_without_requirements_is_full_pool() {
        let (models, fallback) = eligible_models(&Query::new("q", "hi"), &pool());
        assert_eq!(models.len(), 5);
        assert!(!fallback);
    }

    #[test]
    fn eligible_filters_by_capability() {
        let (models, fallback) = eligible_models(&Query::new("q", "hi").requiring(["math"]), &pool());
        let ids: Vec<_> = models.iter().map(|m| m.model_id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
        assert!(!fallback);
    }

    #[test]
    fn eligible_falls_back_to_pool() {
        let q = Query::new("q", "hi").requiring(["nonexistent-tag"]);
        let (models, fallback) = eligible_models(&q, &pool());
        assert_eq!(models, pool());
        assert!(fallback);
    }

    proptest::proptest! {
        #[test]
        fn eligible_is_ordered_subset(mask in proptest::collection::vec(0u8..4, 1..10), req in 0u8..4) {
            let tags = ["math", "code", "chat", "none"];
            let pool: Vec<ModelSpec> = mask.iter().enumerate()
                .map(|(i, t)| ModelSpec::new(format!("m{i}"), "mock://x", dec!(1))
                    .with_capabilities([tags[*t as usize]]))
                .collect();
            let q = Query::new("q", "x").requiring([tags[req as usize]]);
            let (models, _) = eligible_models(&q, &pool);
            proptest::prop_assert!(!models.is_empty());
            let mut cursor = 0;
            for m in &models {
                let pos = pool[cursor..].iter().position(|p| p == m);
                proptest::prop_assert!(pos.is_some());
                cursor += pos.unwrap() + 1;
            }
        }
    }
}
