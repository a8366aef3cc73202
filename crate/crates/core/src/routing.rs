//! Intent-based routing: ordered scoring rules resolve each request to
//! exactly one live predictor (first match wins), while every matching
//! shadow rule contributes mirrored predictors whose outputs go only to
//! the shadow sink.

use std::collections::HashSet;
use std::sync::Arc;

use arc_swap::ArcSwap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Event, PredictorRegistry};

/// Intent predicate. Within a field, membership in the list is an OR;
/// across fields, conditions AND together. An absent field matches
/// everything, so the empty condition is a catch-all.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleCondition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tenants: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geographies: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schemas: Option<Vec<String>>,
}

impl RuleCondition {
    /// Exact, case-sensitive string matching on the three intent fields.
    pub fn matches(&self, event: &Event) -> bool {
        let field_matches = |listed: &Option<Vec<String>>, value: &str| {
            listed
                .as_ref()
                .map_or(true, |values| values.iter().any(|v| v == value))
        };
        field_matches(&self.tenants, &event.tenant_id)
            && field_matches(&self.geographies, &event.geography)
            && field_matches(&self.schemas, &event.schema_id)
    }

    pub fn is_catch_all(&self) -> bool {
        self.tenants.is_none() && self.geographies.is_none() && self.schemas.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ScoringRule {
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub condition: RuleCondition,
    pub target_predictor_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ShadowRule {
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub condition: RuleCondition,
    pub target_predictor_names: Vec<String>,
}

/// Immutable routing snapshot: ordered scoring rules plus parallel shadow
/// rules, tagged with a config version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoutingConfig {
    pub scoring_rules: Vec<ScoringRule>,
    pub shadow_rules: Vec<ShadowRule>,
    pub config_version: String,
}

/// The bare rule lists as they appear under the `routing:` key, used by
/// embedding documents (the deployment file) as well as the standalone
/// routing document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RoutingRules {
    #[serde(default)]
    pub scoring_rules: Vec<ScoringRule>,
    #[serde(default)]
    pub shadow_rules: Vec<ShadowRule>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RoutingDocument {
    routing: RoutingRules,
    #[serde(default)]
    config_version: Option<String>,
}

/// The resolution of one request: one live predictor and zero or more
/// shadow predictors (deduplicated, in rule order).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub live_predictor: String,
    pub shadow_predictors: Vec<String>,
    pub matched_rule_description: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RoutingError {
    #[error("routing config parse error: {0}")]
    ParseError(String),
    #[error("rule {rule:?} targets unknown predictor {predictor:?}")]
    UnknownPredictor { rule: String, predictor: String },
    #[error("no scoring rule matches the request intent")]
    NoMatchingRule,
}

impl RoutingConfig {
    /// Parse the declarative YAML document. An optional top-level
    /// `configVersion` labels the snapshot; absent, a content hash is
    /// used so that distinct documents get distinct versions.
    pub fn from_yaml(document: &str) -> Result<Self, RoutingError> {
        let parsed: RoutingDocument = serde_yaml::from_str(document)
            .map_err(|err| RoutingError::ParseError(err.to_string()))?;
        let config_version = parsed
            .config_version
            .unwrap_or_else(|| format!("sha-{:016x}", fnv1a(document.as_bytes())));
        Ok(RoutingConfig::from_parts(parsed.routing, config_version))
    }

    /// Assemble a config from already-parsed rules, e.g. the routing
    /// section of a larger deployment document.
    pub fn from_parts(rules: RoutingRules, config_version: impl Into<String>) -> Self {
        RoutingConfig {
            scoring_rules: rules.scoring_rules,
            shadow_rules: rules.shadow_rules,
            config_version: config_version.into(),
        }
    }

    /// Check that every rule target resolves to a registered predictor.
    pub fn validate_targets(&self, predictors: &PredictorRegistry) -> Result<(), RoutingError> {
        for rule in &self.scoring_rules {
            if !predictors.contains(&rule.target_predictor_name) {
                return Err(RoutingError::UnknownPredictor {
                    rule: rule.description.clone(),
                    predictor: rule.target_predictor_name.clone(),
                });
            }
        }
        for rule in &self.shadow_rules {
            for target in &rule.target_predictor_names {
                if !predictors.contains(target) {
                    return Err(RoutingError::UnknownPredictor {
                        rule: rule.description.clone(),
                        predictor: target.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// A config without a catch-all is legal but every non-matching
    /// request will fail with [`RoutingError::NoMatchingRule`].
    pub fn has_catch_all(&self) -> bool {
        self.scoring_rules
            .iter()
            .any(|rule| rule.condition.is_catch_all())
    }
}

/// Stable content-derived version label for unlabeled config documents.
pub fn content_hash_version(document: &str) -> String {
    format!("sha-{:016x}", fnv1a(document.as_bytes()))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for byte in bytes {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Parse and validate a routing document against the predictor registry.
pub fn load_config(
    document: &str,
    predictors: &PredictorRegistry,
) -> Result<RoutingConfig, RoutingError> {
    let config = RoutingConfig::from_yaml(document)?;
    config.validate_targets(predictors)?;
    Ok(config)
}

/// Resolve an event's intent: the first matching scoring rule selects the
/// live predictor; all matching shadow rules contribute mirrored
/// predictors, deduplicated in encounter order.
pub fn resolve(event: &Event, config: &RoutingConfig) -> Result<RoutingDecision, RoutingError> {
    let live = config
        .scoring_rules
        .iter()
        .find(|rule| rule.condition.matches(event))
        .ok_or(RoutingError::NoMatchingRule)?;

    let mut seen = HashSet::new();
    let mut shadow_predictors = Vec::new();
    for rule in &config.shadow_rules {
        if rule.condition.matches(event) {
            for target in &rule.target_predictor_names {
                if seen.insert(target.clone()) {
                    shadow_predictors.push(target.clone());
                }
            }
        }
    }

    Ok(RoutingDecision {
        live_predictor: live.target_predictor_name.clone(),
        shadow_predictors,
        matched_rule_description: live.description.clone(),
    })
}

/// Lock-free handle to the active routing snapshot. Readers take a
/// reference-counted snapshot per request; `swap` is a single atomic
/// pointer replacement, so in-flight requests finish under the snapshot
/// they started with.
pub struct ConfigHandle {
    active: ArcSwap<RoutingConfig>,
}

impl ConfigHandle {
    pub fn new(config: RoutingConfig) -> Self {
        ConfigHandle {
            active: ArcSwap::from_pointee(config),
        }
    }

    pub fn snapshot(&self) -> Arc<RoutingConfig> {
        self.active.load_full()
    }

    /// Atomically replace the active config; returns the previous
    /// snapshot's version.
    pub fn swap(&self, config: RoutingConfig) -> String {
        let previous = self.active.swap(Arc::new(config));
        previous.config_version.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ExpertSpec, PredictorSpec};
    use proptest::prelude::*;

    /// The declarative routing example exercised throughout: bank1 gets a
    /// dedicated predictor plus a shadow candidate, the Americas share one,
    /// and a catch-all serves everyone else.
    pub const EXAMPLE_CONFIG: &str = r#"
routing:
  scoringRules:
    - description: "Custom DAG for bank1"
      condition:
        tenants: ["bank1"]
      targetPredictorName: "bank1-predictor-v1"
    - description: "Custom DAG for tenants in US or LATAM, using schema v1"
      condition:
        geographies: ["NAMER", "LATAM"]
        schemas: ["fraud_v1"]
      targetPredictorName: "america-predictor-v1"
    - description: "Default DAG for cold start clients"
      condition: {} # Catch-all
      targetPredictorName: "global-predictor-v3"
  shadowRules:
    - description: "Evaluate predictor v2 in shadow mode for bank1"
      condition:
        tenants: ["bank1"]
      targetPredictorNames: ["bank1-predictor-v2"]
"#;

    fn predictor(id: &str) -> PredictorSpec {
        PredictorSpec::new(
            id.into(),
            vec![ExpertSpec {
                model_id: "m".into(),
                backend_ref: "b".into(),
                undersampling_ratio: 1.0,
            }],
            vec![1.0],
            "identity".into(),
            false,
        )
        .unwrap()
    }

    fn example_registry() -> PredictorRegistry {
        PredictorRegistry::new(
            [
                "bank1-predictor-v1",
                "bank1-predictor-v2",
                "america-predictor-v1",
                "global-predictor-v3",
            ]
            .into_iter()
            .map(predictor)
            .collect(),
        )
        .unwrap()
    }

    fn event(tenant: &str, geography: &str, schema: &str) -> Event {
        let mut features = indexmap::IndexMap::new();
        features.insert("x".to_string(), 0.0);
        Event {
            event_id: "e".into(),
            tenant_id: tenant.into(),
            geography: geography.into(),
            schema_id: schema.into(),
            features,
            tags: Default::default(),
        }
    }

    #[test]
    fn example_document_parses() {
        let config = load_config(EXAMPLE_CONFIG, &example_registry()).unwrap();
        assert_eq!(config.scoring_rules.len(), 3);
        assert_eq!(config.shadow_rules.len(), 1);
        assert!(config.has_catch_all());
    }

    #[test]
    fn bank1_is_served_live_and_mirrored() {
        let config = load_config(EXAMPLE_CONFIG, &example_registry()).unwrap();
        let decision = resolve(&event("bank1", "EMEA", "fraud_v1"), &config).unwrap();
        assert_eq!(decision.live_predictor, "bank1-predictor-v1");
        assert_eq!(decision.shadow_predictors, vec!["bank1-predictor-v2"]);
    }

    #[test]
    fn americas_rule_requires_both_fields() {
        let config = load_config(EXAMPLE_CONFIG, &example_registry()).unwrap();
        let decision = resolve(&event("acme", "NAMER", "fraud_v1"), &config).unwrap();
        assert_eq!(decision.live_predictor, "america-predictor-v1");
        assert!(decision.shadow_predictors.is_empty());

        // Wrong schema falls through to the catch-all.
        let decision = resolve(&event("acme", "NAMER", "fraud_v2"), &config).unwrap();
        assert_eq!(decision.live_predictor, "global-predictor-v3");
    }

    #[test]
    fn catch_all_serves_everyone_else() {
        let config = load_config(EXAMPLE_CONFIG, &example_registry()).unwrap();
        let decision = resolve(&event("acme", "EMEA", ""), &config).unwrap();
        assert_eq!(decision.live_predictor, "global-predictor-v3");
        assert!(decision.shadow_predictors.is_empty());
    }

    #[test]
    fn unknown_predictor_rejected_at_load() {
        let document = r#"
routing:
  scoringRules:
    - description: "ghost"
      condition: {}
      targetPredictorName: "ghost"
"#;
        let err = load_config(document, &example_registry()).unwrap_err();
        assert!(matches!(err, RoutingError::UnknownPredictor { predictor, .. } if predictor == "ghost"));
    }

    #[test]
    fn empty_rules_always_miss() {
        let config = load_config("routing: {}\n", &example_registry()).unwrap();
        assert_eq!(
            resolve(&event("anyone", "", ""), &config).unwrap_err(),
            RoutingError::NoMatchingRule
        );
        assert!(!config.has_catch_all());
    }

    #[test]
    fn matching_is_case_sensitive_exact() {
        let config = load_config(EXAMPLE_CONFIG, &example_registry()).unwrap();
        let decision = resolve(&event("Bank1", "", ""), &config).unwrap();
        assert_eq!(decision.live_predictor, "global-predictor-v3");
    }

    #[test]
    fn duplicate_shadow_targets_deduplicated() {
        let document = r#"
routing:
  scoringRules:
    - condition: {}
      targetPredictorName: "global-predictor-v3"
  shadowRules:
    - condition: {}
      targetPredictorNames: ["bank1-predictor-v2", "bank1-predictor-v1"]
    - condition: {}
      targetPredictorNames: ["bank1-predictor-v2"]
"#;
        let config = load_config(document, &example_registry()).unwrap();
        let decision = resolve(&event("t", "", ""), &config).unwrap();
        assert_eq!(
            decision.shadow_predictors,
            vec!["bank1-predictor-v2", "bank1-predictor-v1"]
        );
    }

    #[test]
    fn version_defaults_to_content_hash() {
        let first = RoutingConfig::from_yaml(EXAMPLE_CONFIG).unwrap();
        let second = RoutingConfig::from_yaml("routing: {}\n").unwrap();
        assert_ne!(first.config_version, second.config_version);

        let labeled = RoutingConfig::from_yaml("configVersion: v7\nrouting: {}\n").unwrap();
        assert_eq!(labeled.config_version, "v7");
    }

    #[test]
    fn swap_returns_previous_version() {
        let handle = ConfigHandle::new(RoutingConfig::from_yaml("configVersion: a\nrouting: {}\n").unwrap());
        let previous = handle.swap(RoutingConfig::from_yaml("configVersion: b\nrouting: {}\n").unwrap());
        assert_eq!(previous, "a");
        assert_eq!(handle.snapshot().config_version, "b");
    }

    // Strategy for random rule conditions over a small vocabulary so that
    // matches actually occur.
    fn arbitrary_condition() -> impl Strategy<Value = RuleCondition> {
        let field = proptest::option::of(proptest::collection::vec("[a-c]", 0..3));
        (field.clone(), field.clone(), field).prop_map(|(tenants, geographies, schemas)| {
            RuleCondition {
                tenants,
                geographies,
                schemas,
            }
        })
    }

    fn arbitrary_config() -> impl Strategy<Value = RoutingConfig> {
        let scoring = proptest::collection::vec(
            (arbitrary_condition(), "[p-s]").prop_map(|(condition, target)| ScoringRule {
                description: String::new(),
                condition,
                target_predictor_name: target,
            }),
            0..6,
        );
        let shadow = proptest::collection::vec(
            (arbitrary_condition(), proptest::collection::vec("[p-s]", 0..3)).prop_map(
                |(condition, targets)| ShadowRule {
                    description: String::new(),
                    condition,
                    target_predictor_names: targets,
                },
            ),
            0..4,
        );
        (scoring, shadow).prop_map(|(scoring_rules, shadow_rules)| RoutingConfig {
            scoring_rules,
            shadow_rules,
            config_version: "prop".into(),
        })
    }

    proptest! {
        #[test]
        fn first_match_is_stable_under_tail_permutation(
            config in arbitrary_config(),
            tenant in "[a-c]",
            geography in "[a-c]",
            schema in "[a-c]",
            rotate in 0usize..5,
        ) {
            let event = event(&tenant, &geography, &schema);
            let baseline = resolve(&event, &config);
            if let Ok(decision) = &baseline {
                let matched_at = config
                    .scoring_rules
                    .iter()
                    .position(|rule| rule.condition.matches(&event))
                    .unwrap();

                // Permuting rules after the first match changes nothing.
                let mut permuted = config.clone();
                if matched_at + 1 < permuted.scoring_rules.len() {
                    let tail = &mut permuted.scoring_rules[matched_at + 1..];
                    let split = rotate % tail.len().max(1);
                    tail.rotate_left(split);
                }
                prop_assert_eq!(resolve(&event, &permuted).unwrap(), decision.clone());

                // Prepending a non-matching rule changes nothing.
                let mut prefixed = config.clone();
                prefixed.scoring_rules.insert(0, ScoringRule {
                    description: "never".into(),
                    condition: RuleCondition {
                        tenants: Some(vec!["no-such-tenant".into()]),
                        geographies: None,
                        schemas: None,
                    },
                    target_predictor_name: "q".into(),
                });
                prop_assert_eq!(resolve(&event, &prefixed).unwrap(), decision.clone());
            }
        }

        #[test]
        fn shadow_targets_equal_brute_force_scan(
            config in arbitrary_config(),
            tenant in "[a-c]",
            geography in "[a-c]",
            schema in "[a-c]",
        ) {
            let event = event(&tenant, &geography, &schema);
            if let Ok(decision) = resolve(&event, &config) {
                let mut expected: Vec<String> = Vec::new();
                for rule in &config.shadow_rules {
                    if rule.condition.matches(&event) {
                        for target in &rule.target_predictor_names {
                            if !expected.contains(target) {
                                expected.push(target.clone());
                            }
                        }
                    }
                }
                prop_assert_eq!(decision.shadow_predictors, expected);
            }
        }

        #[test]
        fn resolve_is_deterministic(
            config in arbitrary_config(),
            tenant in "[a-c]",
        ) {
            let event = event(&tenant, "a", "a");
            prop_assert_eq!(resolve(&event, &config), resolve(&event, &config));
        }
    }
}
