//! Scripted end-to-end lifecycle run: a service starts on a cold-start
//! default table, drifted synthetic traffic flows while the raw predictor
//! is mirrored to the shadow sink, a custom table is fitted from the
//! mirrored scores and promoted via the admin endpoint, and before/after
//! distribution reports are written. Deterministic given the seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use muse_core::coldstart::{
    default_quantile_table_at, fit_beta_mixture, BetaMixtureFit, BetaMixtureFitDocument,
};
use muse_core::metrics::{binned_relative_error, BinnedComparison};
use muse_core::quantile::{
    fit_quantile_table_at, uniform_levels, SampleSet, SampleSizeWarning,
};
use muse_core::routing::RoutingConfig;
use muse_core::transforms::{QuantileTable, TableRegistry};
use muse_core::types::{ExpertSpec, PredictorRegistry, PredictorSpec};
use muse_server::backends::{build_registry, BackendDef, BackendKind};
use muse_server::service::Service;
use muse_server::sink::read_records;
use muse_server::state::EngineState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta as BetaDist, Distribution};
use serde::Serialize;
use serde_json::json;

use crate::args::LifecycleDemoArgs;
use crate::CliError;

/// The score distribution the cold-start prior is trained on.
const TRAIN_POSITIVE_RATE: f64 = 0.05;
const TRAIN_NEGATIVE: (f64, f64) = (2.0, 9.0);
const TRAIN_POSITIVE: (f64, f64) = (7.0, 2.5);

/// The drifted distribution live traffic actually follows: five times the
/// positive rate and shifted class densities.
const LIVE_POSITIVE_RATE: f64 = 0.25;
const LIVE_NEGATIVE: (f64, f64) = (2.5, 7.0);
const LIVE_POSITIVE: (f64, f64) = (8.0, 2.0);

const TRAINING_SAMPLES: usize = 40_000;
const PREDICTOR: &str = "demo-predictor";
const RAW_PREDICTOR: &str = "demo-predictor-raw";
const TABLE_REF: &str = "demo-table";

const ROUTING_DOC: &str = r#"
configVersion: demo-v0
routing:
  scoringRules:
    - description: "demo live traffic"
      condition: {}
      targetPredictorName: "demo-predictor"
  shadowRules:
    - description: "mirror raw scores for table fitting"
      condition: {}
      targetPredictorNames: ["demo-predictor-raw"]
"#;

#[derive(Debug, Serialize)]
pub struct LifecycleSummary {
    pub seed: u64,
    pub phase1_count: usize,
    pub phase2_count: usize,
    pub coldstart_jsd: f64,
    pub shadow_records_collected: usize,
    pub fit_warning: Option<SampleSizeWarning>,
    pub table_version_before: String,
    pub table_version_after: String,
    pub pre_max_relative_error: f64,
    pub pre_bins_over_plus_100pct: usize,
    pub post_max_abs_relative_error: f64,
    pub post_all_well_populated_within_wilson: bool,
}

pub struct LifecycleOutcome {
    pub pre: BinnedComparison,
    pub post: BinnedComparison,
    pub summary: LifecycleSummary,
}

struct StageFailure {
    stage: &'static str,
    message: String,
}

impl StageFailure {
    fn new(stage: &'static str, err: impl std::fmt::Display) -> Self {
        StageFailure {
            stage,
            message: err.to_string(),
        }
    }
}

impl From<StageFailure> for CliError {
    fn from(failure: StageFailure) -> Self {
        CliError::Runtime(format!("stage {}: {}", failure.stage, failure.message))
    }
}

struct MixtureSampler {
    positive_rate: f64,
    negative: BetaDist<f64>,
    positive: BetaDist<f64>,
}

impl MixtureSampler {
    fn new(positive_rate: f64, negative: (f64, f64), positive: (f64, f64)) -> Self {
        MixtureSampler {
            positive_rate,
            negative: BetaDist::new(negative.0, negative.1).expect("valid shapes"),
            positive: BetaDist::new(positive.0, positive.1).expect("valid shapes"),
        }
    }

    fn draw(&self, rng: &mut impl Rng) -> (f64, bool) {
        let label = rng.gen::<f64>() < self.positive_rate;
        let score = if label {
            self.positive.sample(rng)
        } else {
            self.negative.sample(rng)
        };
        (score.clamp(1e-9, 1.0 - 1e-9), label)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn fit_coldstart_prior(seed: u64) -> Result<BetaMixtureFit, StageFailure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = MixtureSampler::new(TRAIN_POSITIVE_RATE, TRAIN_NEGATIVE, TRAIN_POSITIVE);
    let mut scores = Vec::with_capacity(TRAINING_SAMPLES);
    let mut labels = Vec::with_capacity(TRAINING_SAMPLES);
    for _ in 0..TRAINING_SAMPLES {
        let (score, label) = sampler.draw(&mut rng);
        scores.push(score);
        labels.push(label);
    }
    fit_beta_mixture(&scores, &labels, 8, seed)
        .map_err(|err| StageFailure::new("fit-coldstart-prior", err))
}

fn build_engine(default_table: QuantileTable) -> Result<EngineState, StageFailure> {
    let stage = "start-service";
    let backend = BackendDef {
        model_id: "raw-model".to_string(),
        kind: BackendKind::LinearLogistic {
            weights: [("raw_logit".to_string(), 1.0)].into_iter().collect(),
            bias: 0.0,
        },
        default_features: BTreeMap::new(),
        latency_micros: None,
        latency_jitter_micros: None,
    };
    let backends = build_registry(&[backend]).map_err(|err| StageFailure::new(stage, err))?;

    let expert = ExpertSpec {
        model_id: "raw-model".to_string(),
        backend_ref: "raw-model".to_string(),
        undersampling_ratio: 1.0,
    };
    let predictors = PredictorRegistry::new(vec![
        PredictorSpec::new(
            PREDICTOR.to_string(),
            vec![expert.clone()],
            vec![1.0],
            TABLE_REF.to_string(),
            false,
        )
        .map_err(|err| StageFailure::new(stage, err))?,
        PredictorSpec::new(
            RAW_PREDICTOR.to_string(),
            vec![expert],
            vec![1.0],
            "identity".to_string(),
            false,
        )
        .map_err(|err| StageFailure::new(stage, err))?,
    ])
    .map_err(|err| StageFailure::new(stage, err))?;

    let mut tables = TableRegistry::new();
    tables.insert(TABLE_REF, default_table);
    tables.insert("identity", QuantileTable::identity("identity-v0"));

    let routing =
        RoutingConfig::from_yaml(ROUTING_DOC).map_err(|err| StageFailure::new(stage, err))?;
    routing
        .validate_targets(&predictors)
        .map_err(|err| StageFailure::new(stage, err))?;

    Ok(EngineState {
        routing: Arc::new(routing),
        predictors: Arc::new(predictors),
        tables: Arc::new(tables),
        backends: Arc::new(backends),
    })
}

async fn stream_phase(
    client: &reqwest::Client,
    base: &str,
    sampler: &MixtureSampler,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    count: usize,
    stage: &'static str,
) -> Result<Vec<f64>, StageFailure> {
    let mut scores = Vec::with_capacity(count);
    for i in 0..count {
        let (raw_score, _) = sampler.draw(rng);
        let body = json!({
            "event_id": format!("{prefix}-{i}"),
            "tenant": "demo-tenant",
            "features": {"raw_logit": logit(raw_score)},
        });
        let response = client
            .post(format!("{base}/v1/score"))
            .json(&body)
            .send()
            .await
            .map_err(|err| StageFailure::new(stage, err))?;
        if !response.status().is_success() {
            return Err(StageFailure::new(
                stage,
                format!("request {i} failed with status {}", response.status()),
            ));
        }
        let value: serde_json::Value = response
            .json()
            .await
            .map_err(|err| StageFailure::new(stage, err))?;
        scores.push(value["score"].as_f64().unwrap_or(f64::NAN));
    }
    Ok(scores)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let content = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    std::fs::write(path, content + "\n")?;
    Ok(())
}

pub async fn run(args: &LifecycleDemoArgs) -> Result<LifecycleOutcome, CliError> {
    std::fs::create_dir_all(&args.output_dir)?;
    let out = |name: &str| -> PathBuf { args.output_dir.join(name) };
    let levels = uniform_levels(1001);
    let epoch = DateTime::<Utc>::UNIX_EPOCH;

    // Cold start: fit the prior on training-vintage scores and derive the
    // default table against the uniform reference.
    let prior = fit_coldstart_prior(args.seed)?;
    write_json(
        &out("coldstart_fit.json"),
        &BetaMixtureFitDocument::new(&prior, args.seed),
    )?;
    let table_v0 = default_quantile_table_at(&prior, &levels, &levels, "tq-v0", epoch)
        .map_err(|err| StageFailure::new("build-default-table", err))?;
    write_json(&out("table_v0.json"), &table_v0)?;

    // Service with the cold-start table live and the raw predictor in
    // shadow, so the sink accumulates pre-transformation scores.
    let state = build_engine(table_v0)?;
    let service = Arc::new(
        Service::new(state, out("shadow-sink.jsonl"), 8192)
            .map_err(|err| StageFailure::new("start-service", err))?,
    );
    service
        .warmup(args.warmup_count, args.seed.wrapping_add(1), None)
        .map_err(|err| StageFailure::new("start-service", err))?;
    let listener = tokio::net::TcpListener::bind(&args.listen)
        .await
        .map_err(|err| StageFailure::new("start-service", err))?;
    let base = format!("http://{}", listener.local_addr().map_err(CliError::runtime)?);
    let server = Arc::clone(&service);
    let server_task = tokio::spawn(async move {
        let _ = muse_server::http::serve(server, listener).await;
    });

    let client = reqwest::Client::new();
    let sampler = MixtureSampler::new(LIVE_POSITIVE_RATE, LIVE_NEGATIVE, LIVE_POSITIVE);
    let mut traffic_rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(2));

    let phase1 = stream_phase(
        &client,
        &base,
        &sampler,
        &mut traffic_rng,
        "ph1",
        args.phase1_count,
        "stream-phase1",
    )
    .await?;

    let uniform_mass = vec![0.1; 10];
    let pre = if phase1.is_empty() {
        None
    } else {
        Some(
            binned_relative_error(&phase1, &uniform_mass, 1.96)
                .map_err(|err| StageFailure::new("pre-promotion-report", err))?,
        )
    };
    if let Some(pre) = &pre {
        write_json(&out("pre_promotion.json"), pre)?;
    }

    // Shadow scores are the raw predictor's outputs: the source sample
    // the custom table is fitted from.
    service.drain_shadows();
    let records = read_records(service.sink_path())
        .map_err(|err| StageFailure::new("collect-shadow-samples", err))?;
    let shadow_scores: Vec<f64> = records
        .iter()
        .filter(|r| r.predictor_id == RAW_PREDICTOR)
        .map(|r| r.score)
        .collect();
    let shadow_records_collected = shadow_scores.len();

    let samples = SampleSet::new(shadow_scores, "demo-tenant", PREDICTOR, None)
        .map_err(|err| StageFailure::new("fit-quantile-table", err))?;
    let fitted = fit_quantile_table_at(&samples, &levels, &levels, "tq-v1", epoch)
        .map_err(|err| StageFailure::new("fit-quantile-table", err))?;
    write_json(&out("table_v1.json"), &fitted.table)?;

    // Promote through the admin endpoint, exactly as an operator would.
    let response = client
        .post(format!("{base}/admin/quantile-table/{TABLE_REF}"))
        .body(fitted.table.to_json())
        .send()
        .await
        .map_err(|err| StageFailure::new("promote", err))?;
    if !response.status().is_success() {
        return Err(StageFailure::new(
            "promote",
            format!("admin reload returned {}", response.status()),
        )
        .into());
    }

    let phase2 = stream_phase(
        &client,
        &base,
        &sampler,
        &mut traffic_rng,
        "ph2",
        args.phase2_count,
        "stream-phase2",
    )
    .await?;

    let post = binned_relative_error(&phase2, &uniform_mass, 1.96)
        .map_err(|err| StageFailure::new("post-promotion-report", err))?;
    write_json(&out("post_promotion.json"), &post)?;

    server_task.abort();

    let pre = pre.expect("phase1 was non-empty past the fit stage");
    let summary = LifecycleSummary {
        seed: args.seed,
        phase1_count: args.phase1_count,
        phase2_count: args.phase2_count,
        coldstart_jsd: prior.jsd,
        shadow_records_collected,
        fit_warning: fitted.warning,
        table_version_before: "tq-v0".to_string(),
        table_version_after: fitted.table.version().to_string(),
        pre_max_relative_error: pre
            .relative_error
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max),
        pre_bins_over_plus_100pct: pre.relative_error.iter().filter(|e| **e > 1.0).count(),
        post_max_abs_relative_error: post
            .relative_error
            .iter()
            .map(|e| e.abs())
            .fold(0.0, f64::max),
        post_all_well_populated_within_wilson: post.well_populated_within_wilson(5.0),
    };
    write_json(&out("summary.json"), &summary)?;

    Ok(LifecycleOutcome { pre, post, summary })
}
