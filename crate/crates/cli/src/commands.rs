//! Subcommand implementations. Every command writes its primary result as
//! JSON to stdout (or to `--output` files) and exits 0 on success; input
//! problems exit 2 and runtime failures exit 3.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use muse_core::coldstart::{
    default_quantile_table, fit_beta_mixture_with, BetaMixtureFitDocument, ColdstartConfig,
};
use muse_core::metrics::{binned_relative_error, calibration_report, CalibrationReport};
use muse_core::quantile::{
    fit_quantile_table, required_samples, uniform_levels, validate_sample_size_bound, SampleSet,
    SampleSizeQuery,
};
use muse_core::search::SearchOptions;
use muse_core::transforms::posterior_correct;
use muse_core::types::Score;
use muse_server::service::Service;
use muse_server::state::load_deployment;
use serde_json::json;

use crate::args::{
    EvaluateArgs, EvaluateCalibrationArgs, EvaluateDistributionArgs, EvaluateMode,
    FitColdstartArgs, FitQuantilesArgs, LifecycleDemoArgs, SamplesizeArgs, ServeArgs,
    ValidateBoundArgs,
};
use crate::io::{detect_format, InputFormat, Window};
use crate::{lifecycle, CliError};

fn print_json(value: &impl serde::Serialize) -> Result<(), CliError> {
    let rendered = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    println!("{rendered}");
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Runtime::new().map_err(CliError::runtime)
}

pub fn serve(args: &ServeArgs) -> Result<(), CliError> {
    let document = std::fs::read_to_string(&args.config)
        .map_err(|err| CliError::Validation(format!("{}: {err}", args.config.display())))?;
    let base_dir = args
        .config
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let deployment = load_deployment(&document, &base_dir).map_err(CliError::validation)?;
    for warning in &deployment.warnings {
        eprintln!("warning: {warning}");
    }

    let service = Arc::new(
        Service::new(deployment.state, &args.sink, args.shadow_queue_depth)
            .map_err(CliError::runtime)?,
    );

    runtime()?.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.listen)
            .await
            .map_err(|err| CliError::Validation(format!("{}: {err}", args.listen)))?;
        let address = listener.local_addr().map_err(CliError::runtime)?;
        eprintln!("listening on {address}, sink {}", args.sink.display());

        // Warm-up runs off the async workers; readiness flips when done.
        let warm_service = Arc::clone(&service);
        let count = args.warmup_count;
        let seed = args.warmup_seed;
        let timeout = args.warmup_timeout_ms.map(Duration::from_millis);
        tokio::task::spawn_blocking(move || match warm_service.warmup(count, seed, timeout) {
            Ok(calls) => eprintln!("warm-up complete after {calls} calls; ready"),
            Err(err) => eprintln!("warm-up failed: {err}; service stays not-ready"),
        });

        if let Some(watched) = args.watch_routing.clone() {
            let watch_service = Arc::clone(&service);
            tokio::spawn(async move {
                watch_routing_file(watch_service, watched).await;
            });
        }

        muse_server::http::serve(service, listener)
            .await
            .map_err(CliError::runtime)
    })
}

/// Poll a routing file's mtime once a second and hot-swap on change.
async fn watch_routing_file(service: Arc<Service>, path: std::path::PathBuf) {
    let mut last_modified = None;
    loop {
        tokio::time::sleep(Duration::from_secs(1)).await;
        let Ok(metadata) = std::fs::metadata(&path) else {
            continue;
        };
        let modified = metadata.modified().ok();
        if modified == last_modified {
            continue;
        }
        last_modified = modified;
        match std::fs::read_to_string(&path) {
            Ok(document) => match service.swap_routing(&document) {
                Ok(report) => eprintln!(
                    "routing reloaded from {}: {} -> {}",
                    path.display(),
                    report.old_version,
                    report.new_version
                ),
                Err(err) => eprintln!("routing reload rejected: {err}"),
            },
            Err(err) => eprintln!("routing reload failed to read {}: {err}", path.display()),
        }
    }
}

fn load_scores(
    input: &Path,
    format: Option<InputFormat>,
    tenant: Option<&str>,
    predictor: Option<&str>,
    window: Window,
) -> Result<Vec<f64>, CliError> {
    match detect_format(input, format) {
        InputFormat::Csv => crate::io::read_scores_csv(input),
        InputFormat::Jsonl => crate::io::read_sink_scores(input, tenant, predictor, window),
    }
}

pub fn fit_quantiles(args: &FitQuantilesArgs) -> Result<(), CliError> {
    let window = Window {
        start: args.window_start,
        end: args.window_end,
    };
    let scores = load_scores(
        &args.input,
        args.format,
        Some(args.tenant.as_str()).filter(|t| *t != "unknown"),
        Some(args.predictor.as_str()).filter(|p| *p != "unknown"),
        window,
    )?;
    let samples = SampleSet::new(scores, &args.tenant, &args.predictor, window.bounds())
        .map_err(CliError::validation)?;

    if args.levels < 2 {
        return Err(CliError::Validation("need at least 2 levels".into()));
    }
    let levels = uniform_levels(args.levels);
    let reference = args.reference.quantiles(&levels)?;
    let fitted = fit_quantile_table(&samples, &reference, &levels, &args.version)
        .map_err(CliError::validation)?;

    std::fs::write(&args.output, fitted.table.to_json() + "\n")?;
    if let Some(warning) = &fitted.warning {
        eprintln!(
            "warning: {} samples fitted, {} required for alert rate {} at ±{}% (z={})",
            warning.actual,
            warning.required,
            warning.alert_rate,
            warning.relative_error * 100.0,
            warning.z
        );
    }
    print_json(&json!({
        "output": args.output.display().to_string(),
        "version": fitted.table.version(),
        "knots": fitted.table.knots(),
        "sample_count": fitted.table.sample_count(),
        "warning": fitted.warning,
    }))
}

pub fn fit_coldstart(args: &FitColdstartArgs) -> Result<(), CliError> {
    let (scores, labels) = crate::io::read_labeled_csv(&args.input)?;
    let config = ColdstartConfig {
        search: SearchOptions {
            population: args.de_population,
            generations: args.de_generations,
            mutation_factor: args.de_mutation,
            crossover_rate: args.de_crossover,
        },
        n_trials: args.trials,
        shape_min: args.shape_min,
        shape_max: args.shape_max,
        histogram_bins: args.histogram_bins,
    };
    let fit = fit_beta_mixture_with(&scores, &labels, &config, args.seed)
        .map_err(CliError::validation)?;
    let document = BetaMixtureFitDocument::new(&fit, args.seed);
    std::fs::write(
        &args.output,
        serde_json::to_string_pretty(&document).map_err(CliError::runtime)? + "\n",
    )?;

    if let Some(table_out) = &args.table_out {
        let levels = uniform_levels(args.levels);
        let reference = args.reference.quantiles(&levels)?;
        let table = default_quantile_table(&fit, &reference, &levels, &args.version)
            .map_err(CliError::validation)?;
        std::fs::write(table_out, table.to_json() + "\n")?;
    }
    print_json(&document)
}

pub fn samplesize(args: &SamplesizeArgs) -> Result<(), CliError> {
    let query = SampleSizeQuery::new(args.alert_rate, args.relative_error, args.z)
        .map_err(CliError::validation)?;
    print_json(&json!({
        "alert_rate": query.alert_rate,
        "relative_error": query.relative_error,
        "z_score": query.z_score,
        "required_samples": required_samples(&query),
    }))
}

pub fn validate_bound(args: &ValidateBoundArgs) -> Result<(), CliError> {
    let report = validate_sample_size_bound(
        args.alert_rate,
        args.relative_error,
        args.z,
        args.trials,
        args.seed,
    )
    .map_err(CliError::validation)?;
    print_json(&report)
}

fn render_calibration_table(
    without: &CalibrationReport,
    with: Option<&CalibrationReport>,
    beta: Option<f64>,
) -> String {
    let mut out = String::new();
    match (with, beta) {
        (Some(with), Some(beta)) => {
            let change = |a: f64, b: f64| {
                if a > 0.0 {
                    format!("{:+.1}%", (b - a) / a * 100.0)
                } else {
                    "n/a".to_string()
                }
            };
            out.push_str(&format!("beta = {beta}\n"));
            out.push_str("metric   without_pc     with_pc        change\n");
            out.push_str(&format!(
                "ECE      {:<14.6e} {:<14.6e} {}\n",
                without.ece,
                with.ece,
                change(without.ece, with.ece)
            ));
            out.push_str(&format!(
                "Brier    {:<14.6e} {:<14.6e} {}\n",
                without.brier,
                with.brier,
                change(without.brier, with.brier)
            ));
        }
        _ => {
            out.push_str("metric   value\n");
            out.push_str(&format!("ECE      {:.6e}\n", without.ece));
            out.push_str(&format!("Brier    {:.6e}\n", without.brier));
        }
    }
    out
}

fn evaluate_calibration(args: &EvaluateCalibrationArgs) -> Result<(), CliError> {
    let (scores, labels) = crate::io::read_labeled_csv(&args.input)?;
    let without_pc = calibration_report(&scores, &labels).map_err(CliError::validation)?;

    let with_pc = match args.beta {
        Some(beta) => {
            if !(0.0..=1.0).contains(&beta) || beta <= 0.0 {
                return Err(CliError::Validation(format!(
                    "beta {beta} outside (0, 1]"
                )));
            }
            let corrected: Vec<f64> = scores
                .iter()
                .map(|s| {
                    Score::new(*s)
                        .map(|score| posterior_correct(score, beta).value())
                        .map_err(CliError::validation)
                })
                .collect::<Result<_, _>>()?;
            Some(calibration_report(&corrected, &labels).map_err(CliError::validation)?)
        }
        None => None,
    };

    if args.table {
        let rendered = render_calibration_table(&without_pc, with_pc.as_ref(), args.beta);
        let mut stderr = std::io::stderr().lock();
        let _ = stderr.write_all(rendered.as_bytes());
    }

    match (with_pc, args.beta) {
        (Some(with_pc), Some(beta)) => {
            let pct = |a: f64, b: f64| {
                if a > 0.0 {
                    Some((b - a) / a * 100.0)
                } else {
                    None
                }
            };
            print_json(&json!({
                "beta": beta,
                "without_pc": without_pc,
                "with_pc": with_pc,
                "change_pct": {
                    "ece": pct(without_pc.ece, with_pc.ece),
                    "brier": pct(without_pc.brier, with_pc.brier),
                },
            }))
        }
        _ => print_json(&without_pc),
    }
}

fn evaluate_distribution(args: &EvaluateDistributionArgs) -> Result<(), CliError> {
    let window = Window {
        start: args.window_start,
        end: args.window_end,
    };
    let scores = load_scores(
        &args.input,
        args.format,
        args.tenant.as_deref(),
        args.predictor.as_deref(),
        window,
    )?;
    let target_mass = args.reference.decile_mass()?;
    let report =
        binned_relative_error(&scores, &target_mass, args.z).map_err(CliError::validation)?;

    if args.table {
        let mut rendered = String::from(
            "bin          expected  observed  rel_error  wilson_low  wilson_high\n",
        );
        for i in 0..report.expected_mass.len() {
            let observed = report.observed_counts[i] as f64 / report.n as f64;
            rendered.push_str(&format!(
                "[{:.1},{:.1}{}  {:<9.4} {:<9.4} {:<+9.1}% {:<11.4} {:<10.4}{}\n",
                report.bin_edges[i],
                report.bin_edges[i + 1],
                if i == 9 { "]" } else { ")" },
                report.expected_mass[i],
                observed,
                report.relative_error[i] * 100.0,
                report.wilson_low[i],
                report.wilson_high[i],
                if report.small_sample[i] { "  (small)" } else { "" },
            ));
        }
        let mut stderr = std::io::stderr().lock();
        let _ = stderr.write_all(rendered.as_bytes());
    }

    print_json(&report)
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    match &args.mode {
        EvaluateMode::Calibration(calibration) => evaluate_calibration(calibration),
        EvaluateMode::Distribution(distribution) => evaluate_distribution(distribution),
    }
}

pub fn lifecycle_demo(args: &LifecycleDemoArgs) -> Result<(), CliError> {
    let outcome = runtime()?.block_on(lifecycle::run(args))?;
    print_json(&outcome.summary)
}
