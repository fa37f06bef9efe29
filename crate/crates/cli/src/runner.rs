//! Executes presets and writes their output files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use cmlsim::aggregators::EvaluatorKind;
use cmlsim::data::{Dataset, KnowledgeMode};
use cmlsim::games::{play_rind_sweep, server_mode_sweep, spearman, SweepPoint};
use cmlsim::simulator::{EpochTrace, Simulation, TopologyKind};

use crate::config::Settings;
use crate::output::{
    self, FinalMetrics, KnowledgeRow, KnowledgeSummary, MetricsRow, PredictionRow, Summary,
};
use crate::presets::{build_job, Job, KnowledgeJob, NamedRun};
use crate::CliError;

/// Everything one simulation of a preset produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub name: String,
    pub metrics: Vec<MetricsRow>,
    pub predictions: Vec<PredictionRow>,
    pub final_metrics: FinalMetrics,
}

fn aggregate_scope(topology: TopologyKind) -> &'static str {
    match topology {
        TopologyKind::Star => "server",
        TopologyKind::Complete => "honest_mean",
    }
}

fn trace_rows(settings: &Settings, run: &str, scope: &str, trace: &EpochTrace) -> Vec<MetricsRow> {
    let row = |scope: String, metric: &str, value: f64| MetricsRow {
        preset: settings.preset.clone(),
        seed: settings.seed,
        run: run.to_string(),
        epoch: trace.epoch + 1,
        scope,
        metric: metric.to_string(),
        value,
    };
    let mut rows: Vec<MetricsRow> = trace
        .metrics
        .iter()
        .filter(|(_, v)| v.is_finite())
        .map(|(k, &v)| row(scope.to_string(), k, v))
        .collect();
    for (id, metrics) in &trace.user_metrics {
        rows.extend(
            metrics
                .iter()
                .filter(|(_, v)| v.is_finite())
                .map(|(k, &v)| row(format!("user:{id}"), k, v)),
        );
    }
    rows
}

fn predictions(run: &str, model_name: String, model: &cmlsim::nn::Model, test: &Dataset) -> Result<Vec<PredictionRow>, CliError> {
    let truth = test
        .labels()
        .classes()
        .ok_or_else(|| cmlsim::Error::InvalidArgument("prediction dumps need class labels".into()))?;
    let predicted = model.predict(test.inputs().view())?;
    Ok(truth
        .iter()
        .zip(predicted)
        .enumerate()
        .map(|(index, (&ground_truth, prediction))| PredictionRow {
            run: run.to_string(),
            model: model_name.clone(),
            index,
            ground_truth,
            prediction,
        })
        .collect())
}

/// Runs one simulation to completion.
pub fn execute_run(settings: &Settings, run: NamedRun) -> Result<RunOutput, CliError> {
    let scope = aggregate_scope(run.config.topology.kind);
    let epochs = run.config.epochs;
    let test = run.data.validation.clone();
    let mut sim = Simulation::new(run.config, run.data)?;
    let mut metrics = Vec::new();
    let mut final_metrics = FinalMetrics::new();
    let started = Instant::now();
    while sim.epoch() < epochs {
        let trace = sim.run_epoch()?;
        log::info!(
            "{} epoch {}/{epochs} ({:.1}s){}",
            run.name,
            trace.epoch + 1,
            started.elapsed().as_secs_f64(),
            trace
                .metrics
                .get("accuracy")
                .map(|a| format!(" accuracy {a:.4}"))
                .unwrap_or_default()
        );
        final_metrics.extend(trace.metrics.iter().filter(|(_, v)| v.is_finite()).map(|(k, &v)| (k.clone(), v)));
        metrics.extend(trace_rows(settings, &run.name, scope, &trace));
    }
    let mut dumped = Vec::new();
    if run.dump_predictions {
        if let Some(global) = sim.global_model() {
            dumped.extend(predictions(&run.name, "server".into(), global, &test)?);
        } else {
            for user in sim.users().iter().filter(|u| !u.is_adversary) {
                dumped.extend(predictions(&run.name, format!("user:{}", user.id), &user.model, &test)?);
            }
        }
    }
    Ok(RunOutput {
        name: run.name,
        metrics,
        predictions: dumped,
        final_metrics,
    })
}

/// Runs a knowledge sweep.
pub fn execute_knowledge(job: &KnowledgeJob) -> Result<Vec<SweepPoint>, CliError> {
    let points = match job.config.topology {
        TopologyKind::Star => server_mode_sweep(&job.config, &job.data, &job.knowledge)?,
        TopologyKind::Complete => play_rind_sweep(&job.config, &job.data, &job.knowledge)?,
    };
    Ok(points)
}

pub fn knowledge_rows(settings: &Settings, points: &[SweepPoint]) -> Vec<KnowledgeRow> {
    points
        .iter()
        .flat_map(|p| {
            p.reports.iter().map(move |r| KnowledgeRow {
                preset: settings.preset.clone(),
                seed: settings.seed,
                mode: p.mode.to_string(),
                degree: p.degree,
                evaluator: r.evaluator.short_name().to_string(),
                slice_size: p.slice_size,
                accuracy: r.accuracy,
                fpr: r.fpr,
                tp: r.counts.tp,
                fp: r.counts.fp,
                tn: r.counts.tn,
                fn_: r.counts.fn_,
                acc_local: p.potential.acc_local,
                acc_all: p.potential.acc_all,
                potential: p.potential.potential,
            })
        })
        .collect()
}

/// Rank correlations of accuracy and FPR with learning potential, per
/// knowledge mode and evaluator.
pub fn knowledge_summary(points: &[SweepPoint], evaluators: &[EvaluatorKind]) -> Vec<KnowledgeSummary> {
    let mut out = Vec::new();
    for mode in [KnowledgeMode::LabelsPrefix, KnowledgeMode::IidFraction] {
        let of_mode: Vec<&SweepPoint> = points.iter().filter(|p| p.mode == mode).collect();
        if of_mode.is_empty() {
            continue;
        }
        let potential: Vec<f64> = of_mode.iter().map(|p| p.potential.potential).collect();
        for &kind in evaluators {
            let reports: Vec<_> = of_mode.iter().filter_map(|p| p.report(kind)).collect();
            let accuracy: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
            let fpr: Vec<f64> = reports.iter().map(|r| r.fpr).collect();
            out.push(KnowledgeSummary {
                mode: mode.to_string(),
                evaluator: kind.short_name().to_string(),
                points: reports.len(),
                rho_accuracy_potential: spearman(&accuracy, &potential),
                rho_fpr_potential: spearman(&fpr, &potential),
            });
        }
    }
    out
}

/// Runs a preset and writes its files into `out_dir`.
pub fn run_preset(settings: &Settings, out_dir: &Path) -> Result<Summary, CliError> {
    std::fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    let path = |name: &str| -> PathBuf { out_dir.join(name) };
    let job = build_job(settings)?;
    let mut summary = Summary {
        preset: settings.preset.clone(),
        seed: settings.seed,
        files: Vec::new(),
        runs: Default::default(),
        knowledge: Vec::new(),
    };
    match job {
        Job::Simulations(runs) => {
            let mut metrics = Vec::new();
            let mut dumped = Vec::new();
            let mut any_dump = false;
            for run in runs {
                any_dump |= run.dump_predictions;
                log::info!("{}: starting run {}", settings.preset, run.name);
                let out = execute_run(settings, run)?;
                metrics.extend(out.metrics);
                dumped.extend(out.predictions);
                summary.runs.insert(out.name, out.final_metrics);
            }
            output::write_rows(&path(output::METRICS_FILE), &output::METRICS_HEADER, &metrics)?;
            summary.files.push(output::METRICS_FILE.into());
            if any_dump {
                output::write_rows(&path(output::PREDICTIONS_FILE), &output::PREDICTIONS_HEADER, &dumped)?;
                summary.files.push(output::PREDICTIONS_FILE.into());
            }
        }
        Job::Knowledge(job) => {
            let points = execute_knowledge(&job)?;
            let rows = knowledge_rows(settings, &points);
            output::write_rows(&path(output::KNOWLEDGE_FILE), &output::KNOWLEDGE_HEADER, &rows)?;
            summary.files.push(output::KNOWLEDGE_FILE.into());
            summary.knowledge = knowledge_summary(&points, &job.config.evaluators);
        }
    }
    let config_path = path(output::CONFIG_FILE);
    std::fs::write(&config_path, settings.to_toml()).map_err(CliError::io(&config_path))?;
    summary.files.push(output::CONFIG_FILE.into());
    summary.files.push(output::SUMMARY_FILE.into());
    output::write_summary(&path(output::SUMMARY_FILE), &summary)?;
    Ok(summary)
}
