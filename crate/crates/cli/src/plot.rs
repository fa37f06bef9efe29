//! Plot-ready tables.
//!
//! `emit_plotdata` turns the long-format output of a preset run into one
//! wide table per figure: one row per x value (epoch, knowledge degree or
//! test sample) and one column per series. Cells are copied verbatim from
//! the input, so re-emission is byte-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::output::{KNOWLEDGE_FILE, METRICS_FILE, PREDICTIONS_FILE};
use crate::CliError;

pub const FIGURES: [&str; 7] = ["fig2", "fig3", "fig5", "fig6", "fig7", "fig8", "fig9"];

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("unknown figure `{0}`; available: {}", FIGURES.join(", "))]
    UnknownFigure(String),
    #[error("{}: no data rows", .0.display())]
    Empty(PathBuf),
    #[error("{}: missing column `{column}`", path.display())]
    MissingColumn { path: PathBuf, column: String },
    #[error("missing series `{0}`")]
    MissingSeries(String),
    #[error("{}: rows come from preset `{found}`, {figure} needs {expected}", path.display())]
    WrongPreset {
        path: PathBuf,
        found: String,
        figure: String,
        expected: String,
    },
}

/// A wide table ready to be written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

struct Long {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Long {
    fn read(path: &Path) -> Result<Self, CliError> {
        let mut reader = csv::Reader::from_path(path).map_err(CliError::csv(path))?;
        let header: Vec<String> = match reader.headers() {
            Ok(h) => h.iter().map(str::to_string).collect(),
            Err(_) => return Err(PlotError::Empty(path.to_path_buf()).into()),
        };
        let rows = reader
            .records()
            .collect::<Result<Vec<_>, _>>()
            .map_err(CliError::csv(path))?;
        if rows.is_empty() {
            return Err(PlotError::Empty(path.to_path_buf()).into());
        }
        Ok(Long {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    fn col(&self, name: &str) -> Result<usize, PlotError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PlotError::MissingColumn {
                path: self.path.clone(),
                column: name.to_string(),
            })
    }

    fn require_preset(&self, figure: &str, accept: impl Fn(&str) -> bool, expected: &str) -> Result<(), PlotError> {
        let c = self.col("preset")?;
        match self.rows.iter().find(|r| !accept(&r[c])) {
            Some(r) => Err(PlotError::WrongPreset {
                path: self.path.clone(),
                found: r[c].to_string(),
                figure: figure.to_string(),
                expected: expected.to_string(),
            }),
            None => Ok(()),
        }
    }
}

/// Per-epoch series keyed by (run, metric), aggregate scopes only.
struct EpochSeries {
    values: BTreeMap<(String, String), BTreeMap<usize, String>>,
}

impl EpochSeries {
    fn from(long: &Long) -> Result<Self, CliError> {
        let [run, epoch, scope, metric, value] =
            ["run", "epoch", "scope", "metric", "value"].map(|n| long.col(n));
        let (run, epoch, scope, metric, value) = (run?, epoch?, scope?, metric?, value?);
        let mut values: BTreeMap<(String, String), BTreeMap<usize, String>> = BTreeMap::new();
        for r in &long.rows {
            if r[scope] != *"server" && r[scope] != *"honest_mean" {
                continue;
            }
            let e: usize = r[epoch].parse().map_err(|_| CliError::Csv {
                path: long.path.clone(),
                message: format!("bad epoch {:?}", &r[epoch]),
            })?;
            values
                .entry((r[run].to_string(), r[metric].to_string()))
                .or_default()
                .insert(e, r[value].to_string());
        }
        Ok(EpochSeries { values })
    }

    fn runs(&self) -> BTreeSet<&str> {
        self.values.keys().map(|(r, _)| r.as_str()).collect()
    }

    /// Wide table over the union of epochs of the named series.
    fn table(&self, series: &[(String, &str, &str)]) -> Result<Table, PlotError> {
        let mut columns = Vec::new();
        for (label, run, metric) in series {
            let s = self
                .values
                .get(&(run.to_string(), metric.to_string()))
                .ok_or_else(|| PlotError::MissingSeries(label.clone()))?;
            columns.push(s);
        }
        let epochs: BTreeSet<usize> = columns.iter().flat_map(|c| c.keys().copied()).collect();
        let mut header = vec!["epoch".to_string()];
        header.extend(series.iter().map(|(l, _, _)| l.clone()));
        let rows = epochs
            .into_iter()
            .map(|e| {
                let mut row = vec![e.to_string()];
                row.extend(columns.iter().map(|c| c.get(&e).cloned().unwrap_or_default()));
                row
            })
            .collect();
        Ok(Table { header, rows })
    }
}

fn trio(metric: &'static str, suffix: &str) -> Vec<(String, &'static str, &'static str)> {
    ["scc", "mkrum", "rofl"]
        .into_iter()
        .map(|run| (format!("{run}_{suffix}"), run, metric))
        .collect()
}

fn fig3_series(series: &EpochSeries) -> Result<Vec<(String, String, &'static str)>, PlotError> {
    let mut deltas: Vec<(f64, String)> = series
        .runs()
        .iter()
        .filter_map(|r| {
            let d = r.strip_prefix("scc_d")?;
            let d = d.strip_suffix("_benign").or_else(|| d.strip_suffix("_attack"))?;
            Some((d.parse::<f64>().ok()?, d.to_string()))
        })
        .collect();
    deltas.sort_by(|a, b| a.0.total_cmp(&b.0));
    deltas.dedup_by(|a, b| a.1 == b.1);
    if deltas.is_empty() {
        return Err(PlotError::MissingSeries("scc_d<delta>_benign_acc".into()));
    }
    let mut out = Vec::new();
    for (_, d) in &deltas {
        for (variant, metrics) in [
            ("benign", &[("acc", "accuracy"), ("train_loss", "train_loss")][..]),
            ("attack", &[("acc", "accuracy"), ("train_loss", "train_loss"), ("dist", "distance_to_target")][..]),
        ] {
            let run = format!("scc_d{d}_{variant}");
            for (label, metric) in metrics {
                out.push((format!("{run}_{label}"), run.clone(), *metric));
            }
        }
    }
    Ok(out)
}

fn epoch_figure(figure: &str, dir: &Path) -> Result<Table, CliError> {
    let long = Long::read(&dir.join(METRICS_FILE))?;
    let series = EpochSeries::from(&long)?;
    let table = match figure {
        "fig2" => {
            long.require_preset(figure, |p| p.starts_with("fig2-"), "fig2-mnist-iid or fig2-mnist-noniid")?;
            let mut s = trio("accuracy", "acc");
            s.extend(trio("distance_to_target", "dist"));
            series.table(&s)?
        }
        "fig3" => {
            long.require_preset(figure, |p| p == "fig3-scc-delta", "fig3-scc-delta")?;
            let owned = fig3_series(&series)?;
            let s: Vec<(String, &str, &str)> = owned.iter().map(|(l, r, m)| (l.clone(), r.as_str(), *m)).collect();
            series.table(&s)?
        }
        "fig5" => {
            long.require_preset(figure, |p| p == "fig5-dissensus", "fig5-dissensus")?;
            series.table(&[
                ("baseline_delta".into(), "baseline", "dynamic_delta_mean"),
                ("dissensus_delta".into(), "dissensus", "dynamic_delta_mean"),
            ])?
        }
        "fig8" => {
            long.require_preset(figure, |p| p == "fig8-health", "fig8-health")?;
            series.table(&trio("error_rate", "err"))?
        }
        _ => unreachable!("dispatched by emit_plotdata"),
    };
    Ok(table)
}

fn knowledge_figure(figure: &str, dir: &Path) -> Result<Table, CliError> {
    let long = Long::read(&dir.join(KNOWLEDGE_FILE))?;
    let expected = if figure == "fig6" { "fig6-knowledge-p2p" } else { "fig7-knowledge-server" };
    long.require_preset(figure, |p| p == expected, expected)?;
    let [mode, degree, evaluator, slice, accuracy, fpr, potential] =
        ["mode", "degree", "evaluator", "slice_size", "accuracy", "fpr", "potential"].map(|n| long.col(n));
    let (mode, degree, evaluator, slice, accuracy, fpr, potential) =
        (mode?, degree?, evaluator?, slice?, accuracy?, fpr?, potential?);
    // x values in first-seen order
    let mut points: Vec<(String, String)> = Vec::new();
    let mut fixed: BTreeMap<(String, String), (String, String)> = BTreeMap::new();
    let mut cells: BTreeMap<(String, String, String), (String, String)> = BTreeMap::new();
    for r in &long.rows {
        let x = (r[mode].to_string(), r[degree].to_string());
        if !fixed.contains_key(&x) {
            points.push(x.clone());
            fixed.insert(x.clone(), (r[slice].to_string(), r[potential].to_string()));
        }
        cells.insert(
            (x.0, x.1, r[evaluator].to_string()),
            (r[accuracy].to_string(), r[fpr].to_string()),
        );
    }
    let evaluators = ["rdsvm", "err"];
    let mut header: Vec<String> = ["mode", "degree", "slice_size", "potential"].map(String::from).to_vec();
    for e in evaluators {
        header.push(format!("{e}_acc"));
        header.push(format!("{e}_fpr"));
    }
    let mut rows = Vec::new();
    for (m, d) in &points {
        let (s, p) = &fixed[&(m.clone(), d.clone())];
        let mut row = vec![m.clone(), d.clone(), s.clone(), p.clone()];
        for e in evaluators {
            let (a, f) = cells
                .get(&(m.clone(), d.clone(), e.to_string()))
                .ok_or_else(|| PlotError::MissingSeries(format!("{e}_acc")))?;
            row.push(a.clone());
            row.push(f.clone());
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn predictions_figure(dir: &Path) -> Result<Table, CliError> {
    let long = Long::read(&dir.join(PREDICTIONS_FILE))?;
    let [run, model, index, truth, prediction] =
        ["run", "model", "index", "ground_truth", "prediction"].map(|n| long.col(n));
    let (run, model, index, truth, prediction) = (run?, model?, index?, truth?, prediction?);
    let mut columns: Vec<String> = Vec::new();
    let mut truth_of: BTreeMap<usize, String> = BTreeMap::new();
    let mut cells: BTreeMap<(String, usize), String> = BTreeMap::new();
    for r in &long.rows {
        let label = format!("{}_{}", &r[run], r[model].replace(':', ""));
        if !columns.contains(&label) {
            columns.push(label.clone());
        }
        let i: usize = r[index].parse().map_err(|_| CliError::Csv {
            path: long.path.clone(),
            message: format!("bad index {:?}", &r[index]),
        })?;
        truth_of.insert(i, r[truth].to_string());
        cells.insert((label, i), r[prediction].to_string());
    }
    for required in ["scc", "mkrum", "rofl"] {
        if !columns.iter().any(|c| c.starts_with(&format!("{required}_"))) {
            return Err(PlotError::MissingSeries(format!("{required}_<model>")).into());
        }
    }
    let mut header = vec!["index".to_string(), "ground_truth".to_string()];
    header.extend(columns.iter().cloned());
    let rows = truth_of
        .iter()
        .map(|(&i, t)| {
            let mut row = vec![i.to_string(), t.clone()];
            row.extend(columns.iter().map(|c| cells.get(&(c.clone(), i)).cloned().unwrap_or_default()));
            row
        })
        .collect();
    Ok(Table { header, rows })
}

/// Builds the wide table of `figure` from the run outputs in `dir`.
pub fn plot_table(figure: &str, dir: &Path) -> Result<Table, CliError> {
    match figure {
        "fig2" | "fig3" | "fig5" | "fig8" => epoch_figure(figure, dir),
        "fig6" | "fig7" => knowledge_figure(figure, dir),
        "fig9" => predictions_figure(dir),
        other => Err(PlotError::UnknownFigure(other.to_string()).into()),
    }
}

/// Writes `plot-<figure>.csv` into `dir`; nothing is written on error.
pub fn emit_plotdata(figure: &str, dir: &Path) -> Result<PathBuf, CliError> {
    let table = plot_table(figure, dir)?;
    let path = dir.join(format!("plot-{figure}.csv"));
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(&table.header).map_err(CliError::csv(&path))?;
    for row in &table.rows {
        w.write_record(row).map_err(CliError::csv(&path))?;
    }
    let bytes = w.into_inner().expect("in-memory writer");
    std::fs::write(&path, bytes).map_err(CliError::io(&path))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::output::{write_rows, MetricsRow, METRICS_HEADER};

    fn metric(preset: &str, run: &str, epoch: usize, scope: &str, name: &str, value: f64) -> MetricsRow {
        MetricsRow {
            preset: preset.into(),
            seed: 0,
            run: run.into(),
            epoch,
            scope: scope.into(),
            metric: name.into(),
            value,
        }
    }

    fn fig2_rows(runs: &[&str]) -> Vec<MetricsRow> {
        let mut rows = Vec::new();
        for e in 1..=2 {
            for run in runs {
                let scope = if *run == "scc" { "honest_mean" } else { "server" };
                rows.push(metric("fig2-mnist-iid", run, e, scope, "accuracy", 0.5 + e as f64 / 10.0));
                rows.push(metric("fig2-mnist-iid", run, e, scope, "distance_to_target", 3.0 / e as f64));
                rows.push(metric("fig2-mnist-iid", run, e, "user:0", "accuracy", 0.0));
            }
        }
        rows
    }

    #[test]
    fn fig2_columns_and_values() {
        let dir = tempfile::tempdir().unwrap();
        write_rows(&dir.path().join(METRICS_FILE), &METRICS_HEADER, &fig2_rows(&["scc", "mkrum", "rofl"])).unwrap();
        let t = plot_table("fig2", dir.path()).unwrap();
        assert_eq!(
            t.header,
            ["epoch", "scc_acc", "mkrum_acc", "rofl_acc", "scc_dist", "mkrum_dist", "rofl_dist"]
        );
        assert_eq!(t.rows[0], ["1", "0.6", "0.6", "0.6", "3.0", "3.0", "3.0"]);
        assert_eq!(t.rows[1][4], "1.5");
    }

    #[test]
    fn missing_series_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write_rows(&dir.path().join(METRICS_FILE), &METRICS_HEADER, &fig2_rows(&["scc", "rofl"])).unwrap();
        let err = emit_plotdata("fig2", dir.path()).unwrap_err();
        assert_eq!(err.to_string(), "missing series `mkrum_acc`");
        assert!(!dir.path().join("plot-fig2.csv").exists());
    }

    #[test]
    fn empty_metrics_write_nothing() {
        let dir = tempfile::tempdir().unwrap();
        write_rows::<MetricsRow>(&dir.path().join(METRICS_FILE), &METRICS_HEADER, &[]).unwrap();
        assert!(matches!(
            emit_plotdata("fig2", dir.path()),
            Err(CliError::Plot(PlotError::Empty(_)))
        ));
        std::fs::write(dir.path().join(METRICS_FILE), "").unwrap();
        assert!(emit_plotdata("fig2", dir.path()).is_err());
        assert!(!dir.path().join("plot-fig2.csv").exists());
    }

    #[test]
    fn reemission_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        write_rows(&dir.path().join(METRICS_FILE), &METRICS_HEADER, &fig2_rows(&["scc", "mkrum", "rofl"])).unwrap();
        let p = emit_plotdata("fig2", dir.path()).unwrap();
        let first = std::fs::read(&p).unwrap();
        emit_plotdata("fig2", dir.path()).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
    }

    #[test]
    fn wrong_preset_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        write_rows(&dir.path().join(METRICS_FILE), &METRICS_HEADER, &fig2_rows(&["scc", "mkrum", "rofl"])).unwrap();
        assert!(matches!(
            plot_table("fig5", dir.path()),
            Err(CliError::Plot(PlotError::WrongPreset { .. }))
        ));
        assert!(matches!(
            plot_table("fig4", dir.path()),
            Err(CliError::Plot(PlotError::UnknownFigure(_)))
        ));
    }

    #[test]
    fn fig3_orders_deltas_numerically() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = Vec::new();
        for d in ["5", "0.5"] {
            for v in ["benign", "attack"] {
                let run = format!("scc_d{d}_{v}");
                for m in ["accuracy", "train_loss", "distance_to_target"] {
                    if v == "benign" && m == "distance_to_target" {
                        continue;
                    }
                    rows.push(metric("fig3-scc-delta", &run, 5, "honest_mean", m, 1.0));
                }
            }
        }
        write_rows(&dir.path().join(METRICS_FILE), &METRICS_HEADER, &rows).unwrap();
        let t = plot_table("fig3", dir.path()).unwrap();
        assert_eq!(t.header[1], "scc_d0.5_benign_acc");
        assert_eq!(t.header.len(), 1 + 2 * 5);
        rows.retain(|r| r.run != "scc_d5_attack");
        write_rows(&dir.path().join(METRICS_FILE), &METRICS_HEADER, &rows).unwrap();
        let err = plot_table("fig3", dir.path()).unwrap_err();
        assert_eq!(err.to_string(), "missing series `scc_d5_attack_acc`");
    }
}
