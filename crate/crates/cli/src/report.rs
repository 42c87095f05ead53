//! Aggregation of result rows into summary tables, and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mfgp::bench::ModelKind;

use crate::experiment::{ResultRow, RESULTS_HEADER};
use crate::svg::{Plot, Series};
use crate::CliError;

/// Mean and sample standard deviation of each metric over the successful
/// repetitions of one (problem, model, HF size) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub problem: String,
    pub model: ModelKind,
    pub hf_size: usize,
    pub n: usize,
    pub failed: usize,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub mnll_mean: f64,
    pub mnll_std: f64,
    pub r2_mean: f64,
    pub r2_std: f64,
}

/// Mean and sample standard deviation (zero for a single value).
fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, usize, ModelKind), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.problem.clone(), r.hf_size, r.model)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((problem, hf_size, model), rs)| {
            let ok: Vec<&&ResultRow> = rs.iter().filter(|r| !r.failed()).collect();
            let metric = |f: fn(&ResultRow) -> f64| mean_std(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (rmse_mean, rmse_std) = metric(|r| r.rmse);
            let (mnll_mean, mnll_std) = metric(|r| r.mnll);
            let (r2_mean, r2_std) = metric(|r| r.r2);
            SummaryRow {
                problem,
                model,
                hf_size,
                n: ok.len(),
                failed: rs.len() - ok.len(),
                rmse_mean,
                rmse_std,
                mnll_mean,
                mnll_std,
                r2_mean,
                r2_std,
            }
        })
        .collect()
}

/// Reads a results file, checking the header.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    let header = rdr
        .headers()
        .map_err(|e| CliError::Schema(e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != RESULTS_HEADER {
        return Err(CliError::Schema(format!("{}: header must be `{RESULTS_HEADER}`", path.display())));
    }
    let rows = rdr
        .deserialize()
        .collect::<Result<Vec<ResultRow>, _>>()
        .map_err(|e| CliError::Schema(e.to_string()))?;
    if rows.is_empty() {
        return Err(CliError::Schema(format!("{}: no result rows", path.display())));
    }
    Ok(rows)
}

pub fn write_summary_csv(path: &Path, summary: &[SummaryRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for s in summary {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt_num(v: f64) -> String {
    if !v.is_finite() {
        "–".to_string()
    } else if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-3) {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

/// Markdown tables, one per problem, with the best mean of each HF size in
/// bold.
pub fn write_summary_md(summary: &[SummaryRow]) -> String {
    let mut out = String::new();
    let mut problems: Vec<&str> = summary.iter().map(|s| s.problem.as_str()).collect();
    problems.dedup();
    for p in problems {
        let rows: Vec<&SummaryRow> = summary.iter().filter(|s| s.problem == p).collect();
        let _ = writeln!(out, "## {p}\n");
        let _ = writeln!(
            out,
            "| HF points | model | mean RMSE | std RMSE | mean MNLL | std MNLL | mean R² | std R² | runs | failed |"
        );
        let _ = writeln!(out, "|---|---|---|---|---|---|---|---|---|---|");
        for r in &rows {
            let peers: Vec<&&SummaryRow> = rows.iter().filter(|o| o.hf_size == r.hf_size).collect();
            let best = |f: fn(&SummaryRow) -> f64, lower: bool| {
                let vals = peers.iter().map(|o| f(o)).filter(|v| v.is_finite());
                let b = if lower { vals.fold(f64::INFINITY, f64::min) } else { vals.fold(f64::NEG_INFINITY, f64::max) };
                let v = f(r);
                if peers.len() > 1 && v == b {
                    format!("**{}**", fmt_num(v))
                } else {
                    fmt_num(v)
                }
            };
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                r.hf_size,
                r.model,
                best(|s| s.rmse_mean, true),
                fmt_num(r.rmse_std),
                best(|s| s.mnll_mean, true),
                fmt_num(r.mnll_std),
                best(|s| s.r2_mean, false),
                fmt_num(r.r2_std),
                r.n,
                r.failed
            );
        }
        out.push('\n');
    }
    out
}

fn read_xy_columns(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let mut cols = vec![Vec::new(); header.len()];
    for rec in rdr.records() {
        let rec = rec?;
        for (j, f) in rec.iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| CliError::Schema(format!("{}: `{f}` is not a number", path.display())))?;
            cols[j].push(v);
        }
    }
    Ok((header, cols))
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map(|it| {
            it.filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect()
        })
        .unwrap_or_default();
    out.sort();
    out
}

/// Writes `report.md`, a per-problem RMSE chart, and the ELBO-trace and
/// 1-D prediction plots found next to the results file. Returns the
/// written paths.
pub fn render_report(results: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let rows = read_results(results)?;
    let summary = summarize(&rows);
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut md = String::from("# Results\n\n");
    md.push_str(&write_summary_md(&summary));

    let mut problems: Vec<String> = summary.iter().map(|s| s.problem.clone()).collect();
    problems.dedup();
    for p in &problems {
        let mut plot = Plot::new(&format!("{p}: mean RMSE"), "HF points", "RMSE");
        let mut models: Vec<ModelKind> = summary.iter().filter(|s| &s.problem == p).map(|s| s.model).collect();
        models.sort();
        models.dedup();
        for m in models {
            let pts: Vec<(f64, f64)> = summary
                .iter()
                .filter(|s| &s.problem == p && s.model == m && s.rmse_mean.is_finite())
                .map(|s| (s.hf_size as f64, s.rmse_mean))
                .collect();
            plot.add(Series::line(m.as_str(), pts).with_markers());
        }
        let path = out_dir.join(format!("{p}_rmse.svg"));
        fs::write(&path, plot.render())?;
        let _ = writeln!(md, "![{p} RMSE]({})\n", path.file_name().unwrap().to_string_lossy());
        written.push(path);
    }

    let base = results.parent().unwrap_or(Path::new("."));
    let traces = csv_files(&base.join("traces"));
    if !traces.is_empty() {
        let mut plot = Plot::new("ELBO traces", "iteration", "ELBO");
        for t in &traces {
            let (_, cols) = read_xy_columns(t)?;
            let name = t.file_stem().unwrap().to_string_lossy().to_string();
            plot.add(Series::line(&name, cols[0].iter().copied().zip(cols[1].iter().copied()).collect()));
        }
        plot.symlog_y();
        let path = out_dir.join("elbo_traces.svg");
        fs::write(&path, plot.render())?;
        let _ = writeln!(md, "![ELBO traces](elbo_traces.svg)\n");
        written.push(path);
    }

    let pred_dir = base.join("predictions");
    for f in csv_files(&pred_dir) {
        let stem = f.file_stem().unwrap().to_string_lossy().to_string();
        if stem.starts_with("design_") {
            continue;
        }
        let (_, cols) = read_xy_columns(&f)?;
        let (x, mean, sd) = (&cols[0], &cols[1], &cols[2]);
        let mut plot = Plot::new(&stem, "x", "y");
        let upper: Vec<(f64, f64)> = x.iter().zip(mean.iter().zip(sd)).map(|(&x, (&m, &s))| (x, m + 2.0 * s)).collect();
        let lower: Vec<(f64, f64)> = x.iter().zip(mean.iter().zip(sd)).map(|(&x, (&m, &s))| (x, m - 2.0 * s)).collect();
        plot.add(Series::band("±2σ", lower, upper));
        plot.add(Series::line("mean", x.iter().copied().zip(mean.iter().copied()).collect()));
        let design = stem
            .split_once("_hf")
            .map(|(_, rest)| pred_dir.join(format!("design_hf{rest}.csv")));
        if let Some(d) = design.filter(|d| d.exists()) {
            let (_, dc) = read_xy_columns(&d)?;
            plot.add(Series::points("HF data", dc[0].iter().copied().zip(dc[1].iter().copied()).collect()));
        }
        let path = out_dir.join(format!("{stem}_prediction.svg"));
        fs::write(&path, plot.render())?;
        let _ = writeln!(md, "![{stem}]({})\n", path.file_name().unwrap().to_string_lossy());
        written.push(path);
    }

    let path = out_dir.join("report.md");
    fs::write(&path, md)?;
    written.insert(0, path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(model: ModelKind, rep: usize, rmse: f64) -> ResultRow {
        ResultRow {
            problem: "park".into(),
            model,
            hf_size: 4,
            rep,
            seed: rep as u64,
            r2: 0.5,
            rmse,
            mnll: 1.0,
            train_seconds: 0.0,
            max_jitter: 0.0,
            warnings: String::new(),
        }
    }

    #[test]
    fn summary_uses_sample_std_and_skips_failures() {
        let mut failed = row(ModelKind::Bc, 2, f64::NAN);
        failed.warnings = "failed: boom".into();
        let rows = vec![row(ModelKind::Bc, 0, 1.0), row(ModelKind::Bc, 1, 3.0), failed];
        let s = summarize(&rows);
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].n, s[0].failed), (2, 1));
        assert_eq!(s[0].rmse_mean, 2.0);
        assert!((s[0].rmse_std - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn best_mean_is_bold() {
        let rows = vec![row(ModelKind::Bc, 0, 1.0), row(ModelKind::GpHf, 0, 2.0)];
        let md = write_summary_md(&summarize(&rows));
        assert!(md.contains("| 4 | bc | **1.0000** |"));
        assert!(md.contains("| 4 | gp-hf | 2.0000 |"));
    }
}
