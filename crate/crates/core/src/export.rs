//! CSV and JSON output for analysis products.
//!
//! Reals are written with six significant digits; undefined values are
//! `NA` in CSV and `null` in JSON. Column order is fixed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{CaseRow, DistributionSummary, MatchStudy, Metric};
use crate::metrics::{quantile_sorted, MetricReport};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

/// Six significant digits, trailing zeros kept; scientific notation
/// outside `[1e-4, 1e6)`.
pub fn format_real(x: f64) -> String {
    if x == 0.0 {
        return "0.00000".into();
    }
    if !x.is_finite() {
        return "NA".into();
    }
    let abs = x.abs();
    if !(1e-4..1e6).contains(&abs) {
        return format!("{x:.5e}");
    }
    let exp = abs.log10().floor() as i32;
    let decimals = (5 - exp).max(0) as usize;
    let text = format!("{x:.decimals$}");
    // Rounding can carry into a new leading digit (9.999995 -> 10.00000).
    let digits = text.chars().filter(char::is_ascii_digit).count();
    let leading_zeros = text
        .trim_start_matches('-')
        .chars()
        .take_while(|c| *c == '0' || *c == '.')
        .filter(|c| *c == '0')
        .count();
    if digits - leading_zeros > 6 && decimals > 0 {
        let decimals = decimals - 1;
        return format!("{x:.decimals$}");
    }
    text
}

fn opt_real(x: Option<f64>) -> String {
    x.map(format_real).unwrap_or_else(|| "NA".into())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, ExportError> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::Necessary)
        .from_path(path)
        .map_err(|source| ExportError::Csv {
            path: path.to_path_buf(),
            source,
        })
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), ExportError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let wrap = |source| ExportError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>())
            .map_err(wrap)?;
    }
    w.flush().map_err(|source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub const REPORT_COLUMNS: [&str; 8] = [
    "movie_id",
    "mann_kendall_s",
    "mk_p_value",
    "spearman_rho",
    "kurtosis_late",
    "iqr_late",
    "n_trend",
    "l_window",
];

pub fn write_reports_csv(path: &Path, reports: &[MetricReport]) -> Result<(), ExportError> {
    write_rows(
        path,
        &REPORT_COLUMNS,
        reports.iter().map(|r| {
            vec![
                r.movie_id.clone(),
                r.mann_kendall_s.to_string(),
                opt_real(r.mk_p_value),
                opt_real(r.spearman_rho),
                opt_real(r.kurtosis_late),
                format_real(r.iqr_late),
                r.n_trend.to_string(),
                r.l_window.to_string(),
            ]
        }),
    )
}

/// `movie_id,value` for one metric.
pub fn write_metric_csv(
    path: &Path,
    metric: Metric,
    reports: &[MetricReport],
) -> Result<(), ExportError> {
    write_rows(
        path,
        &["movie_id", metric.name()],
        reports.iter().map(|r| {
            let value = match metric {
                Metric::MannKendallS => r.mann_kendall_s.to_string(),
                _ => opt_real(metric.value(r)),
            };
            vec![r.movie_id.clone(), value]
        }),
    )
}

pub fn write_histogram_csv(path: &Path, summary: &DistributionSummary) -> Result<(), ExportError> {
    write_rows(
        path,
        &["lo", "hi", "count"],
        summary
            .histogram_bins
            .iter()
            .map(|b| vec![format_real(b.lo), format_real(b.hi), b.count.to_string()]),
    )
}

pub fn write_case_csv(path: &Path, rows: &[CaseRow]) -> Result<(), ExportError> {
    write_rows(
        path,
        &["step", "pos", "neg"],
        rows.iter()
            .map(|r| vec![r.step.to_string(), format_real(r.pos), format_real(r.neg)]),
    )
}

pub fn write_match_csv(path: &Path, study: &MatchStudy) -> Result<(), ExportError> {
    write_rows(
        path,
        &[
            "agent_id",
            "persona_id",
            "movie_id",
            "match_score",
            "mean_rating_distance",
        ],
        study.records.iter().map(|r| {
            vec![
                r.agent_id.clone(),
                r.persona_id.clone(),
                r.movie_id.clone(),
                format_real(r.match_score),
                format_real(r.mean_rating_distance),
            ]
        }),
    )
}

/// One line of `summary.csv`: order statistics over the defined values of
/// one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub metric_name: String,
    pub n_movies: usize,
    pub n_defined: usize,
    pub min: Option<f64>,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
    pub max: Option<f64>,
}

pub fn metric_stats(summary: &DistributionSummary) -> MetricStats {
    let mut defined: Vec<f64> = summary
        .values
        .iter()
        .filter_map(|(_, v)| *v)
        .filter(|v| v.is_finite())
        .collect();
    defined.sort_by(f64::total_cmp);
    let at = |q: f64| (!defined.is_empty()).then(|| quantile_sorted(&defined, q));
    MetricStats {
        metric_name: summary.metric_name.clone(),
        n_movies: summary.values.len(),
        n_defined: defined.len(),
        min: defined.first().copied(),
        q1: at(0.25),
        median: at(0.5),
        q3: at(0.75),
        max: defined.last().copied(),
    }
}

pub fn write_summary_csv(path: &Path, stats: &[MetricStats]) -> Result<(), ExportError> {
    write_rows(
        path,
        &[
            "metric",
            "n_movies",
            "n_defined",
            "min",
            "q1",
            "median",
            "q3",
            "max",
        ],
        stats.iter().map(|s| {
            vec![
                s.metric_name.clone(),
                s.n_movies.to_string(),
                s.n_defined.to_string(),
                opt_real(s.min),
                opt_real(s.q1),
                opt_real(s.median),
                opt_real(s.q3),
                opt_real(s.max),
            ]
        }),
    )
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExportError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| ExportError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Everything an analysis pass produces for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutput {
    pub run_id: String,
    pub reports: Vec<MetricReport>,
    pub summaries: Vec<DistributionSummary>,
    pub case_series: Vec<(String, Vec<CaseRow>)>,
}

/// Writes `out_dir/{run_id}/...` in the requested format and returns the
/// files written, in order.
pub fn export(
    out_dir: &Path,
    output: &AnalysisOutput,
    format: ExportFormat,
) -> Result<Vec<PathBuf>, ExportError> {
    let dir = out_dir.join(&output.run_id);
    fs::create_dir_all(&dir).map_err(|source| ExportError::Io {
        path: dir.clone(),
        source,
    })?;
    let mut written = Vec::new();
    match format {
        ExportFormat::Json => {
            let path = dir.join("reports.json");
            write_json(&path, output)?;
            written.push(path);
        }
        ExportFormat::Csv => {
            let path = dir.join("reports.csv");
            write_reports_csv(&path, &output.reports)?;
            written.push(path);
            for metric in Metric::ALL {
                let path = dir.join(format!("{}.csv", metric.name()));
                write_metric_csv(&path, metric, &output.reports)?;
                written.push(path);
            }
            for summary in &output.summaries {
                let path = dir.join(format!("{}_hist.csv", summary.metric_name));
                write_histogram_csv(&path, summary)?;
                written.push(path);
            }
            for (movie_id, rows) in &output.case_series {
                let path = dir.join(format!("case_{}.csv", crate::files::file_stem(movie_id)));
                write_case_csv(&path, rows)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}
