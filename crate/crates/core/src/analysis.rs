//! Per-movie metric reports, metric distributions across movies, case-study
//! series, and the persona/movie semantic-match study.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{
    excess_kurtosis, iqr, late_window, mann_kendall_s, mco_series, rating_distance, spearman_corr,
    spearman_rho, MetricError, MetricReport,
};
use crate::model::{MovieItem, Persona, RatingScale, RatingSequence, ScenarioConfig};
use crate::simulation::RunRecord;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("movie {movie_id}: {source}")]
    Metric {
        movie_id: String,
        #[source]
        source: MetricError,
    },
    #[error("movie {0} is not in the record")]
    UnknownMovie(String),
    #[error("persona {0} is not in the persona list")]
    UnknownPersona(String),
    #[error("agent {0} has no persona assignment")]
    UnassignedAgent(String),
    #[error("semantic-match study needs a history + persona run")]
    ScenarioMismatch,
}

/// How sequences are windowed before metrics are computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    /// Drop the warm-up prefix entirely, so cumulative shares count agent
    /// ratings only and the trend starts at the first agent.
    pub exclude_warmups: bool,
}

impl AnalysisOptions {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        AnalysisOptions {
            exclude_warmups: cfg.exclude_warmups_from_analysis,
        }
    }
}

fn windowed(seq: &RatingSequence, opts: AnalysisOptions) -> (RatingSequence, usize) {
    if opts.exclude_warmups {
        (seq.without_warmups(), 1)
    } else {
        (seq.clone(), seq.warmup_len.max(1))
    }
}

pub fn analyze_sequence(
    seq: &RatingSequence,
    cfg: &ScenarioConfig,
    opts: AnalysisOptions,
) -> Result<MetricReport, AnalysisError> {
    let wrap = |source| AnalysisError::Metric {
        movie_id: seq.movie_id.clone(),
        source,
    };
    let (seq, start_round) = windowed(seq, opts);
    let series = mco_series(&seq, cfg.positive_threshold, start_round).map_err(wrap)?;
    let mk = mann_kendall_s(&series).map_err(wrap)?;
    let rho = match spearman_rho(&series) {
        Ok(rho) => Some(rho),
        Err(MetricError::ConstantSeries) => None,
        Err(e) => return Err(wrap(e)),
    };
    let late = late_window(&seq, cfg.late_window_l).map_err(wrap)?;
    let kurtosis = match excess_kurtosis(&late) {
        Ok(k) => Some(k),
        Err(MetricError::ZeroVariance) => None,
        Err(e) => return Err(wrap(e)),
    };
    Ok(MetricReport {
        movie_id: seq.movie_id.clone(),
        mann_kendall_s: mk.s,
        mk_p_value: Some(mk.p_value),
        spearman_rho: rho,
        kurtosis_late: kurtosis,
        iqr_late: iqr(&late).map_err(wrap)?,
        n_trend: series.len(),
        l_window: late.len(),
    })
}

/// One report per completed movie, in record order.
pub fn analyze_run(
    record: &RunRecord,
    opts: AnalysisOptions,
) -> Result<Vec<MetricReport>, AnalysisError> {
    record
        .movie_sequences
        .iter()
        .map(|seq| analyze_sequence(seq, &record.config, opts))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MannKendallS,
    SpearmanRho,
    KurtosisLate,
    IqrLate,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::MannKendallS,
        Metric::SpearmanRho,
        Metric::KurtosisLate,
        Metric::IqrLate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::MannKendallS => "mann_kendall_s",
            Metric::SpearmanRho => "spearman_rho",
            Metric::KurtosisLate => "kurtosis_late",
            Metric::IqrLate => "iqr_late",
        }
    }

    pub fn value(self, report: &MetricReport) -> Option<f64> {
        match self {
            Metric::MannKendallS => Some(report.mann_kendall_s as f64),
            Metric::SpearmanRho => report.spearman_rho,
            Metric::KurtosisLate => report.kurtosis_late,
            Metric::IqrLate => Some(report.iqr_late),
        }
    }

    /// Histogram range: the metric's theoretical range, or the display
    /// range `[-3, 15]` for kurtosis.
    pub fn range(self, reports: &[MetricReport], scale: RatingScale) -> (f64, f64) {
        match self {
            Metric::MannKendallS => {
                let max = reports
                    .iter()
                    .map(MetricReport::max_abs_s)
                    .max()
                    .unwrap_or(1)
                    .max(1);
                (-(max as f64), max as f64)
            }
            Metric::SpearmanRho => (-1.0, 1.0),
            Metric::KurtosisLate => (-3.0, 15.0),
            Metric::IqrLate => (0.0, scale.max_f64() - 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub metric_name: String,
    /// Per movie; `None` for undefined values, which are not binned.
    pub values: Vec<(String, Option<f64>)>,
    pub histogram_bins: Vec<HistogramBin>,
}

pub const DEFAULT_BINS: usize = 20;

/// Equal-width histogram over `[lo, hi]`; out-of-range values are clipped
/// into the edge bins.
pub fn histogram_bins(
    values: impl IntoIterator<Item = f64>,
    lo: f64,
    hi: f64,
    bins: usize,
) -> Vec<HistogramBin> {
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            lo: lo + width * i as f64,
            hi: if i + 1 == bins {
                hi
            } else {
                lo + width * (i + 1) as f64
            },
            count: 0,
        })
        .collect();
    for v in values {
        let idx = if width > 0.0 {
            (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1)
        } else {
            0
        };
        out[idx].count += 1;
    }
    out
}

pub fn summarize(
    reports: &[MetricReport],
    metric: Metric,
    scale: RatingScale,
) -> DistributionSummary {
    let values: Vec<(String, Option<f64>)> = reports
        .iter()
        .map(|r| {
            (
                r.movie_id.clone(),
                metric.value(r).filter(|v| v.is_finite()),
            )
        })
        .collect();
    let (lo, hi) = metric.range(reports, scale);
    let histogram = histogram_bins(values.iter().filter_map(|(_, v)| *v), lo, hi, DEFAULT_BINS);
    DistributionSummary {
        metric_name: metric.name().to_string(),
        values,
        histogram_bins: histogram,
    }
}

pub fn summarize_all(reports: &[MetricReport], scale: RatingScale) -> Vec<DistributionSummary> {
    Metric::ALL
        .iter()
        .map(|&m| summarize(reports, m, scale))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub step: usize,
    pub pos: f64,
    pub neg: f64,
}

/// Cumulative positive/negative shares at every step of one movie.
pub fn case_series(
    record: &RunRecord,
    movie_id: &str,
    opts: AnalysisOptions,
) -> Result<Vec<CaseRow>, AnalysisError> {
    let seq = record
        .sequence(movie_id)
        .ok_or_else(|| AnalysisError::UnknownMovie(movie_id.to_string()))?;
    let (seq, _) = windowed(seq, opts);
    if seq.is_empty() {
        return Ok(Vec::new());
    }
    let series = mco_series(&seq, record.config.positive_threshold, 1).map_err(|source| {
        AnalysisError::Metric {
            movie_id: movie_id.to_string(),
            source,
        }
    })?;
    Ok(series
        .steps
        .iter()
        .map(|s| CaseRow {
            step: s.k,
            pos: s.pos,
            neg: s.neg,
        })
        .collect())
}

/// Lowercased alphanumeric runs of at least two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect()
}

/// Document frequencies over a corpus, with smoothed
/// `idf = ln((1 + D) / (1 + df)) + 1`.
#[derive(Debug, Clone, Default)]
pub struct IdfTable {
    docs: usize,
    df: HashMap<String, usize>,
}

impl IdfTable {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a str>) -> Self {
        let mut table = IdfTable::default();
        for doc in docs {
            table.docs += 1;
            let mut terms = tokenize(doc);
            terms.sort();
            terms.dedup();
            for t in terms {
                *table.df.entry(t).or_insert(0) += 1;
            }
        }
        table
    }

    /// Corpus of every persona description and every movie overview.
    pub fn for_corpus(personas: &[Persona], movies: &[MovieItem]) -> Self {
        Self::build(
            personas
                .iter()
                .map(|p| p.description.as_str())
                .chain(movies.iter().map(|m| m.overview.as_str())),
        )
    }

    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df.get(term).copied().unwrap_or(0);
        ((1 + self.docs) as f64 / (1 + df) as f64).ln() + 1.0
    }

    /// Raw-count TF times IDF.
    pub fn vector(&self, text: &str) -> BTreeMap<String, f64> {
        let mut tf: BTreeMap<String, f64> = BTreeMap::new();
        for t in tokenize(text) {
            *tf.entry(t).or_insert(0.0) += 1.0;
        }
        for (term, w) in tf.iter_mut() {
            *w *= self.idf(term);
        }
        tf
    }

    pub fn cosine(&self, a: &str, b: &str) -> f64 {
        let (va, vb) = (self.vector(a), self.vector(b));
        let norm = |v: &BTreeMap<String, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
        let (na, nb) = (norm(&va), norm(&vb));
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let dot: f64 = va
            .iter()
            .filter_map(|(t, x)| vb.get(t).map(|y| x * y))
            .sum();
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}

/// TF-IDF cosine similarity of a persona description and a movie overview.
pub fn semantic_match(persona: &Persona, movie: &MovieItem, idf: &IdfTable) -> f64 {
    idf.cosine(&persona.description, &movie.overview)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticMatchRecord {
    pub agent_id: String,
    pub persona_id: String,
    pub movie_id: String,
    pub match_score: f64,
    pub mean_rating_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchStudy {
    pub records: Vec<SemanticMatchRecord>,
    /// Spearman correlation of score against distance; `None` when fewer
    /// than two records or either column is constant.
    pub correlation: Option<f64>,
}

/// Semantic match versus deviation from the observed climate, one record
/// per (agent, movie).
pub fn match_vs_distance(
    record: &RunRecord,
    movies: &[MovieItem],
    personas: &[Persona],
) -> Result<MatchStudy, AnalysisError> {
    if !(record.config.use_persona && record.config.use_history) {
        return Err(AnalysisError::ScenarioMismatch);
    }
    let idf = IdfTable::for_corpus(personas, movies);
    let movie_by_id: HashMap<&str, &MovieItem> =
        movies.iter().map(|m| (m.movie_id.as_str(), m)).collect();
    let persona_by_id: HashMap<&str, &Persona> = personas
        .iter()
        .map(|p| (p.persona_id.as_str(), p))
        .collect();

    let mut records = Vec::new();
    for seq in &record.movie_sequences {
        let movie = *movie_by_id
            .get(seq.movie_id.as_str())
            .ok_or_else(|| AnalysisError::UnknownMovie(seq.movie_id.clone()))?;
        // agent -> (sum of distances, count), in first-appearance order
        let mut per_agent: Vec<(&str, f64, usize)> = Vec::new();
        let mut index: HashMap<&str, usize> = HashMap::new();
        for e in seq.events.iter().filter(|e| !e.is_warmup()) {
            let Some(h) = e.observed_history_avg else {
                continue;
            };
            let d = rating_distance(e.rating.get(), h);
            match index.get(e.agent_id.as_str()) {
                Some(&i) => {
                    per_agent[i].1 += d;
                    per_agent[i].2 += 1;
                }
                None => {
                    index.insert(&e.agent_id, per_agent.len());
                    per_agent.push((&e.agent_id, d, 1));
                }
            }
        }
        for (agent_id, sum, count) in per_agent {
            let persona_id = record
                .persona_assignment
                .get(agent_id)
                .ok_or_else(|| AnalysisError::UnassignedAgent(agent_id.to_string()))?;
            let persona = *persona_by_id
                .get(persona_id.as_str())
                .ok_or_else(|| AnalysisError::UnknownPersona(persona_id.clone()))?;
            records.push(SemanticMatchRecord {
                agent_id: agent_id.to_string(),
                persona_id: persona_id.clone(),
                movie_id: seq.movie_id.clone(),
                match_score: semantic_match(persona, movie, &idf),
                mean_rating_distance: sum / count as f64,
            });
        }
    }
    let scores: Vec<f64> = records.iter().map(|r| r.match_score).collect();
    let dists: Vec<f64> = records.iter().map(|r| r.mean_rating_distance).collect();
    let correlation = spearman_corr(&scores, &dists).ok();
    Ok(MatchStudy {
        records,
        correlation,
    })
}
