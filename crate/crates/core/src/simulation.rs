//! Sequential rating protocol and experiment orchestration.
//!
//! Per movie: `m` uniform warm-up ratings, then every agent of the roster
//! in a seeded random order. Each agent sees the running mean of all prior
//! visible ratings, submits `samples_per_agent` integer samples, and their
//! mean is appended to the history.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, SecondsFormat, Utc};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentContext, AgentError, RatingAgent};
use crate::aggregation::format_climate_for_prompt;
use crate::model::{
    mean_of_samples, validate_config, MovieItem, Persona, RatingEvent, RatingSequence, RatingValue,
    Scenario, ScenarioConfig, ValidationReport, WARMUP_AGENT,
};
use crate::seed::rng_for;

pub use crate::seed::derive_seed;

pub const FORMAT_VERSION: u32 = 1;
pub const WARMUP_DISTRIBUTION: &str = "uniform";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config:\n{0}")]
    InvalidConfig(ValidationReport),
    #[error("personas: use_persona with population_n = {needed} needs at least {needed} personas, got {available}")]
    InsufficientPersonas { needed: usize, available: usize },
    #[error("duplicate {kind} id {id:?}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("backend {actual} does not match backend_id {expected}")]
    BackendMismatch { expected: String, actual: String },
    #[error("roster has {got} agents, population_n is {expected}")]
    RosterSize { expected: usize, got: usize },
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

/// An agent failure while rating one movie.
#[derive(Debug, Error)]
#[error("movie {movie_id}, step {step_index}: {source}")]
pub struct MovieError {
    pub movie_id: String,
    pub step_index: usize,
    #[source]
    pub source: AgentError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MovieFailure {
    pub movie_id: String,
    pub step_index: Option<usize>,
    pub error: String,
}

/// One member of the agent population.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSlot {
    pub agent_id: String,
    pub persona: Option<Persona>,
}

/// Complete, replayable output of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub format_version: u32,
    pub config: ScenarioConfig,
    pub movie_sequences: Vec<RatingSequence>,
    pub agent_order_per_movie: BTreeMap<String, Vec<String>>,
    pub persona_assignment: BTreeMap<String, String>,
    pub created_at: String,
    pub warmup_distribution: String,
    pub failures: Vec<MovieFailure>,
}

impl RunRecord {
    pub fn sequence(&self, movie_id: &str) -> Option<&RatingSequence> {
        self.movie_sequences.iter().find(|s| s.movie_id == movie_id)
    }

    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Current UTC time, or `SOURCE_DATE_EPOCH` when set so that repeated runs
/// can produce identical manifests.
pub fn now_timestamp() -> String {
    let now: DateTime<Utc> = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::from_timestamp(secs, 0))
        .unwrap_or_else(Utc::now);
    now.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// `warmup_m` warm-up events with ratings uniform on `1..=M`.
pub fn generate_warmups(cfg: &ScenarioConfig, movie_id: &str) -> Vec<RatingEvent> {
    let domain = format!("warmup:{movie_id}");
    (0..cfg.warmup_m)
        .map(|i| {
            let seed = derive_seed(cfg.master_seed, &domain, i as u64);
            let level = rng_for(seed).random_range(1..=cfg.scale.levels_max());
            RatingEvent {
                movie_id: movie_id.to_string(),
                step_index: i,
                agent_id: WARMUP_AGENT.to_string(),
                rating: RatingValue::from_level(level),
                raw_samples: vec![level],
                observed_history_avg: None,
                rng_seed: seed,
            }
        })
        .collect()
}

fn agent_id_width(n: usize) -> usize {
    n.saturating_sub(1).to_string().len().max(3)
}

/// Builds the population: `agent_000..`, each with a persona when the
/// scenario uses them. Personas are sorted by id, shuffled with the master
/// seed, and the first `population_n` are assigned in agent order.
pub fn build_roster(
    cfg: &ScenarioConfig,
    personas: &[Persona],
) -> Result<Vec<AgentSlot>, SimError> {
    let n = cfg.population_n;
    let width = agent_id_width(n);
    let ids = (0..n).map(|i| format!("agent_{i:0width$}"));
    if !cfg.use_persona {
        return Ok(ids
            .map(|agent_id| AgentSlot {
                agent_id,
                persona: None,
            })
            .collect());
    }
    let mut seen = BTreeSet::new();
    for p in personas {
        if !seen.insert(p.persona_id.as_str()) {
            return Err(SimError::DuplicateId {
                kind: "persona",
                id: p.persona_id.clone(),
            });
        }
    }
    if personas.len() < n {
        return Err(SimError::InsufficientPersonas {
            needed: n,
            available: personas.len(),
        });
    }
    let mut pool: Vec<&Persona> = personas.iter().collect();
    pool.sort_by(|a, b| a.persona_id.cmp(&b.persona_id));
    pool.shuffle(&mut rng_for(derive_seed(cfg.master_seed, "personas", 0)));
    Ok(ids
        .zip(pool)
        .map(|(agent_id, persona)| AgentSlot {
            agent_id,
            persona: Some(persona.clone()),
        })
        .collect())
}

/// Seeded rating order for one movie. Independent of the input order.
pub fn agent_order(cfg: &ScenarioConfig, movie_id: &str, roster: &[AgentSlot]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..roster.len()).collect();
    idx.sort_by(|&a, &b| roster[a].agent_id.cmp(&roster[b].agent_id));
    let seed = derive_seed(cfg.master_seed, &format!("order:{movie_id}"), 0);
    idx.shuffle(&mut rng_for(seed));
    idx
}

/// Runs the sequential protocol for one movie.
pub fn run_movie(
    cfg: &ScenarioConfig,
    movie: &MovieItem,
    roster: &[AgentSlot],
    agent: &dyn RatingAgent,
) -> Result<(RatingSequence, Vec<String>), MovieError> {
    let mut events = generate_warmups(cfg, &movie.movie_id);
    let (mut visible_sum, mut visible_count) = if cfg.warmup_visible_to_agents {
        (
            events.iter().map(|e| e.rating.get()).sum::<f64>(),
            events.len(),
        )
    } else {
        (0.0, 0)
    };
    let order = agent_order(cfg, &movie.movie_id, roster);
    let agent_domain = format!("agent:{}", movie.movie_id);

    for &slot_idx in &order {
        let slot = &roster[slot_idx];
        let step_index = events.len();
        let seed = derive_seed(cfg.master_seed, &agent_domain, step_index as u64);
        let history =
            (cfg.use_history && visible_count > 0).then(|| visible_sum / visible_count as f64);
        let ctx = AgentContext {
            movie,
            persona: if cfg.use_persona {
                slot.persona.as_ref()
            } else {
                None
            },
            history_avg_display: history
                .map(|h| format_climate_for_prompt(h, cfg.history_display_decimals)),
            history_avg: history,
            scale: cfg.scale,
            rng_seed: seed,
        };
        // An empty visible history means the history line is left out.
        let scenario = Scenario {
            use_history: history.is_some(),
            use_persona: cfg.use_persona,
        };
        let samples = agent
            .rate(&ctx, scenario, cfg.samples_per_agent)
            .map_err(|source| MovieError {
                movie_id: movie.movie_id.clone(),
                step_index,
                source,
            })?;
        let rating = mean_of_samples(&samples);
        events.push(RatingEvent {
            movie_id: movie.movie_id.clone(),
            step_index,
            agent_id: slot.agent_id.clone(),
            rating: RatingValue::new(rating, cfg.scale).ok_or_else(|| MovieError {
                movie_id: movie.movie_id.clone(),
                step_index,
                source: AgentError::NoRatingFound {
                    text: format!("{samples:?}"),
                    max: cfg.scale.levels_max(),
                },
            })?,
            raw_samples: samples,
            observed_history_avg: history,
            rng_seed: seed,
        });
        visible_sum += rating;
        visible_count += 1;
    }

    let order_ids = order.iter().map(|&i| roster[i].agent_id.clone()).collect();
    Ok((
        RatingSequence {
            movie_id: movie.movie_id.clone(),
            warmup_len: cfg.warmup_m,
            events,
        },
        order_ids,
    ))
}

/// Runs every movie and assembles the record. Movies that fail are listed
/// in `failures` and left out of `movie_sequences`.
pub fn run_experiment(
    cfg: &ScenarioConfig,
    movies: &[MovieItem],
    personas: &[Persona],
    agent: &dyn RatingAgent,
) -> Result<RunRecord, SimError> {
    let report = validate_config(cfg);
    if !report.passed() {
        return Err(SimError::InvalidConfig(report));
    }
    let actual = agent.backend_id();
    if actual != cfg.backend_id {
        return Err(SimError::BackendMismatch {
            expected: cfg.backend_id.clone(),
            actual,
        });
    }
    let mut seen = BTreeSet::new();
    for m in movies {
        if !seen.insert(m.movie_id.as_str()) {
            return Err(SimError::DuplicateId {
                kind: "movie",
                id: m.movie_id.clone(),
            });
        }
    }
    let roster = build_roster(cfg, personas)?;
    if roster.len() != cfg.population_n {
        return Err(SimError::RosterSize {
            expected: cfg.population_n,
            got: roster.len(),
        });
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| SimError::Pool(e.to_string()))?;
    let outcomes: Vec<_> = pool.install(|| {
        movies
            .par_iter()
            .map(|movie| run_movie(cfg, movie, &roster, agent))
            .collect()
    });

    let mut movie_sequences = Vec::new();
    let mut agent_order_per_movie = BTreeMap::new();
    let mut failures = Vec::new();
    for (movie, outcome) in movies.iter().zip(outcomes) {
        match outcome {
            Ok((seq, order)) => {
                agent_order_per_movie.insert(movie.movie_id.clone(), order);
                movie_sequences.push(seq);
            }
            Err(e) => failures.push(MovieFailure {
                movie_id: movie.movie_id.clone(),
                step_index: Some(e.step_index),
                error: e.source.to_string(),
            }),
        }
    }
    let persona_assignment = roster
        .iter()
        .filter_map(|slot| {
            slot.persona
                .as_ref()
                .map(|p| (slot.agent_id.clone(), p.persona_id.clone()))
        })
        .collect();

    Ok(RunRecord {
        format_version: FORMAT_VERSION,
        config: cfg.clone(),
        movie_sequences,
        agent_order_per_movie,
        persona_assignment,
        created_at: now_timestamp(),
        warmup_distribution: WARMUP_DISTRIBUTION.to_string(),
        failures,
    })
}

/// A record-level invariant that does not hold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditFinding {
    pub movie_id: String,
    pub step_index: Option<usize>,
    pub message: String,
}

/// Checks a record after the fact: sequence structure, sample means,
/// that every shown history value is the mean of all strictly prior
/// visible ratings (within `1e-12`), and that agent orders are
/// permutations of one roster.
pub fn audit_record(record: &RunRecord) -> Vec<AuditFinding> {
    let cfg = &record.config;
    let mut findings = Vec::new();
    let mut roster: Option<BTreeSet<&str>> = None;
    for seq in &record.movie_sequences {
        let mut finding = |step_index: Option<usize>, message: String| {
            findings.push(AuditFinding {
                movie_id: seq.movie_id.clone(),
                step_index,
                message,
            })
        };
        if let Err(msg) = seq.check(cfg.scale) {
            finding(None, msg);
            continue;
        }
        if seq.len() != cfg.sequence_len() || seq.warmup_len != cfg.warmup_m {
            finding(
                None,
                format!(
                    "length {} / warm-ups {} do not match config ({} / {})",
                    seq.len(),
                    seq.warmup_len,
                    cfg.sequence_len(),
                    cfg.warmup_m
                ),
            );
        }
        let mut visible: Vec<f64> = Vec::new();
        for e in &seq.events {
            if e.is_warmup() {
                if cfg.warmup_visible_to_agents {
                    visible.push(e.rating.get());
                }
                continue;
            }
            if e.raw_samples.len() != cfg.samples_per_agent {
                finding(
                    Some(e.step_index),
                    format!(
                        "{} samples, expected {}",
                        e.raw_samples.len(),
                        cfg.samples_per_agent
                    ),
                );
            }
            let expected = (cfg.use_history && !visible.is_empty())
                .then(|| visible.iter().sum::<f64>() / visible.len() as f64);
            match (expected, e.observed_history_avg) {
                (None, None) => {}
                (Some(want), Some(got)) if (want - got).abs() <= 1e-12 => {}
                (want, got) => finding(
                    Some(e.step_index),
                    format!("observed_history_avg {got:?}, expected {want:?}"),
                ),
            }
            visible.push(e.rating.get());
        }
        let agents: BTreeSet<&str> = seq
            .events
            .iter()
            .filter(|e| !e.is_warmup())
            .map(|e| e.agent_id.as_str())
            .collect();
        if agents.len() != cfg.population_n {
            finding(
                None,
                format!(
                    "{} distinct agents, expected {}",
                    agents.len(),
                    cfg.population_n
                ),
            );
        }
        match &roster {
            None => roster = Some(agents),
            Some(r) if *r != agents => finding(None, "agent set differs from other movies".into()),
            Some(_) => {}
        }
        if let Some(order) = record.agent_order_per_movie.get(&seq.movie_id) {
            let in_seq: Vec<&str> = seq
                .events
                .iter()
                .filter(|e| !e.is_warmup())
                .map(|e| e.agent_id.as_str())
                .collect();
            if order.iter().map(String::as_str).ne(in_seq.iter().copied()) {
                finding(None, "agent order does not match the sequence".into());
            }
        } else {
            finding(None, "no agent order recorded".into());
        }
    }
    findings
}
