//! Shared domain types: rating scale, rating events and sequences, movies,
//! personas and the scenario configuration, plus config validation.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

/// Agent id recorded on warm-up events.
pub const WARMUP_AGENT: &str = "WARMUP";

/// Number of cardinal rating levels `M`; valid integer ratings are `1..=M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RatingScale(u32);

impl RatingScale {
    pub const DEFAULT: RatingScale = RatingScale(10);

    /// Returns `None` when `levels_max < 2`.
    pub fn new(levels_max: u32) -> Option<Self> {
        (levels_max >= 2).then_some(RatingScale(levels_max))
    }

    pub fn levels_max(self) -> u32 {
        self.0
    }

    pub fn max_f64(self) -> f64 {
        f64::from(self.0)
    }

    pub fn contains_level(self, level: u32) -> bool {
        (1..=self.0).contains(&level)
    }

    pub fn contains(self, value: f64) -> bool {
        value.is_finite() && (1.0..=self.max_f64()).contains(&value)
    }

    pub fn levels(self) -> impl Iterator<Item = u32> {
        1..=self.0
    }
}

impl Default for RatingScale {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Round half-up to the nearest integer: `floor(x + 0.5)`.
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// A rating on `[1, M]`. Single samples are integral; averaged samples may
/// be fractional.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RatingValue(f64);

impl RatingValue {
    pub fn new(value: f64, scale: RatingScale) -> Option<Self> {
        scale.contains(value).then_some(RatingValue(value))
    }

    pub fn from_level(level: u32) -> Self {
        RatingValue(f64::from(level))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// Integer level this rating falls into (half-up rounding).
    pub fn level(self) -> u32 {
        round_half_up(self.0) as u32
    }
}

impl fmt::Display for RatingValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Mean of integer samples; the rating recorded for a multi-sample event.
pub fn mean_of_samples(samples: &[u32]) -> f64 {
    let sum: u64 = samples.iter().map(|&s| u64::from(s)).sum();
    sum as f64 / samples.len() as f64
}

/// One agent's rating of one movie at one position in the sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingEvent {
    pub movie_id: String,
    pub step_index: usize,
    pub agent_id: String,
    pub rating: RatingValue,
    pub raw_samples: Vec<u32>,
    /// Climate value shown to the agent; absent when no history was shown.
    pub observed_history_avg: Option<f64>,
    pub rng_seed: u64,
}

impl RatingEvent {
    pub fn is_warmup(&self) -> bool {
        self.agent_id == WARMUP_AGENT
    }

    /// Checks the per-event invariants against `scale`.
    pub fn check(&self, scale: RatingScale) -> Result<(), String> {
        if self.raw_samples.is_empty() {
            return Err("raw_samples is empty".into());
        }
        if let Some(bad) = self.raw_samples.iter().find(|s| !scale.contains_level(**s)) {
            return Err(format!("sample {bad} outside 1..={}", scale.levels_max()));
        }
        if !scale.contains(self.rating.get()) {
            return Err(format!(
                "rating {} outside [1, {}]",
                self.rating,
                scale.levels_max()
            ));
        }
        let mean = mean_of_samples(&self.raw_samples);
        if (mean - self.rating.get()).abs() > 1e-12 {
            return Err(format!(
                "rating {} is not the mean of raw_samples ({mean})",
                self.rating
            ));
        }
        if self.is_warmup() {
            if self.raw_samples.len() != 1 {
                return Err("warm-up event must carry exactly one sample".into());
            }
            if self.observed_history_avg.is_some() {
                return Err("warm-up event must not carry observed_history_avg".into());
            }
        }
        if let Some(h) = self.observed_history_avg {
            if !h.is_finite() {
                return Err("observed_history_avg is not finite".into());
            }
        }
        Ok(())
    }
}

/// Ordered ratings for one movie, warm-up prefix first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingSequence {
    pub movie_id: String,
    pub warmup_len: usize,
    pub events: Vec<RatingEvent>,
}

impl RatingSequence {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn ratings(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.rating.get()).collect()
    }

    /// The agent-only part of the sequence, re-indexed from step 0.
    pub fn without_warmups(&self) -> RatingSequence {
        let events = self
            .events
            .iter()
            .skip(self.warmup_len)
            .enumerate()
            .map(|(i, e)| RatingEvent {
                step_index: i,
                ..e.clone()
            })
            .collect();
        RatingSequence {
            movie_id: self.movie_id.clone(),
            warmup_len: 0,
            events,
        }
    }

    /// Structural invariants: warm-up prefix, gap-free step indices, one
    /// movie id, and every event's own invariants.
    pub fn check(&self, scale: RatingScale) -> Result<(), String> {
        if self.warmup_len > self.events.len() {
            return Err(format!(
                "warmup_len {} exceeds sequence length {}",
                self.warmup_len,
                self.events.len()
            ));
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.step_index != i {
                return Err(format!("event {i} has step_index {}", e.step_index));
            }
            if e.movie_id != self.movie_id {
                return Err(format!("event {i} belongs to movie {}", e.movie_id));
            }
            if (i < self.warmup_len) != e.is_warmup() {
                return Err(format!(
                    "event {i} is misplaced relative to the warm-up prefix"
                ));
            }
            e.check(scale).map_err(|msg| format!("event {i}: {msg}"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovieItem {
    pub movie_id: String,
    pub title: String,
    pub genres: Vec<String>,
    pub overview: String,
    pub release_date: String,
    /// Informational only; never shown to agents.
    #[serde(default)]
    pub external_avg: Option<f64>,
}

impl MovieItem {
    pub fn check(&self) -> Result<(), String> {
        if self.movie_id.is_empty() {
            return Err("movie_id is empty".into());
        }
        if self.title.trim().is_empty() {
            return Err("title is empty".into());
        }
        if self.overview.trim().is_empty() {
            return Err("overview is empty".into());
        }
        if !is_iso_date(&self.release_date) {
            return Err(format!(
                "release_date {:?} is not YYYY-MM-DD",
                self.release_date
            ));
        }
        Ok(())
    }
}

fn is_iso_date(s: &str) -> bool {
    chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d").is_ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Persona {
    pub persona_id: String,
    pub description: String,
}

impl Persona {
    pub fn check(&self) -> Result<(), String> {
        if self.persona_id.is_empty() {
            return Err("persona_id is empty".into());
        }
        if self.description.trim().is_empty() {
            return Err("description is empty".into());
        }
        Ok(())
    }
}

/// Which of the two social signals agents receive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scenario {
    pub use_history: bool,
    pub use_persona: bool,
}

impl Scenario {
    /// History + Persona.
    pub const I: Scenario = Scenario {
        use_history: true,
        use_persona: true,
    };
    /// History only.
    pub const II: Scenario = Scenario {
        use_history: true,
        use_persona: false,
    };
    /// Persona only.
    pub const III: Scenario = Scenario {
        use_history: false,
        use_persona: true,
    };
    /// Neither signal.
    pub const IV: Scenario = Scenario {
        use_history: false,
        use_persona: false,
    };

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "I" | "1" => Some(Self::I),
            "II" | "2" => Some(Self::II),
            "III" | "3" => Some(Self::III),
            "IV" | "4" => Some(Self::IV),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match (self.use_history, self.use_persona) {
            (true, true) => "I",
            (true, false) => "II",
            (false, true) => "III",
            (false, false) => "IV",
        }
    }
}

/// Behaviour family of a synthetic agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    PositivityPrior,
    PersonaPrior,
    Conformist,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::PositivityPrior => "positivity_prior",
            PolicyKind::PersonaPrior => "persona_prior",
            PolicyKind::Conformist => "conformist",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "positivity_prior" => Some(PolicyKind::PositivityPrior),
            "persona_prior" => Some(PolicyKind::PersonaPrior),
            "conformist" => Some(PolicyKind::Conformist),
            _ => None,
        }
    }
}

/// Parameters of a synthetic rating policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticPolicy {
    pub kind: PolicyKind,
    /// Fixed rating for the positivity prior; persona centre for the others.
    pub base_rating: f64,
    /// Weight on the displayed history average (conformist only).
    pub conformity_weight: f64,
    pub noise_sd: f64,
    pub persona_hash_spread: f64,
}

impl Default for SyntheticPolicy {
    fn default() -> Self {
        SyntheticPolicy {
            kind: PolicyKind::PositivityPrior,
            base_rating: 8.0,
            conformity_weight: 0.0,
            noise_sd: 0.0,
            persona_hash_spread: 0.0,
        }
    }
}

impl SyntheticPolicy {
    pub fn positivity_prior(base_rating: f64, noise_sd: f64) -> Self {
        SyntheticPolicy {
            kind: PolicyKind::PositivityPrior,
            base_rating,
            noise_sd,
            ..Default::default()
        }
    }

    pub fn persona_prior(center: f64, spread: f64, noise_sd: f64) -> Self {
        SyntheticPolicy {
            kind: PolicyKind::PersonaPrior,
            base_rating: center,
            noise_sd,
            persona_hash_spread: spread,
            ..Default::default()
        }
    }

    pub fn conformist(center: f64, spread: f64, weight: f64, noise_sd: f64) -> Self {
        SyntheticPolicy {
            kind: PolicyKind::Conformist,
            base_rating: center,
            conformity_weight: weight,
            noise_sd,
            persona_hash_spread: spread,
        }
    }
}

/// Connection settings for an OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmBackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub timeout_ms: u64,
    /// Name of the environment variable holding the bearer token. When the
    /// variable is unset no Authorization header is sent.
    pub auth_token_env_var: String,
    /// Upper bound on concurrent requests across all movies.
    pub max_in_flight: usize,
}

impl Default for LlmBackendConfig {
    fn default() -> Self {
        LlmBackendConfig {
            endpoint_url: "http://127.0.0.1:8080/v1/chat/completions".into(),
            model_name: "gpt-4o-mini".into(),
            temperature: 0.1,
            max_retries: 2,
            timeout_ms: 60_000,
            auth_token_env_var: "OPENAI_API_KEY".into(),
            max_in_flight: 4,
        }
    }
}

/// Backend selector parsed from `backend_id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendId {
    Synthetic(PolicyKind),
    Llm,
}

impl BackendId {
    pub fn parse(s: &str) -> Option<Self> {
        if s == "llm" {
            return Some(BackendId::Llm);
        }
        let kind = s.strip_prefix("synthetic:")?;
        PolicyKind::parse(kind).map(BackendId::Synthetic)
    }
}

impl fmt::Display for BackendId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendId::Synthetic(kind) => write!(f, "synthetic:{}", kind.as_str()),
            BackendId::Llm => f.write_str("llm"),
        }
    }
}

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub use_history: bool,
    pub use_persona: bool,
    #[serde(rename = "levels_max")]
    pub scale: RatingScale,
    pub population_n: usize,
    pub warmup_m: usize,
    pub late_window_l: usize,
    pub samples_per_agent: usize,
    /// Ratings rounding to at least this value are positive.
    pub positive_threshold: f64,
    pub master_seed: u64,
    pub backend_id: String,
    pub history_display_decimals: usize,
    pub warmup_visible_to_agents: bool,
    pub synthetic: Option<SyntheticPolicy>,
    pub llm: Option<LlmBackendConfig>,
    pub jobs: usize,
    pub audit: bool,
    pub movies_path: Option<PathBuf>,
    pub personas_path: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Analyze agent ratings only, dropping the warm-up prefix.
    pub exclude_warmups_from_analysis: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            use_history: true,
            use_persona: true,
            scale: RatingScale::DEFAULT,
            population_n: 100,
            warmup_m: 10,
            late_window_l: 30,
            samples_per_agent: 3,
            positive_threshold: 6.0,
            master_seed: 0,
            backend_id: "synthetic:positivity_prior".into(),
            history_display_decimals: 1,
            warmup_visible_to_agents: true,
            synthetic: None,
            llm: None,
            jobs: 1,
            audit: false,
            movies_path: None,
            personas_path: None,
            out_dir: None,
            exclude_warmups_from_analysis: false,
        }
    }
}

impl ScenarioConfig {
    pub fn scenario(&self) -> Scenario {
        Scenario {
            use_history: self.use_history,
            use_persona: self.use_persona,
        }
    }

    pub fn set_scenario(&mut self, scenario: Scenario) {
        self.use_history = scenario.use_history;
        self.use_persona = scenario.use_persona;
    }

    pub fn backend(&self) -> Option<BackendId> {
        BackendId::parse(&self.backend_id)
    }

    /// Synthetic parameters for the configured kind; defaults when the
    /// `synthetic` block is absent.
    pub fn synthetic_policy(&self) -> Option<SyntheticPolicy> {
        match self.backend()? {
            BackendId::Synthetic(kind) => {
                let mut policy = self.synthetic.clone().unwrap_or_default();
                if self.synthetic.is_none() {
                    policy.kind = kind;
                }
                Some(policy)
            }
            BackendId::Llm => None,
        }
    }

    /// Total events per movie sequence.
    pub fn sequence_len(&self) -> usize {
        self.population_n + self.warmup_m
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn fields(&self) -> Vec<&str> {
        self.violations.iter().map(|v| v.field.as_str()).collect()
    }

    fn push(&mut self, field: &str, message: impl Into<String>) {
        self.violations.push(Violation {
            field: field.to_string(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return f.write_str("config OK");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{}: {}", v.field, v.message)?;
        }
        Ok(())
    }
}

/// Checks every config invariant and reports all violations at once.
pub fn validate_config(cfg: &ScenarioConfig) -> ValidationReport {
    let mut report = ValidationReport::default();
    let m_max = cfg.scale.levels_max();

    if m_max < 2 {
        report.push("levels_max", format!("must be at least 2, got {m_max}"));
    }
    if cfg.population_n == 0 {
        report.push("population_n", "must be positive");
    }
    if cfg.late_window_l == 0 {
        report.push("late_window_l", "must be positive");
    } else if cfg.late_window_l > cfg.population_n + cfg.warmup_m {
        report.push(
            "late_window_l",
            format!(
                "{} exceeds population_n + warmup_m = {}",
                cfg.late_window_l,
                cfg.population_n + cfg.warmup_m
            ),
        );
    }
    if cfg.samples_per_agent == 0 {
        report.push("samples_per_agent", "must be positive");
    }
    let t = cfg.positive_threshold;
    if !(t.is_finite() && t > 1.0 && t <= f64::from(m_max)) {
        report.push("positive_threshold", format!("{t} is outside (1, {m_max}]"));
    }
    if cfg.jobs == 0 {
        report.push("jobs", "must be positive");
    }

    match cfg.backend() {
        None => report.push(
            "backend_id",
            format!(
                "{:?} is not one of llm, synthetic:positivity_prior, synthetic:persona_prior, synthetic:conformist",
                cfg.backend_id
            ),
        ),
        Some(BackendId::Llm) => match &cfg.llm {
            None => report.push("llm", "backend llm requires an llm block"),
            Some(llm) => {
                if !(llm.temperature.is_finite() && llm.temperature >= 0.0) {
                    report.push("llm.temperature", "must be >= 0");
                }
                if llm.timeout_ms == 0 {
                    report.push("llm.timeout_ms", "must be positive");
                }
                if llm.max_in_flight == 0 {
                    report.push("llm.max_in_flight", "must be positive");
                }
                if llm.endpoint_url.is_empty() {
                    report.push("llm.endpoint_url", "must not be empty");
                }
            }
        },
        Some(BackendId::Synthetic(kind)) => {
            let policy = cfg.synthetic_policy().unwrap_or_default();
            if policy.kind != kind {
                report.push(
                    "synthetic.kind",
                    format!(
                        "{} does not match backend_id {}",
                        policy.kind.as_str(),
                        cfg.backend_id
                    ),
                );
            }
            let w = policy.conformity_weight;
            if !(0.0..=1.0).contains(&w) {
                report.push("synthetic.conformity_weight", format!("{w} is outside [0, 1]"));
            }
            if !(policy.noise_sd.is_finite() && policy.noise_sd >= 0.0) {
                report.push("synthetic.noise_sd", "must be >= 0");
            }
            if !(policy.persona_hash_spread.is_finite() && policy.persona_hash_spread >= 0.0) {
                report.push("synthetic.persona_hash_spread", "must be >= 0");
            }
            if !policy.base_rating.is_finite() {
                report.push("synthetic.base_rating", "must be finite");
            }
            if kind == PolicyKind::Conformist {
                if !cfg.use_history {
                    report.push("use_history", "conformist agents need the history signal");
                } else if !cfg.warmup_visible_to_agents || cfg.warmup_m == 0 {
                    report.push(
                        "warmup_visible_to_agents",
                        "conformist agents need visible warm-ups so the first agent has a history",
                    );
                }
            }
        }
    }
    report
}
