//! Rating agents: deterministic synthetic policies for offline runs and a
//! chat-completions backend for real language models.

mod llm;
mod parse;
mod prompt;
pub mod stub;
mod synthetic;

use thiserror::Error;

use crate::model::{MovieItem, Persona, RatingScale, Scenario};

pub use llm::{llm_rate, AuditLog, LlmAgent, LlmClient};
pub use parse::parse_rating;
pub use prompt::render_prompt;
pub use synthetic::{persona_base, synthetic_rate, SyntheticAgent};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("scenario uses personas but the agent has none")]
    MissingPersona,
    #[error("agent needs a history value but none was shown")]
    MissingHistory,
    #[error("no rating in 1..={max} found in {text:?}")]
    NoRatingFound { text: String, max: u32 },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("no parseable rating after {attempts} attempt(s); last reply {last:?}")]
    Parse { attempts: u32, last: String },
    #[error("endpoint rejected credentials (HTTP {status})")]
    Auth { status: u16 },
    #[error("audit log: {0}")]
    Audit(#[from] std::io::Error),
}

/// Everything one agent sees when rating one movie.
#[derive(Debug, Clone)]
pub struct AgentContext<'a> {
    pub movie: &'a MovieItem,
    pub persona: Option<&'a Persona>,
    /// Pre-formatted climate string shown in the prompt.
    pub history_avg_display: Option<String>,
    /// Unrounded climate value behind `history_avg_display`.
    pub history_avg: Option<f64>,
    pub scale: RatingScale,
    pub rng_seed: u64,
}

/// A source of ratings. Implementations must be pure functions of their
/// inputs apart from remote nondeterminism.
pub trait RatingAgent: Send + Sync {
    fn backend_id(&self) -> String;

    /// Returns `n_samples` independent integer ratings for one agent turn.
    fn rate(
        &self,
        ctx: &AgentContext<'_>,
        scenario: Scenario,
        n_samples: usize,
    ) -> Result<Vec<u32>, AgentError>;
}
