use rand_distr::{Distribution, Normal};

use super::{AgentContext, AgentError, RatingAgent};
use crate::model::{round_half_up, PolicyKind, Scenario, SyntheticPolicy};
use crate::seed::{derive_seed, rng_for, unit_hash};

/// Persona-specific centre: `base_rating + spread * u`, `u` in `[-1, 1]`
/// from a stable hash of the persona id. Without a persona `u = 0`.
pub fn persona_base(policy: &SyntheticPolicy, persona_id: Option<&str>) -> f64 {
    let u = persona_id.map(unit_hash).unwrap_or(0.0);
    policy.base_rating + policy.persona_hash_spread * u
}

/// One deterministic synthetic rating for `ctx`.
pub fn synthetic_rate(policy: &SyntheticPolicy, ctx: &AgentContext<'_>) -> Result<u32, AgentError> {
    let persona_id = ctx.persona.map(|p| p.persona_id.as_str());
    let target = match policy.kind {
        PolicyKind::PositivityPrior => policy.base_rating,
        PolicyKind::PersonaPrior => persona_base(policy, persona_id),
        PolicyKind::Conformist => {
            let history = ctx.history_avg.ok_or(AgentError::MissingHistory)?;
            let w = policy.conformity_weight;
            (1.0 - w) * persona_base(policy, persona_id) + w * history
        }
    };
    let noisy = if policy.noise_sd > 0.0 {
        let normal = Normal::new(0.0, policy.noise_sd).expect("noise_sd validated as >= 0");
        target + normal.sample(&mut rng_for(ctx.rng_seed))
    } else {
        target
    };
    let max = ctx.scale.max_f64();
    Ok(round_half_up(noisy).clamp(1.0, max) as u32)
}

/// Synthetic policy behind the [`RatingAgent`] interface. Sample `s` of a
/// turn uses the seed `derive_seed(ctx.rng_seed, "sample", s)`.
#[derive(Debug, Clone)]
pub struct SyntheticAgent {
    pub policy: SyntheticPolicy,
}

impl SyntheticAgent {
    pub fn new(policy: SyntheticPolicy) -> Self {
        SyntheticAgent { policy }
    }
}

impl RatingAgent for SyntheticAgent {
    fn backend_id(&self) -> String {
        format!("synthetic:{}", self.policy.kind.as_str())
    }

    fn rate(
        &self,
        ctx: &AgentContext<'_>,
        _scenario: Scenario,
        n_samples: usize,
    ) -> Result<Vec<u32>, AgentError> {
        (0..n_samples as u64)
            .map(|s| {
                let sample_ctx = AgentContext {
                    rng_seed: derive_seed(ctx.rng_seed, "sample", s),
                    ..ctx.clone()
                };
                synthetic_rate(&self.policy, &sample_ctx)
            })
            .collect()
    }
}
